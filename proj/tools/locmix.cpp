#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "locmix/pipelines.hpp"
#include "locmix/rgo_grid.hpp"

using nlohmann::json;
using namespace locmix;
using locmix::detail::jnum;

namespace {

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char b[17];
  std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(v));
  return b;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Err::ParseError, "cannot read file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const json& need(const json& o, const char* k) {
  auto it = o.find(k);
  if (it == o.end()) throw Error(Err::ParseError, std::string("missing field '") + k + "'");
  return *it;
}

double numf(const json& o, const char* k) {
  const json& v = need(o, k);
  if (!v.is_number()) throw Error(Err::ParseError, std::string("field '") + k + "' must be a number");
  return v.get<double>();
}

int numi(const json& o, const char* k) {
  const json& v = need(o, k);
  if (!v.is_number_integer())
    throw Error(Err::ParseError, std::string("field '") + k + "' must be an integer");
  return v.get<int>();
}

Eigen::VectorXd vec_of(const json& a, const char* what) {
  if (!a.is_array()) throw Error(Err::ParseError, std::string(what) + " must be an array");
  Eigen::VectorXd v(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number())
      throw Error(Err::ParseError, std::string(what) + "[" + std::to_string(i) + "] must be a number");
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd mat_of(const json& a, const char* what) {
  if (!a.is_array() || a.empty())
    throw Error(Err::ParseError, std::string(what) + " must be a nonempty array of rows");
  size_t n = a.size();
  Eigen::MatrixXd m(n, n);
  for (size_t i = 0; i < n; ++i) {
    if (!a[i].is_array() || a[i].size() != n)
      throw Error(Err::ParseError, std::string(what) + " must be square");
    for (size_t j = 0; j < n; ++j) {
      if (!a[i][j].is_number()) throw Error(Err::ParseError, std::string(what) + " entries must be numbers");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j].get<double>();
    }
  }
  return m;
}

std::vector<std::pair<int, int>> edges_of(const json& a) {
  if (!a.is_array()) throw Error(Err::ParseError, "edges must be an array of pairs");
  std::vector<std::pair<int, int>> e;
  for (const auto& it : a) {
    if (!it.is_array() || it.size() != 2 || !it[0].is_number_integer() || !it[1].is_number_integer())
      throw Error(Err::ParseError, "each edge must be a pair of vertex indices");
    e.emplace_back(it[0].get<int>(), it[1].get<int>());
  }
  return e;
}

struct Model {
  std::string type;
  std::string name;
  bool is_grid = false;
  SpinMeasure sm;
  GridMeasure gm;
  bool has_graph = false;
  Graph graph;
  double beta = 0, lambda = 0;
  bool has_ising = false;
  IsingSpec ising;
  Eigen::VectorXd field;
};

Model parse_model(const json& spec, double tol_curv) {
  if (!spec.is_object()) throw Error(Err::ParseError, "model spec must be a JSON object");
  Model md;
  const json& tj = need(spec, "type");
  if (!tj.is_string()) throw Error(Err::ParseError, "model type must be a string");
  md.type = tj.get<std::string>();
  if (md.type == "ising") {
    md.ising.J = mat_of(need(spec, "J"), "J");
    int n = static_cast<int>(md.ising.J.rows());
    md.ising.field = spec.contains("field") ? vec_of(spec["field"], "field")
                                            : Eigen::VectorXd::Zero(n);
    if (md.ising.field.size() != n) throw Error(Err::ParseError, "field length mismatch");
    md.ising.negate_coupling = spec.value("negate", false);
    md.sm = build_ising(md.ising);
    md.has_ising = true;
    md.name = "ising-n" + std::to_string(n);
  } else if (md.type == "graph-ising") {
    int n = numi(spec, "n");
    md.graph = build_graph(n, edges_of(need(spec, "edges")));
    md.beta = numf(spec, "beta");
    md.field = spec.contains("field") ? vec_of(spec["field"], "field") : Eigen::VectorXd::Zero(n);
    if (md.field.size() != n) throw Error(Err::ParseError, "field length mismatch");
    md.sm = build_graph_ising(md.graph, md.beta, md.field);
    md.has_graph = true;
    md.name = "graph-ising-n" + std::to_string(n);
  } else if (md.type == "hardcore") {
    int n = numi(spec, "n");
    md.graph = build_graph(n, edges_of(need(spec, "edges")));
    md.lambda = numf(spec, "lambda");
    md.sm = build_hardcore({md.graph, md.lambda});
    md.has_graph = true;
    md.name = "hardcore-n" + std::to_string(n);
  } else if (md.type == "product") {
    Eigen::VectorXd b = vec_of(need(spec, "bias"), "bias");
    int n = static_cast<int>(b.size());
    if (n < 1 || n > 20) throw Error(Err::ParseError, "bias length out of range");
    for (int i = 0; i < n; ++i)
      if (std::abs(b[i]) > 1.0) throw Error(Err::ParseError, "bias entries must lie in [-1,1]");
    Eigen::VectorXd w(Eigen::Index(1) << n);
    for (uint32_t c = 0; c < (1u << n); ++c) {
      double p = 1;
      for (int i = 0; i < n; ++i) p *= (1.0 + spin_of_bit(c, i) * b[i]) / 2.0;
      w[c] = p;
    }
    md.sm = materialize(n, w);
    md.name = "product-n" + std::to_string(n);
  } else if (md.type == "explicit") {
    int n = numi(spec, "n");
    if (n < 1 || n > 20) throw Error(Err::ParseError, "n out of range");
    Eigen::VectorXd w = vec_of(need(spec, "weights"), "weights");
    if (w.size() != (Eigen::Index(1) << n))
      throw Error(Err::ParseError, "weights must have 2^n entries");
    md.sm = materialize(n, w);
    md.name = "explicit-n" + std::to_string(n);
  } else if (md.type == "grid") {
    const json& pj = need(spec, "potential");
    if (!pj.is_string()) throw Error(Err::ParseError, "potential must be a string");
    std::string pot = pj.get<std::string>();
    double mu = numf(spec, "mu");
    const json& iv = need(spec, "interval");
    if (!iv.is_array() || iv.size() != 2 || !iv[0].is_number() || !iv[1].is_number())
      throw Error(Err::ParseError, "interval must be [a, b]");
    int m = numi(spec, "m");
    std::function<double(double)> V;
    if (pot == "gaussian")
      V = [mu](double x) { return 0.5 * mu * x * x; };
    else if (pot == "quartic")
      V = [mu](double x) { return 0.5 * mu * x * x + x * x * x * x / 12.0; };
    else if (pot == "kink")
      V = [mu](double x) { return 0.5 * mu * x * x + std::abs(x); };
    else
      throw Error(Err::ParseError, "unknown potential '" + pot + "'");
    md.gm = discretize(V, mu, iv[0].get<double>(), iv[1].get<double>(), m, tol_curv);
    md.is_grid = true;
    md.name = "grid-" + pot + "-m" + std::to_string(m);
  } else {
    throw Error(Err::ParseError, "unknown model type '" + md.type + "'");
  }
  return md;
}

struct Run {
  std::string command;
  json model_spec;
  std::string model_stem;
  int64_t seed = 0;
  std::string out;
  std::string chain = "glauber", kind, scheme = "nf", pipeline;
  double eta = 1.0, horizon = -1;
  int l = 1, steps = -1, paths = -1;
  std::map<std::string, double> tol, budget;
  std::string hash;
};

const std::map<std::string, double> kTolDefaults = {{"curv", 1e-6}};
const std::map<std::string, double> kBudgetDefaults = {
    {"restarts", 30}, {"directions", 48}, {"rounds", 25}, {"paths", 2000}, {"fields", 50},
    {"grid", 11},     {"max-f", 12},      {"tmix-cap", 100000}};

double tolv(const Run& r, const std::string& k) {
  double dflt = kTolDefaults.at(k);
  auto it = r.tol.find(k);
  if (it == r.tol.end()) return dflt;
  if (it->second < dflt)
    throw Error(Err::ParseError, "tolerance '" + k + "' below the built-in default " + jnum(dflt));
  return it->second;
}

int bud(const Run& r, const std::string& k) {
  double dflt = kBudgetDefaults.at(k);
  auto it = r.budget.find(k);
  if (it == r.budget.end()) return static_cast<int>(dflt);
  if (it->second < 1) throw Error(Err::ParseError, "budget '" + k + "' must be at least 1");
  return static_cast<int>(it->second);
}

int exit_code_for(Err c) {
  switch (c) {
    case Err::ParseError:
    case Err::NegativeInput:
    case Err::AllZeroMass:
    case Err::IncompatiblePin:
    case Err::InvalidPinning:
    case Err::DomainError:
    case Err::NotDoobFinalScheme:
      return 2;
    case Err::BudgetExceeded:
    case Err::DimensionTooLarge:
    case Err::DegreeTooSmall:
    case Err::SubsetTooLarge:
    case Err::InsufficientSamples:
    case Err::NoFreeCoordinates:
    case Err::NotUnique:
    case Err::NotInUniquenessRegime:
    case Err::NotFerromagnetic:
    case Err::NotStronglyConvex:
    case Err::TailMass:
    case Err::PreconditionViolated:
    case Err::MaxIterations:
    case Err::Nonconvergence:
    case Err::StepTooLarge:
      return 3;
    default:
      return 4;
  }
}

void emit(const Run& r, const std::string& report) {
  if (!r.out.empty()) {
    std::ofstream f(r.out, std::ios::binary);
    if (!f) throw Error(Err::ParseError, "cannot write '" + r.out + "'");
    f << report;
  }
  std::cout << report;
}

std::string header(const Run& r) {
  std::ostringstream o;
  o << "{\"command\":\"" << r.command << "\",\"version\":\"" << lib_version
    << "\",\"config_hash\":\"" << r.hash << "\",\"seed\":" << r.seed;
  return o.str();
}

std::string model_summary(const Model& md) {
  std::ostringstream o;
  o << "{\"type\":\"" << md.type << "\"";
  if (md.is_grid)
    o << ",\"m\":" << md.gm.m() << ",\"mu\":" << jnum(md.gm.mu);
  else
    o << ",\"n\":" << md.sm.n << ",\"states\":" << kernel_support(md.sm).size();
  o << "}";
  return o.str();
}

// ---------------------------------------------------------------------- analyze

int grid_tmix(const GridKernel& gk, double eps, int cap) {
  int m = gk.gm.m();
  const Eigen::MatrixXd Pt = gk.k.P.transpose();
  int worst = 0;
  for (int s = 0; s < m; ++s) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(m);
    d[s] = 1.0;
    int t = 0;
    while (0.5 * (d - gk.k.pi).cwiseAbs().sum() > eps) {
      d = Pt * d;
      if (++t > cap) throw Error(Err::BudgetExceeded, "mixing-time cap hit");
    }
    worst = std::max(worst, t);
  }
  return worst;
}

int run_analyze(const Run& r, const Model& md) {
  std::ostringstream o;
  o << header(r) << ",\"model\":" << model_summary(md) << ",\"chain\":\"" << r.chain << "\"";
  const std::vector<double> eps_list{0.25, 0.125, 0.0625};
  int restarts = bud(r, "restarts");
  if (md.is_grid) {
    if (r.chain != "rgd")
      throw Error(Err::ParseError, "grid models run the rgd chain; got '" + r.chain + "'");
    GridKernel gk = rgd_kernel(md.gm, r.eta);
    SpectralReport sr = spectral_gap(gk.k);
    MlsiEstimate me = mlsi_adversarial(gk.k, restarts, static_cast<uint64_t>(r.seed));
    o << ",\"eta\":" << jnum(r.eta) << ",\"gap\":" << jnum(sr.gap);
    o << ",\"eigenvalues_top\":[";
    int top = std::min<int>(6, static_cast<int>(sr.eigenvalues.size()));
    for (int i = 0; i < top; ++i) o << (i ? "," : "") << jnum(sr.eigenvalues[i]);
    o << "]";
    o << ",\"mlsi_upper\":" << jnum(me.upper) << ",\"mlsi_restarts\":" << restarts;
    double logeta = std::log(1.0 / gk.k.pi.minCoeff());
    o << ",\"tmix\":[";
    for (size_t i = 0; i < eps_list.size(); ++i) {
      int t = grid_tmix(gk, eps_list[i], bud(r, "tmix-cap"));
      double bound = (logeta + std::log(1.0 / eps_list[i])) / sr.gap;
      o << (i ? "," : "") << "{\"eps\":" << jnum(eps_list[i]) << ",\"t\":" << t
        << ",\"fact_bound\":" << jnum(bound) << ",\"ratio\":" << jnum(t / bound) << "}";
    }
    o << "]}\n";
    emit(r, o.str());
    return 0;
  }
  Kernel k;
  if (r.chain == "glauber")
    k = glauber(md.sm);
  else if (r.chain == "l-glauber")
    k = l_glauber(md.sm, r.l);
  else if (r.chain == "rgd")
    throw Error(Err::ParseError, "the rgd chain needs a grid model");
  else
    throw Error(Err::ParseError, "unknown chain '" + r.chain + "'");
  SpectralReport sr = spectral_gap(k);
  MlsiEstimate me = mlsi_adversarial(k, restarts, static_cast<uint64_t>(r.seed));
  o << ",\"gap\":" << jnum(sr.gap);
  o << ",\"eigenvalues_top\":[";
  int top = std::min<int>(6, static_cast<int>(sr.eigenvalues.size()));
  for (int i = 0; i < top; ++i) o << (i ? "," : "") << jnum(sr.eigenvalues[i]);
  o << "]";
  o << ",\"mlsi_upper\":" << jnum(me.upper) << ",\"mlsi_restarts\":" << restarts;
  o << ",\"tmix\":[";
  for (size_t i = 0; i < eps_list.size(); ++i) {
    MixingConsistency mc = fact_mixing_consistency(k, eps_list[i]);
    o << (i ? "," : "") << "{\"eps\":" << jnum(eps_list[i]) << ",\"t\":" << mc.t_measured
      << ",\"fact_bound\":" << jnum(mc.bound_expression) << ",\"ratio\":" << jnum(mc.ratio)
      << "}";
  }
  o << "]}\n";
  emit(r, o.str());
  return 0;
}

// ---------------------------------------------------------------------- certify

int run_certify(const Run& r, const Model& md) {
  if (md.is_grid) throw Error(Err::ParseError, "certificates run on cube models");
  TiltScan scan{{0.5, 1.0, 2.0, 4.0}, bud(r, "directions"), static_cast<uint64_t>(r.seed),
                bud(r, "rounds"), 0.25, 1e-3};
  Certificate c;
  std::string claim_source = "none";
  if (r.kind == "si-pinnings") {
    double claimed = -1;
    if (md.type == "hardcore") {
      double delta = 1.0 - md.lambda / critical_fugacity(std::max(3, md.graph.max_degree));
      if (delta > 0) {
        claimed = 144.0 / delta;
        claim_source = "144/delta";
      }
    }
    c = si_all_pinnings(md.sm, claimed, bud(r, "max-f"));
  } else if (r.kind == "cor-tilts") {
    c = cor_under_tilts(md.sm, scan);
  } else if (r.kind == "ent-stab-quad") {
    c = entropic_stability_scan(md.sm, psi_quad_identity(md.sm.n), scan);
  } else if (r.kind == "ent-stab-H") {
    c = entropic_stability_scan(md.sm, psi_h(), scan);
  } else if (r.kind == "tame-marginals") {
    c = tame_marginals_check(md.sm, -1, std::min(10, bud(r, "max-f")));
  } else if (r.kind == "bounded-marginals") {
    c = bounded_marginals_check(md.sm, -1, bud(r, "max-f"));
  } else {
    throw Error(Err::ParseError, "unknown certificate kind '" + r.kind + "'");
  }
  std::ostringstream o;
  o << header(r) << ",\"model\":" << model_summary(md) << ",\"kind\":\"" << r.kind << "\"";
  o << ",\"claim_source\":\"" << claim_source << "\"";
  o << ",\"certificate\":" << certificate_json(c) << "}\n";
  emit(r, o.str());
  if (c.has_claim && !c.pass) {
    std::ostringstream w;
    w << "check " << cert_kind_name(c.kind) << " failed: constant " << jnum(c.constant)
      << " vs claim " << jnum(c.claimed);
    if (!c.witness_u.empty()) {
      w << "; witness pinning [";
      for (size_t i = 0; i < c.witness_u.size(); ++i)
        w << (i ? "," : "") << int(c.witness_u[i]);
      w << "]";
    }
    if (c.witness_v.size() > 0) {
      w << "; witness tilt [";
      for (Eigen::Index i = 0; i < c.witness_v.size(); ++i)
        w << (i ? "," : "") << jnum(c.witness_v[i]);
      w << "]";
    }
    std::cerr << w.str() << "\n";
    return 4;
  }
  return 0;
}

// ---------------------------------------------------------------------- simulate

int run_simulate(const Run& r, const Model& md) {
  if (md.is_grid) throw Error(Err::ParseError, "simulation schemes run on cube models");
  const SpinMeasure& m = md.sm;
  kernel_budget_check(m.f(), bud(r, "max-f"));
  int paths = r.paths > 0 ? r.paths : bud(r, "paths");
  if (paths < 2) throw Error(Err::InsufficientSamples, "need at least 2 paths");
  double horizon = r.horizon;
  int steps = r.steps;
  double dt = 0;
  if (r.scheme == "coord") {
    if (steps < 0) steps = 1;
  } else if (r.scheme == "sl") {
    if (horizon <= 0) horizon = 0.5;
    dt = std::min(2e-3, horizon / 100.0);
  } else if (r.scheme == "nf") {
    if (horizon <= 0) horizon = 1.0;
  } else {
    throw Error(Err::ParseError, "unknown scheme '" + r.scheme + "'");
  }
  Eigen::VectorXd base = full_weights(m);
  Eigen::Index fullsz = base.size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(fullsz);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(fullsz);
  std::vector<LocEvent> first_events;
  Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(m.n, m.n);
  auto c_of_t = [&](double) { return ident; };
  for (int k = 0; k < paths; ++k) {
    std::mt19937_64 rng = rng_stream(static_cast<uint64_t>(r.seed), static_cast<uint64_t>(k));
    LocPath p;
    if (r.scheme == "coord") {
      p = coord_sample_path(m, steps, rng);
    } else if (r.scheme == "sl") {
      SlResult sl = sl_simulate(m, c_of_t, dt, horizon, rng, 1, 0.01, k == 0);
      p = std::move(sl.path);
    } else {
      p = nf_simulate(m, horizon, rng);
    }
    if (k == 0) first_events = p.events;
    Eigen::VectorXd fw = full_weights(p.states.back());
    // entrywise running mean and variance over paths
    Eigen::VectorXd delta = fw - mean;
    mean += delta / (k + 1);
    m2 += delta.cwiseProduct(fw - mean);
  }
  int worst_entry = 0;
  double max_dev = 0, max_allow = 0, worst_score = 0;
  bool pass = true;
  for (Eigen::Index i = 0; i < fullsz; ++i) {
    double se = std::sqrt(m2[i] / (paths - 1) / paths);
    double dev = std::abs(mean[i] - base[i]);
    double allow = 4 * se + 1e-12;
    double score = dev / allow;
    if (score > worst_score) {
      worst_score = score;
      worst_entry = static_cast<int>(i);
      max_dev = dev;
      max_allow = allow;
    }
    if (dev > allow) pass = false;
  }
  std::ostringstream o;
  o << header(r) << ",\"model\":" << model_summary(md) << ",\"scheme\":\"" << r.scheme << "\"";
  o << ",\"paths\":" << paths;
  if (r.scheme == "coord")
    o << ",\"steps\":" << steps;
  else
    o << ",\"horizon\":" << jnum(horizon);
  if (r.scheme == "sl") o << ",\"dt\":" << jnum(dt);
  o << ",\"martingale\":{\"worst_entry\":" << worst_entry << ",\"max_dev\":" << jnum(max_dev)
    << ",\"allowance\":" << jnum(max_allow) << ",\"score\":" << jnum(worst_score)
    << ",\"pass\":" << (pass ? "true" : "false") << "}";
  o << ",\"first_path_events\":[";
  for (size_t i = 0; i < first_events.size(); ++i) {
    const LocEvent& ev = first_events[i];
    o << (i ? "," : "") << "{\"time\":" << jnum(ev.time) << ",\"kind\":\"" << ev.kind << "\"";
    if (ev.coord >= 0) o << ",\"coord\":" << ev.coord << ",\"spin\":" << ev.spin;
    o << "}";
  }
  o << "]}\n";
  emit(r, o.str());
  if (!pass) {
    std::cerr << "check martingale-mean failed: entry " << worst_entry << " deviates "
              << jnum(max_dev) << " with allowance " << jnum(max_allow) << "\n";
    return 4;
  }
  return 0;
}

// ---------------------------------------------------------------------- pipeline

Eigen::VectorXd linear_statistic(const SpinMeasure& m) {
  Eigen::VectorXd phi(m.w.size());
  for (uint32_t fc = 0; fc < static_cast<uint32_t>(m.w.size()); ++fc) {
    uint32_t full = m.full_config(fc);
    double s = 0;
    for (int i = 0; i < m.n; ++i) s += spin_of_bit(full, i);
    phi[fc] = s;
  }
  return phi;
}

int run_pipeline(const Run& r, const Model& md) {
  std::string instance = r.model_stem.empty() ? md.name : r.model_stem;
  std::string doc;
  std::string fail;
  uint64_t seed = static_cast<uint64_t>(r.seed);
  if (r.pipeline == "theorem-sk") {
    if (!md.has_ising) throw Error(Err::ParseError, "theorem-sk runs on ising models");
    SkPipeline p = theorem_sk_pipeline(md.ising, bud(r, "grid"), bud(r, "fields"), seed);
    doc = sk_pipeline_json(p, instance);
    if (!p.hypothesis_ok)
      fail = "covariance-hypothesis: worst ratio " + jnum(p.worst_cov_ratio);
    else if (!p.endpoint_ok)
      fail = "product-endpoint: floor " + jnum(p.endpoint_floor) + " vs upper " +
             jnum(p.endpoint_upper);
    else if (!p.consistent)
      fail = "assembled-vs-reference: bound " + jnum(p.bound) + " vs gap " +
             jnum(p.reference_gap);
  } else if (r.pipeline == "graphical") {
    if (md.type != "graph-ising")
      throw Error(Err::ParseError, "graphical runs on graph-ising models");
    GraphicalBound p = graphical_ising_bound(md.graph, md.beta, md.field, 5,
                                             {{0.5, 1.0, 2.0, 4.0}, bud(r, "directions"),
                                              seed + 2, bud(r, "rounds"), 0.25, 1e-3},
                                             seed);
    doc = graphical_json(p, instance);
    if (!p.hypothesis_ok)
      fail = "influence-cap: worst rho " + jnum(p.worst_rho) + " vs cap " + jnum(p.si_cap);
    else if (!p.consistent)
      fail = "assembled-vs-reference: bound " + jnum(p.assembled) + " vs gap " +
             jnum(p.reference_gap);
  } else if (r.pipeline == "ferro") {
    if (md.type != "graph-ising")
      throw Error(Err::ParseError, "ferro runs on graph-ising models");
    FerroBound p = ferro_susceptibility_bound(md.graph, md.beta, bud(r, "grid"),
                                              std::min(30, bud(r, "fields")), seed);
    doc = ferro_json(p, instance);
    if (!p.gks_ok)
      fail = "entrywise-monotonicity: excess " + jnum(p.gks_excess);
    else if (!p.consistent)
      fail = "assembled-vs-reference: bound " + jnum(p.assembled) + " vs gap " +
             jnum(p.reference_gap);
  } else if (r.pipeline == "hardcore") {
    if (md.type != "hardcore") throw Error(Err::ParseError, "hardcore runs on hardcore models");
    HardcorePipeline p = hardcore_pipeline({md.graph, md.lambda}, 5, 48, 0.25, seed,
                                           std::min(10, bud(r, "max-f")));
    doc = hardcore_json(p, instance);
    if (!p.si_ok)
      fail = "influence-all-pinnings: worst rho " + jnum(p.worst_rho) + " vs cap " +
             jnum(p.si_cap);
    else if (!p.marginals_ok)
      fail = "marginal-bounds";
    else if (!p.tame_ok)
      fail = "tame-constant: " + jnum(p.tame_constant);
    else if (!p.tilt_ok)
      fail = "tilt-identity: max diff " + jnum(p.tilt_max_diff);
    else if (!p.endpoint_ok)
      fail = "small-fugacity-endpoint: floor " + jnum(p.endpoint_floor) + " vs upper " +
             jnum(p.endpoint_upper);
  } else if (r.pipeline == "anneal-variance" || r.pipeline == "anneal-entropy") {
    if (md.is_grid) throw Error(Err::ParseError, "anneal runs on cube models");
    AnnealMode mode =
        r.pipeline == "anneal-variance" ? AnnealMode::variance : AnnealMode::entropy;
    AnnealPlan plan;
    plan.a_steps = r.steps >= 0 ? r.steps : 1;
    plan.l_resample = r.l;
    plan.seed = seed;
    Eigen::VectorXd phi = linear_statistic(md.sm);
    Eigen::VectorXd fn =
        mode == AnnealMode::variance ? phi : (0.3 * phi).array().exp().matrix();
    AnnealBound p = anneal_bound(md.sm, plan, mode, fn);
    doc = anneal_json(p, instance);
    if (!p.consistent)
      fail = "assembled-vs-reference: product " + jnum(p.assembled) + " vs reference " +
             jnum(p.reference);
  } else if (r.pipeline == "submartingale") {
    if (md.is_grid) throw Error(Err::ParseError, "submartingale runs on cube models");
    int tau = r.steps >= 0 ? r.steps : 1;
    std::mt19937_64 rng = rng_stream(seed, 901);
    std::normal_distribution<double> gauss(0, 1);
    std::vector<Eigen::VectorXd> phis, fs;
    for (int q = 0; q < 20; ++q) {
      Eigen::VectorXd v(md.sm.w.size());
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = gauss(rng);
      phis.push_back(v);
      fs.push_back(v.array().exp().matrix());
    }
    SubmartingaleReport p = submartingale_check(md.sm, tau, phis, fs);
    std::ostringstream o;
    o << header(r) << ",\"model\":" << model_summary(md)
      << ",\"report\":{\"pipeline\":\"submartingale\",\"tau\":" << p.tau
      << ",\"checks\":" << p.checks << ",\"violations\":" << p.violations
      << ",\"min_margin_var\":" << jnum(p.min_margin_var)
      << ",\"min_margin_ent\":" << jnum(p.min_margin_ent)
      << ",\"pass\":" << (p.pass ? "true" : "false") << "}}\n";
    emit(r, o.str());
    if (!p.pass) {
      std::cerr << "check submartingale failed: " << p.violations << " violations, min margin "
                << jnum(std::min(p.min_margin_var, p.min_margin_ent)) << "\n";
      return 4;
    }
    return 0;
  } else if (r.pipeline == "rgo") {
    if (!md.is_grid) throw Error(Err::ParseError, "rgo runs on grid models");
    RgoReport p = rgo_mlsi_check(md.gm, r.eta, std::min(16, bud(r, "restarts")), seed);
    GridKernel gk = rgd_kernel(md.gm, r.eta);
    Eigen::VectorXd f0(md.gm.m());
    for (int i = 0; i < md.gm.m(); ++i) f0[i] = std::exp(3.0 * std::tanh(md.gm.x[i]));
    KlDecayReport kd = kl_decay_check(gk, p.bound, f0, 50, p.slack + 1e-9);
    std::ostringstream o;
    o << header(r) << ",\"model\":" << model_summary(md)
      << ",\"report\":{\"pipeline\":\"rgo\",\"eta\":" << jnum(p.eta)
      << ",\"bound\":" << jnum(p.bound) << ",\"gap\":" << jnum(p.gap)
      << ",\"mlsi_upper\":" << jnum(p.mlsi_upper) << ",\"slack\":" << jnum(p.slack)
      << ",\"refinement_delta\":" << jnum(p.refinement_delta)
      << ",\"kl_decay_pass\":" << (kd.pass ? "true" : "false")
      << ",\"warm_ratio\":" << jnum(kd.warm_ratio)
      << ",\"pass\":" << (p.pass && kd.pass ? "true" : "false") << "}}\n";
    emit(r, o.str());
    if (!p.pass) {
      std::cerr << "check rgo-bound failed: gap " << jnum(p.gap) << " mlsi "
                << jnum(p.mlsi_upper) << " vs bound " << jnum(p.bound) << " - slack "
                << jnum(p.slack) << "\n";
      return 4;
    }
    if (!kd.pass) {
      std::cerr << "check rgo-kl-decay failed: worst excess " << jnum(kd.worst_excess) << "\n";
      return 4;
    }
    return 0;
  } else {
    throw Error(Err::ParseError, "unknown pipeline '" + r.pipeline + "'");
  }
  std::ostringstream o;
  o << header(r) << ",\"model\":" << model_summary(md) << ",\"report\":" << doc << "}\n";
  emit(r, o.str());
  if (!fail.empty()) {
    std::cerr << "check " << fail << "\n";
    return 4;
  }
  return 0;
}

// ---------------------------------------------------------------------- verify

struct VCheck {
  std::string name;
  bool pass = false;
  double value = 0;
};

int run_verify(const Run& r) {
  uint64_t seed = static_cast<uint64_t>(r.seed);
  std::vector<VCheck> checks;

  {
    std::mt19937_64 rng = rng_stream(seed, 101);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    Eigen::VectorXd w(16);
    for (int i = 0; i < 16; ++i) w[i] = u(rng);
    SpinMeasure m = materialize(4, w);
    double worst = 0;
    for (int tau : {2, 3}) {
      Kernel a = kernel_from_coordinate_localization(m, tau);
      Kernel b = l_glauber(m, m.f() - tau);
      worst = std::max(worst, (a.P - b.P).cwiseAbs().maxCoeff());
    }
    checks.push_back({"coordinate-kernel-identity", worst <= 1e-12, worst});

    Kernel k = glauber(m);
    SpectralReport sr = spectral_gap(k);
    double diff = std::abs(dirichlet_form(k, sr.witness) - sr.gap);
    checks.push_back({"gap-dirichlet-identity", diff <= 1e-10, diff});
  }
  {
    SpinMeasure u4 = materialize(4, Eigen::VectorXd::Ones(16));
    double gap = spectral_gap(l_glauber(u4, 2)).gap;
    double diff = std::abs(gap - 0.5);
    checks.push_back({"uniform-block-gap", diff <= 1e-10, diff});
  }
  {
    std::mt19937_64 rng = rng_stream(seed, 104);
    std::normal_distribution<double> gauss(0, 1);
    Eigen::MatrixXd A(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) A(i, j) = gauss(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
    Eigen::MatrixXd Q = qr.householderQ();
    Eigen::VectorXd d(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 4; ++i) d[i] = u(rng);
    d[0] = 1.0;
    d *= 0.3 / d.maxCoeff();
    Eigen::MatrixXd J = Q * d.asDiagonal() * Q.transpose();
    J = 0.5 * (J + J.transpose());
    CovBoundReport cb = ising_cov_bound_check(J, 20, seed + 4);
    checks.push_back({"covariance-bound", cb.pass, cb.worst_ratio});
  }
  {
    HphiReport hp = lemma_hphi_check(801);
    checks.push_back(
        {"divergence-comparison-upper", hp.pass_upper && hp.pass_phi3, hp.min_upper_margin});
  }
  {
    Eigen::VectorXd b(3);
    b << 0.3, -0.5, 0.1;
    Eigen::VectorXd w(8);
    for (uint32_t c = 0; c < 8; ++c) {
      double p = 1;
      for (int i = 0; i < 3; ++i) p *= (1.0 + spin_of_bit(c, i) * b[i]) / 2.0;
      w[c] = p;
    }
    SpinMeasure m = materialize(3, w);
    Certificate c = entropic_stability_scan(m, psi_h(), {{0.5, 1.0, 2.0}, 16, seed + 5, 10, 0.25, 1e-3});
    checks.push_back({"product-H-stability", c.constant <= 1.0 + 1e-9, c.constant});
  }
  {
    Graph g = build_graph(3, {{0, 1}, {1, 2}});
    double t = 0.7, lam = 1.0;
    SpinMeasure a = tilt(build_hardcore({g, lam}), Eigen::VectorXd::Constant(3, -t));
    SpinMeasure bm = build_hardcore({g, lam * std::exp(-2.0 * t)});
    Eigen::VectorXd fa = full_weights(a), fb = full_weights(bm);
    double diff = (fa - fb).cwiseAbs().maxCoeff();
    checks.push_back({"occupancy-tilt-identity", diff <= 1e-12, diff});
  }
  {
    Graph g = build_graph(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
    SpinMeasure m = build_hardcore({g, 0.8});
    int paths = 300;
    Eigen::VectorXd base = full_weights(m);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(base.size());
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(base.size());
    for (int k = 0; k < paths; ++k) {
      std::mt19937_64 rng = rng_stream(seed + 8, static_cast<uint64_t>(k));
      LocPath p = nf_simulate(m, 0.8, rng);
      Eigen::VectorXd fw = full_weights(p.states.back());
      Eigen::VectorXd delta = fw - mean;
      mean += delta / (k + 1);
      m2 += delta.cwiseProduct(fw - mean);
    }
    double worst = 0;
    for (Eigen::Index i = 0; i < base.size(); ++i) {
      double se = std::sqrt(m2[i] / (paths - 1) / paths);
      worst = std::max(worst, std::abs(mean[i] - base[i]) / (4 * se + 1e-12));
    }
    checks.push_back({"negative-fields-martingale", worst <= 1.0, worst});
  }
  {
    GridMeasure g = discretize([](double x) { return 0.5 * x * x; }, 1.0, -8, 8, 97);
    double gap = spectral_gap(rgd_kernel(g, 1.0).k).gap;
    double diff = std::abs(gap - 0.5);
    checks.push_back({"gaussian-dynamics-gap", diff <= 1e-3, diff});
  }
  {
    IsingSpec s;
    s.J = Eigen::MatrixXd::Zero(3, 3);
    s.field = Eigen::VectorXd::Zero(3);
    SkPipeline p = theorem_sk_pipeline(s, 5, 10, seed + 7);
    double diff = std::abs(p.bound - 1.0 / 3.0);
    checks.push_back({"decoupled-interaction-rate", diff <= 1e-12 && p.consistent, diff});
  }

  bool all = true;
  std::ostringstream o;
  o << header(r) << ",\"checks\":[";
  for (size_t i = 0; i < checks.size(); ++i) {
    const VCheck& c = checks[i];
    all = all && c.pass;
    o << (i ? "," : "") << "{\"name\":\"" << c.name << "\",\"pass\":" << (c.pass ? "true" : "false")
      << ",\"value\":" << jnum(c.value) << "}";
  }
  o << "],\"pass\":" << (all ? "true" : "false") << "}\n";
  emit(r, o.str());
  if (!all) {
    for (const VCheck& c : checks)
      if (!c.pass) std::cerr << "check " << c.name << " failed: value " << jnum(c.value) << "\n";
    return 4;
  }
  return 0;
}

// ---------------------------------------------------------------------- driver

std::string stem_of(const std::string& path) {
  size_t slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  size_t dot = base.find_last_of('.');
  return dot == std::string::npos ? base : base.substr(0, dot);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for localization dynamics on the cube and the line"};
  app.require_subcommand(1);

  std::string config_path, model_path, out_path;
  int64_t seed = 0;
  std::string chain = "glauber", kind, scheme = "nf", pname;
  double eta = -1, horizon = -1, tol_curv = -1;
  int l = -1, steps = -1, paths = -1;
  std::map<std::string, double> budget_flags;

  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", config_path, "JSON config file");
    s->add_option("--model", model_path, "model spec file (JSON)");
    s->add_option("--seed", seed, "seed for all derived random streams");
    s->add_option("--out", out_path, "write the report here as well as stdout");
    s->add_option("--tol.curv", tol_curv, "grid curvature tolerance (loosen only)");
    for (const auto& [k, dflt] : kBudgetDefaults)
      s->add_option("--budget." + k, budget_flags[k], "budget override (default " +
                                                          std::to_string(int(dflt)) + ")");
  };
  CLI::App* A = app.add_subcommand("analyze", "spectral gap, entropy decay, mixing table");
  add_common(A);
  A->add_option("--chain", chain, "glauber | l-glauber | rgd");
  A->add_option("--l", l, "block size for l-glauber");
  A->add_option("--eta", eta, "step parameter for rgd");
  CLI::App* C = app.add_subcommand("certify", "stability certificates");
  add_common(C);
  C->add_option("--kind", kind,
                "si-pinnings | cor-tilts | ent-stab-quad | ent-stab-H | tame-marginals | "
                "bounded-marginals");
  CLI::App* S = app.add_subcommand("simulate", "localization paths and martingale summary");
  add_common(S);
  S->add_option("--scheme", scheme, "coord | sl | nf");
  S->add_option("--horizon", horizon, "time horizon for sl / nf");
  S->add_option("--steps", steps, "reveal count for coord");
  S->add_option("--paths", paths, "number of sample paths");
  CLI::App* P = app.add_subcommand("pipeline", "assembled mixing bounds");
  add_common(P);
  P->add_option("--name", pname,
                "theorem-sk | graphical | ferro | hardcore | anneal-variance | anneal-entropy "
                "| submartingale | rgo");
  P->add_option("--l", l, "final-stage block size for anneal");
  P->add_option("--steps", steps, "stopping time for anneal / submartingale");
  P->add_option("--eta", eta, "step parameter for rgo");
  CLI::App* V = app.add_subcommand("verify", "identity suite across all modules");
  add_common(V);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  Run run;
  run.command = sub->get_name();
  try {
    json cfg = json::object();
    if (!config_path.empty()) {
      cfg = json::parse(read_file(config_path));
      if (!cfg.is_object()) throw Error(Err::ParseError, "config must be a JSON object");
    }
    auto flag_count = [&](const std::string& name) -> size_t {
      const CLI::Option* op = sub->get_option_no_throw(name);
      return op ? op->count() : 0;
    };
    auto merged_str = [&](const char* key, const std::string& flag, const std::string& flagname,
                          const std::string& dflt) {
      if (flag_count(flagname) > 0) return flag;
      if (cfg.contains(key) && cfg[key].is_string()) return cfg[key].get<std::string>();
      return dflt;
    };
    auto merged_num = [&](const char* key, double flagval, const std::string& flagname,
                          double dflt) {
      if (flag_count(flagname) > 0) return flagval;
      if (cfg.contains(key) && cfg[key].is_number()) return cfg[key].get<double>();
      return dflt;
    };
    bool seed_given = flag_count("--seed") > 0 || (cfg.contains("seed") && cfg["seed"].is_number());
    run.seed = flag_count("--seed") > 0 ? seed
               : cfg.contains("seed")   ? cfg["seed"].get<int64_t>()
                                        : 1;
    if (!seed_given && run.command != "verify")
      throw Error(Err::ParseError, "--seed is required for stochastic commands");
    run.out = merged_str("out", out_path, "--out", "");
    run.chain = merged_str("chain", chain, "--chain", "glauber");
    run.kind = merged_str("kind", kind, "--kind", "");
    run.scheme = merged_str("scheme", scheme, "--scheme", "nf");
    run.pipeline = merged_str("pipeline", pname, "--name", "");
    run.eta = merged_num("eta", eta, "--eta", 1.0);
    run.horizon = merged_num("horizon", horizon, "--horizon", -1);
    run.l = static_cast<int>(merged_num("l", l, "--l", 1));
    run.steps = static_cast<int>(merged_num("steps", steps, "--steps", -1));
    run.paths = static_cast<int>(merged_num("paths", paths, "--paths", -1));
    if (cfg.contains("tol")) {
      if (!cfg["tol"].is_object()) throw Error(Err::ParseError, "tol must be an object");
      for (auto& [k, v] : cfg["tol"].items()) {
        if (!kTolDefaults.count(k)) throw Error(Err::ParseError, "unknown tolerance '" + k + "'");
        run.tol[k] = v.get<double>();
      }
    }
    if (flag_count("--tol.curv") > 0) run.tol["curv"] = tol_curv;
    if (cfg.contains("budget")) {
      if (!cfg["budget"].is_object()) throw Error(Err::ParseError, "budget must be an object");
      for (auto& [k, v] : cfg["budget"].items()) {
        if (!kBudgetDefaults.count(k)) throw Error(Err::ParseError, "unknown budget '" + k + "'");
        run.budget[k] = v.get<double>();
      }
    }
    for (const auto& [k, v] : budget_flags)
      if (flag_count("--budget." + k) > 0) run.budget[k] = v;

    bool needs_model = run.command != "verify";
    if (needs_model) {
      if (!model_path.empty()) {
        run.model_spec = json::parse(read_file(model_path));
        run.model_stem = stem_of(model_path);
      } else if (cfg.contains("model")) {
        if (cfg["model"].is_string()) {
          run.model_spec = json::parse(read_file(cfg["model"].get<std::string>()));
          run.model_stem = stem_of(cfg["model"].get<std::string>());
        } else {
          run.model_spec = cfg["model"];
        }
      } else {
        throw Error(Err::ParseError, "a model spec is required (--model or config)");
      }
    }

    json eff;
    eff["command"] = run.command;
    eff["seed"] = run.seed;
    if (needs_model) eff["model"] = run.model_spec;
    if (run.command == "analyze") {
      eff["chain"] = run.chain;
      eff["l"] = run.l;
      eff["eta"] = run.eta;
    } else if (run.command == "certify") {
      eff["kind"] = run.kind;
    } else if (run.command == "simulate") {
      eff["scheme"] = run.scheme;
      eff["horizon"] = run.horizon;
      eff["steps"] = run.steps;
      eff["paths"] = run.paths;
    } else if (run.command == "pipeline") {
      eff["pipeline"] = run.pipeline;
      eff["l"] = run.l;
      eff["steps"] = run.steps;
      eff["eta"] = run.eta;
    }
    if (!run.tol.empty()) eff["tol"] = run.tol;
    if (!run.budget.empty()) eff["budget"] = run.budget;
    run.hash = hex64(fnv1a64(eff.dump()));

    if (run.command == "verify") return run_verify(run);
    Model md = parse_model(run.model_spec, tolv(run, "curv"));
    if (run.command == "analyze") return run_analyze(run, md);
    if (run.command == "certify") return run_certify(run, md);
    if (run.command == "simulate") return run_simulate(run, md);
    return run_pipeline(run, md);
  } catch (const json::exception& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_code_for(e.code);
  } catch (const std::exception& e) {
    std::cerr << "internal failure: " << e.what() << "\n";
    return 4;
  }
}

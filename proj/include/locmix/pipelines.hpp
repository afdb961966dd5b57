#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "kernels.hpp"
#include "localization.hpp"
#include "models.hpp"
#include "spectra.hpp"
#include "spin_measure.hpp"
#include "stability.hpp"

namespace locmix {

enum class AnnealMode { variance, entropy };

inline const char* anneal_mode_name(AnnealMode m) {
  return m == AnnealMode::variance ? "variance" : "entropy";
}

// Two-stage plan: run the initial scheme to a deterministic stopping time,
// then hand the realized states to the coordinate resampling dynamics.
struct AnnealPlan {
  LocScheme initial = LocScheme::coordinate;
  LocScheme final_scheme = LocScheme::coordinate;
  int a_steps = 0;     // stopping time for the coordinate initial scheme
  double a_time = 0.5; // stopping time for the driven initial schemes
  int l_resample = 1;  // how many coordinates the final kernel refreshes
  Eigen::MatrixXd sl_driver;  // empty means identity
  double sl_dt = 2e-3;
  int n_paths = 48;
  uint64_t seed = 7;
  // optional certified decay rates for the entropy functional
  std::function<double(const SpinMeasure&)> alpha_of_state;
  std::function<double(double)> alpha_of_t;
  double nf_alpha = -1;
  TiltScan floor_scan{{0.5, 1.0, 2.0, 4.0}, 24, 5, 20, 0.25, 1e-3};
};

struct AnnealBound {
  AnnealMode mode = AnnealMode::variance;
  double eps = 1;             // conservation factor entering the product
  bool eps_certified = false; // true when eps is a worst-case floor, not a sample mean
  double eps_measured = 1;    // trace ratio for the supplied test function
  double eps_se = 0;
  double delta = 1;           // worst inner bound over realized final states
  double assembled = 0;
  double slack = 0;           // statistical allowance, 4 * se * delta
  double reference = 0;       // same dynamics assembled directly on the base measure
  double concat_reference = -1;
  bool consistent = false;
  int states_checked = 0;
  std::vector<double> inner_bounds;
  ConservationTrace trace;
};

namespace detail {

inline uint32_t free_config_of(const SpinMeasure& m, uint32_t full) {
  uint32_t fc = 0;
  for (int j = 0; j < m.f(); ++j)
    if ((full >> m.free_idx[j]) & 1u) fc |= (1u << j);
  return fc;
}

// values given on the free configs of owner, reindexed onto kernel support
inline Eigen::VectorXd support_values(const Kernel& k, const SpinMeasure& owner,
                                      const Eigen::VectorXd& vals) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(k.support.size()));
  for (size_t i = 0; i < k.support.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = vals[free_config_of(owner, k.support[i])];
  return out;
}

inline double pair_form(const Kernel& k, const Eigen::VectorXd& sup_vals) {
  return sup_vals.cwiseProduct(k.pi).dot(k.P * sup_vals);
}

inline double plogp_form(const Kernel& k, const Eigen::VectorXd& sup_vals) {
  Eigen::VectorXd pf = k.P * sup_vals;
  double s = 0;
  for (Eigen::Index i = 0; i < pf.size(); ++i)
    if (pf[i] > 0) s += k.pi[i] * pf[i] * std::log(pf[i]);
  return s;
}

inline double entropy_floor_of_state(const SpinMeasure& s, int l, const TiltScan& scan) {
  ClvResult c = clv_kappa(s, scan);
  return uniform_product_floor(c.kappa, s.f(), l);
}

inline double inner_bound_of_state(const SpinMeasure& s, AnnealMode mode, int l,
                                   const TiltScan& scan) {
  if (s.f() == 0) return 1.0;
  int leff = std::max(1, std::min(l, s.f()));
  if (mode == AnnealMode::variance) {
    Kernel k = l_glauber(s, leff);
    return std::min(1.0, spectral_gap(k).gap);
  }
  return std::max(0.0, std::min(1.0, entropy_floor_of_state(s, leff, scan)));
}

}  // namespace detail

// kernel of the stopped composition: reveal a_steps coordinates, then refresh
// l coordinates of the realized state; mixture rows stay reversible for m
inline Kernel concat_kernel(const SpinMeasure& m, int a_steps, int l,
                            uint64_t max_members = 200000) {
  int f = m.f();
  if (a_steps < 0 || a_steps > f) throw Error(Err::SubsetTooLarge, "need 0 <= a_steps <= f");
  LocEnsemble ens = coord_enumerate(m, a_steps, max_members);
  std::vector<uint32_t> sup = kernel_support(m);
  int s = static_cast<int>(sup.size());
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(s, s);
  for (size_t k = 0; k < ens.members.size(); ++k) {
    const SpinMeasure& st = ens.members[k];
    double wk = ens.weights[k];
    if (st.f() == 0) {
      // fully pinned branch keeps its single state
      uint32_t full = st.full_config(0);
      int i = static_cast<int>(std::lower_bound(sup.begin(), sup.end(), full) - sup.begin());
      P(i, i) += wk * st.weight_of_full(full) / m.weight_of_full(full);
      continue;
    }
    Kernel pk = l_glauber(st, std::max(1, std::min(l, st.f())));
    std::vector<int> idx(pk.support.size());
    for (size_t a = 0; a < pk.support.size(); ++a)
      idx[a] = static_cast<int>(std::lower_bound(sup.begin(), sup.end(), pk.support[a]) -
                                sup.begin());
    for (size_t a = 0; a < pk.support.size(); ++a) {
      double scale = wk * st.weight_of_full(pk.support[a]) / m.weight_of_full(pk.support[a]);
      for (size_t b = 0; b < pk.support.size(); ++b)
        P(idx[a], idx[b]) += scale * pk.P(static_cast<int>(a), static_cast<int>(b));
    }
  }
  return make_kernel(m, P);
}

// conservation factor of the initial stage times the worst inner bound of the
// final stage; cross-checked against the final dynamics assembled on m itself
inline AnnealBound anneal_bound(const SpinMeasure& m, const AnnealPlan& plan, AnnealMode mode,
                                const Eigen::VectorXd& test_fn) {
  if (plan.final_scheme != LocScheme::coordinate)
    throw Error(Err::NotDoobFinalScheme, "final stage must be the coordinate scheme");
  AnnealBound r;
  r.mode = mode;
  bool entropy = mode == AnnealMode::entropy;
  std::vector<SpinMeasure> finals;
  std::vector<double> weights;

  if (plan.initial == LocScheme::coordinate) {
    std::function<double(const SpinMeasure&)> rate = plan.alpha_of_state;
    if (entropy && !rate) {
      TiltScan scan = plan.floor_scan;
      rate = [scan](const SpinMeasure& s) {
        return entropic_stability_scan(s, psi_h(), scan).constant;
      };
    }
    r.trace = conservation_trace_coord(m, plan.a_steps, test_fn, entropy, rate);
    r.eps_measured = std::max(0.0, std::min(1.0, r.trace.cumulative_ratio));
    r.eps_se = 0;
    r.eps_certified = r.trace.certified;
    r.eps = r.eps_certified ? std::max(0.0, std::min(1.0, r.trace.cumulative_floor))
                            : r.eps_measured;
    LocEnsemble ens = coord_enumerate(m, plan.a_steps);
    finals = ens.members;
    weights = ens.weights;
  } else {
    double base_val = entropy ? entropy_functional(m, test_fn) : variance(m, test_fn);
    if (!(base_val > 0)) throw Error(Err::DegenerateEntropy, "test function has no spread");
    int np = std::max(2, plan.n_paths);
    finals.resize(np);
    std::vector<double> vals(np);
    if (plan.initial == LocScheme::stochastic) {
      Eigen::MatrixXd C = plan.sl_driver.size() > 0
                              ? plan.sl_driver
                              : Eigen::MatrixXd::Identity(m.n, m.n).eval();
      auto C_of_t = [&C](double) { return C; };
      parallel_for(np, [&](int k) {
        std::mt19937_64 rng = rng_stream(plan.seed, static_cast<uint64_t>(k));
        SlResult sr = sl_simulate(m, C_of_t, plan.sl_dt, plan.a_time, rng, 1, 0.01, false);
        finals[k] = sr.path.states.back();
      });
    } else {
      parallel_for(np, [&](int k) {
        std::mt19937_64 rng = rng_stream(plan.seed, static_cast<uint64_t>(k));
        LocPath p = nf_simulate(m, plan.a_time, rng);
        finals[k] = p.states.back();
      });
    }
    for (int k = 0; k < np; ++k) {
      Eigen::VectorXd fv = restrict_function(m, finals[k], test_fn);
      vals[k] = entropy ? entropy_functional(finals[k], fv) : variance(finals[k], fv);
    }
    double mu = 0;
    for (double v : vals) mu += v;
    mu /= np;
    double var = 0;
    for (double v : vals) var += sq(v - mu);
    var /= (np - 1);
    r.trace.cumulative_ratio = mu / base_val;
    r.trace.se = std::sqrt(var / np) / base_val;
    r.eps_measured = std::max(0.0, std::min(1.0, r.trace.cumulative_ratio));
    r.eps_se = r.trace.se;
    if (entropy && plan.initial == LocScheme::stochastic && plan.alpha_of_t) {
      int grid = 400;
      double acc = 0;
      for (int i = 0; i < grid; ++i) {
        double t0 = plan.a_time * i / grid, t1 = plan.a_time * (i + 1) / grid;
        acc += 0.5 * (plan.alpha_of_t(t0) + plan.alpha_of_t(t1)) * (t1 - t0);
      }
      r.trace.cumulative_floor = std::exp(-acc);
      r.trace.certified = true;
    } else if (entropy && plan.initial == LocScheme::negative_fields && plan.nf_alpha >= 0) {
      r.trace.cumulative_floor = std::exp(-4.0 * plan.nf_alpha * plan.a_time);
      r.trace.certified = true;
    }
    r.eps_certified = r.trace.certified;
    r.eps = r.eps_certified ? std::max(0.0, std::min(1.0, r.trace.cumulative_floor))
                            : r.eps_measured;
    weights.assign(static_cast<size_t>(np), 1.0 / np);
  }

  r.delta = 1.0;
  r.inner_bounds.resize(finals.size());
  for (size_t k = 0; k < finals.size(); ++k) {
    r.inner_bounds[k] =
        detail::inner_bound_of_state(finals[k], mode, plan.l_resample, plan.floor_scan);
    r.delta = std::min(r.delta, r.inner_bounds[k]);
  }
  r.states_checked = static_cast<int>(finals.size());
  r.assembled = r.eps * r.delta;
  r.slack = r.eps_certified ? 0.0 : 4.0 * r.eps_se * r.delta;

  Kernel ref = l_glauber(m, std::max(1, std::min(plan.l_resample, m.f())));
  r.reference = entropy ? mlsi_adversarial(ref, 40, plan.seed).upper : spectral_gap(ref).gap;
  r.consistent = r.assembled <= r.reference + r.slack + 1e-9;
  if (plan.initial == LocScheme::coordinate) {
    Kernel ck = concat_kernel(m, plan.a_steps, plan.l_resample);
    r.concat_reference =
        entropy ? mlsi_adversarial(ck, 40, plan.seed + 1).upper : spectral_gap(ck).gap;
    r.consistent = r.consistent && r.assembled <= r.concat_reference + r.slack + 1e-9;
  }
  return r;
}

struct SubmartingaleReport {
  int tau = 1;
  int times = 0;
  int states = 0;
  int checks = 0;
  double min_margin_var = std::numeric_limits<double>::infinity();
  double max_margin_var = -std::numeric_limits<double>::infinity();
  double min_margin_ent = std::numeric_limits<double>::infinity();
  double max_margin_ent = -std::numeric_limits<double>::infinity();
  int violations = 0;
  bool pass = true;
};

// one revealed coordinate can only raise the pair form phi P phi and the
// P f log P f integral in conditional mean; checked exactly over every
// realized state while the child still supports a tau-reveal kernel
inline SubmartingaleReport submartingale_check(const SpinMeasure& m, int tau,
                                               const std::vector<Eigen::VectorXd>& phis,
                                               const std::vector<Eigen::VectorXd>& fs,
                                               double tol = 1e-10) {
  int f = m.f();
  if (tau < 0 || tau > f) throw Error(Err::SubsetTooLarge, "need 0 <= tau <= f");
  for (const auto& phi : phis)
    if (phi.size() != m.w.size()) throw Error(Err::ParseError, "test function size mismatch");
  for (const auto& fv : fs) {
    if (fv.size() != m.w.size()) throw Error(Err::ParseError, "test function size mismatch");
    if (fv.minCoeff() < 0) throw Error(Err::NegativeInput, "entropy test function");
  }
  SubmartingaleReport r;
  r.tau = tau;
  auto note = [&](double cur, double nxt, bool ent) {
    double margin = (nxt - cur) / std::max(1.0, std::abs(cur));
    if (ent) {
      r.min_margin_ent = std::min(r.min_margin_ent, margin);
      r.max_margin_ent = std::max(r.max_margin_ent, margin);
    } else {
      r.min_margin_var = std::min(r.min_margin_var, margin);
      r.max_margin_var = std::max(r.max_margin_var, margin);
    }
    ++r.checks;
    if (margin < -tol) ++r.violations;
  };
  for (int t = 0; f - t - 1 >= tau; ++t) {
    ++r.times;
    LocEnsemble parents = coord_enumerate(m, t);
    for (size_t p = 0; p < parents.members.size(); ++p) {
      const SpinMeasure& par = parents.members[p];
      ++r.states;
      Kernel kp = kernel_from_coordinate_localization(par, tau);
      LocEnsemble kids = coord_enumerate(par, 1);
      std::vector<Kernel> kk;
      kk.reserve(kids.members.size());
      for (const auto& kid : kids.members)
        kk.push_back(kernel_from_coordinate_localization(kid, tau));
      for (const auto& phi : phis) {
        Eigen::VectorXd pv = detail::support_values(kp, par, restrict_function(m, par, phi));
        double cur = detail::pair_form(kp, pv);
        double nxt = 0;
        for (size_t c = 0; c < kids.members.size(); ++c) {
          Eigen::VectorXd cv = detail::support_values(
              kk[c], kids.members[c], restrict_function(m, kids.members[c], phi));
          nxt += kids.weights[c] * detail::pair_form(kk[c], cv);
        }
        note(cur, nxt, false);
      }
      for (const auto& fv : fs) {
        Eigen::VectorXd pv = detail::support_values(kp, par, restrict_function(m, par, fv));
        double cur = detail::plogp_form(kp, pv);
        double nxt = 0;
        for (size_t c = 0; c < kids.members.size(); ++c) {
          Eigen::VectorXd cv = detail::support_values(
              kk[c], kids.members[c], restrict_function(m, kids.members[c], fv));
          nxt += kids.weights[c] * detail::plogp_form(kk[c], cv);
        }
        note(cur, nxt, true);
      }
    }
  }
  r.pass = r.violations == 0;
  return r;
}

struct SkPipeline {
  int n = 0;
  double j_norm = 0;
  double bound = 0;             // (1/n)(1 - 2|J|), the closed-form product
  double bound_quadrature = 0;  // same exponent with the rate integrated on a grid
  double worst_cov_ratio = 0;   // max |Cov| relative to the scheduled cap
  bool hypothesis_ok = false;
  double endpoint_floor = 0;
  double endpoint_upper = 1;  // worst adversarial upper over product endpoints
  bool endpoint_ok = false;
  double reference_gap = 0;
  double reference_upper = 0;
  bool consistent = false;
  int scan_points = 0;
};

// interpolation toward the product measure: covariance stays below
// 1/(1 - 2(1-lambda)|J|) along the way, the endpoint contributes 1/n, and the
// assembled decay factor integrates the covariance cap
inline SkPipeline theorem_sk_pipeline(const IsingSpec& spec, int lambda_grid = 11,
                                      int n_fields = 50, uint64_t seed = 11,
                                      double field_sd = 2.0) {
  validate_ising(spec);
  Eigen::MatrixXd Jeff = spec.negate_coupling ? Eigen::MatrixXd(-spec.J) : spec.J;
  int n = static_cast<int>(Jeff.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Jeff);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw Error(Err::PreconditionViolated, "coupling must be positive semidefinite");
  double a = es.eigenvalues().cwiseAbs().maxCoeff();
  if (a >= 0.5) throw Error(Err::PreconditionViolated, "need coupling norm below 1/2");
  SkPipeline r;
  r.n = n;
  r.j_norm = a;
  auto alpha = [a](double lam) { return 1.0 / (1.0 - 2.0 * (1.0 - lam) * a); };

  if (lambda_grid < 2) lambda_grid = 2;
  std::vector<double> ratios(static_cast<size_t>(lambda_grid), 0.0);
  for (int gi = 0; gi < lambda_grid; ++gi) {
    double lam = static_cast<double>(gi) / (lambda_grid - 1);
    Eigen::MatrixXd K = (1.0 - lam) * Jeff;
    double cap = alpha(lam);
    std::vector<double> norms(static_cast<size_t>(n_fields + 1));
    parallel_for(n_fields + 1, [&](int t) {
      Eigen::VectorXd v = spec.field;
      if (t > 0) {
        auto rng = rng_stream(seed + static_cast<uint64_t>(gi) * 1000, t);
        std::normal_distribution<double> gauss(0.0, field_sd);
        for (int i = 0; i < n; ++i) v[i] = gauss(rng);
      }
      norms[t] = op_norm_sym(moments(build_ising({K, v, false})).cov);
    });
    double worst = 0;
    for (double nm : norms) worst = std::max(worst, nm);
    ratios[gi] = worst / cap;
    r.scan_points += n_fields + 1;
  }
  for (double q : ratios) r.worst_cov_ratio = std::max(r.worst_cov_ratio, q);
  r.hypothesis_ok = r.worst_cov_ratio <= 1.0 + 1e-9;

  r.bound = (1.0 - 2.0 * a) / n;
  int quad = 2000;
  double acc = 0;
  for (int i = 0; i < quad; ++i) {
    double l0 = static_cast<double>(i) / quad, l1 = static_cast<double>(i + 1) / quad;
    acc += 0.5 * (alpha(l0) + alpha(l1)) * (l1 - l0);
  }
  r.bound_quadrature = std::exp(-2.0 * a * acc) / n;

  r.endpoint_floor = 1.0 / n;
  std::vector<double> uppers(5);
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd v(n);
    auto rng = rng_stream(seed + 77, static_cast<uint64_t>(t));
    std::normal_distribution<double> gauss(0.0, field_sd);
    for (int i = 0; i < n; ++i) v[i] = t == 0 ? spec.field[i] : gauss(rng);
    SpinMeasure prod = build_ising({Eigen::MatrixXd::Zero(n, n), v, false});
    uppers[t] = mlsi_adversarial(glauber(prod), 30, seed + t).upper;
  }
  r.endpoint_upper = *std::min_element(uppers.begin(), uppers.end());
  r.endpoint_ok = r.endpoint_upper >= r.endpoint_floor - 1e-9;

  SpinMeasure nu = build_ising(spec);
  Kernel k = glauber(nu);
  r.reference_gap = spectral_gap(k).gap;
  r.reference_upper = mlsi_adversarial(k, 50, seed).upper;
  r.consistent = r.hypothesis_ok && r.endpoint_ok &&
                 r.bound_quadrature <= r.bound + 1e-12 &&
                 r.bound <= r.reference_gap + 1e-9 && r.bound <= r.reference_upper + 1e-9;
  return r;
}

struct GraphicalBound {
  int n = 0;
  double beta = 0;
  double delta = 0;
  double si_cap = 0;     // 2/delta
  double worst_rho = 0;  // max correlation spectral radius over the scans
  bool hypothesis_ok = false;
  double exponent = 0;  // instance decay exponent, must stay below 8/delta
  double assembled = 0; // exp(-8/delta)/n
  double assembled_sharp = 0;
  double reference_gap = 0;
  double reference_upper = 0;
  bool consistent = false;
  int scan_points = 0;
};

// uniqueness margin of the monochromatic-edge model at maximum degree
// max(3, actual); the correlation radius cap 2/delta is rechecked on a
// coupling grid under tilt scans before the decay bound is assembled
inline GraphicalBound graphical_ising_bound(const Graph& g, double beta,
                                            const Eigen::VectorXd& v0, int beta_grid = 5,
                                            const TiltScan& scan = {{0.5, 1.0, 2.0, 4.0}, 48,
                                                                    21, 30, 0.25, 1e-3},
                                            uint64_t seed = 13) {
  if (v0.size() != g.n) throw Error(Err::ParseError, "field length mismatch");
  int deg = std::max(3, g.max_degree);
  double delta = uniqueness_margin(deg, beta);
  if (delta <= 0)
    throw Error(Err::NotInUniquenessRegime, "coupling outside the uniqueness window");
  GraphicalBound r;
  r.n = g.n;
  r.beta = beta;
  r.delta = delta;
  r.si_cap = 2.0 / delta;

  if (beta_grid < 2) beta_grid = 2;
  for (int gi = 0; gi < beta_grid; ++gi) {
    double bprime = beta * static_cast<double>(gi) / (beta_grid - 1);
    TiltScan sc = scan;
    sc.seed = seed + static_cast<uint64_t>(gi);
    Certificate zero_field = cor_under_tilts(build_graph_ising(g, bprime, Eigen::VectorXd::Zero(g.n)), sc, r.si_cap);
    r.worst_rho = std::max(r.worst_rho, zero_field.constant);
    r.scan_points += zero_field.items_scanned;
    sc.seed = seed + 100 + static_cast<uint64_t>(gi);
    Certificate with_field = cor_under_tilts(build_graph_ising(g, bprime, v0), sc, r.si_cap);
    r.worst_rho = std::max(r.worst_rho, with_field.constant);
    r.scan_points += with_field.items_scanned;
  }
  r.hypothesis_ok = r.worst_rho <= r.si_cap + 1e-9;

  // quadratic form of the monochromatic count: (beta/4) (A + D), with a
  // diagonal shift making it positive semidefinite when beta < 0
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(g.n, g.n);
  for (auto [x, y] : g.edges) {
    M(x, y) += 0.25;
    M(y, x) += 0.25;
    M(x, x) += 0.25;
    M(y, y) += 0.25;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  double mlo = es.eigenvalues().minCoeff(), mhi = es.eigenvalues().maxCoeff();
  double jn = std::abs(beta) * (beta >= 0 ? mhi : mhi - mlo);
  r.exponent = 2.0 * jn * (2.0 / delta);
  r.assembled = std::exp(-8.0 / delta) / g.n;
  r.assembled_sharp = std::exp(-r.exponent) / g.n;
  if (beta == 0) r.assembled = 1.0 / g.n;

  Kernel k = glauber(build_graph_ising(g, beta, v0));
  r.reference_gap = spectral_gap(k).gap;
  r.reference_upper = mlsi_adversarial(k, 50, seed).upper;
  r.consistent = r.hypothesis_ok && r.exponent <= 8.0 / delta + 1e-9 &&
                 r.assembled <= r.reference_gap + 1e-9 &&
                 r.assembled <= r.reference_upper + 1e-9;
  return r;
}

struct FerroBound {
  int n = 0;
  double beta = 0;
  double j_norm = 0;
  std::vector<double> chi;  // covariance norm along the coupling ramp
  double chi_integral = 0;
  double assembled = 0;
  double gks_excess = 0;
  bool gks_ok = false;
  double reference_gap = 0;
  double reference_upper = 0;
  bool consistent = false;
};

// ferromagnets: external fields only shrink covariances, so the zero-field
// susceptibility curve caps the interpolation rate
inline FerroBound ferro_susceptibility_bound(const Graph& g, double beta, int grid = 11,
                                             int n_fields = 30, uint64_t seed = 17) {
  if (beta < 0) throw Error(Err::NotFerromagnetic, "negative coupling");
  FerroBound r;
  r.n = g.n;
  r.beta = beta;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(g.n, g.n);
  for (auto [x, y] : g.edges) {
    M(x, y) += 0.25;
    M(y, x) += 0.25;
    M(x, x) += 0.25;
    M(y, y) += 0.25;
  }
  r.j_norm = std::abs(beta) * op_norm_sym(M);
  if (grid < 2) grid = 2;
  r.chi.resize(static_cast<size_t>(grid));
  std::vector<double> vals(static_cast<size_t>(grid));
  parallel_for(grid, [&](int i) {
    double u = static_cast<double>(i) / (grid - 1);
    vals[static_cast<size_t>(i)] =
        op_norm_sym(moments(build_graph_ising(g, u * beta, Eigen::VectorXd::Zero(g.n))).cov);
  });
  for (int i = 0; i < grid; ++i) r.chi[static_cast<size_t>(i)] = vals[static_cast<size_t>(i)];
  double acc = 0;
  for (int i = 0; i + 1 < grid; ++i)
    acc += 0.5 * (r.chi[static_cast<size_t>(i)] + r.chi[static_cast<size_t>(i + 1)]) /
           (grid - 1);
  r.chi_integral = acc;
  r.assembled = std::exp(-2.0 * r.j_norm * r.chi_integral) / g.n;

  GksReport gks = gks_monotonicity_check(g, beta, n_fields, seed);
  r.gks_excess = gks.worst_excess;
  r.gks_ok = gks.pass;

  Kernel k = glauber(build_graph_ising(g, beta, Eigen::VectorXd::Zero(g.n)));
  r.reference_gap = spectral_gap(k).gap;
  r.reference_upper = mlsi_adversarial(k, 50, seed).upper;
  r.consistent = r.gks_ok && r.assembled <= r.reference_gap + 1e-9 &&
                 r.assembled <= r.reference_upper + 1e-9;
  return r;
}

struct HardcorePipeline {
  int n = 0;
  double lambda = 0;
  int max_degree = 0;
  double delta = 0;
  // occupancy-model ingredients
  double si_cap = 0;
  double worst_rho = 0;
  bool si_ok = false;
  bool marginals_ok = false;
  double tame_constant = 0;
  double tame_k = 0;
  double tame_c = 0;
  bool tame_ok = false;
  double tilt_max_diff = 0;
  bool tilt_ok = false;
  double endpoint_lambda = 0;
  double endpoint_floor = 0;
  double endpoint_upper = 0;
  bool endpoint_ok = false;
  bool ingredients_ok = false;
  // annealing trace along the shrinking-fugacity drive
  double nf_horizon = 0;
  double nf_ratio = 0;
  double nf_se = 0;
  double fitted_c = 0;
  // mixing measurement
  int t_mix = 0;
  double mix_eps = 0.25;
  double mix_budget = 0;
  double mix_ratio = 0;
  double reference_gap = 0;
  double reference_upper = 0;
};

// full battery for the occupancy model: correlation caps and marginal
// envelopes on a shrinking-fugacity grid, the exact reparameterization of
// downward tilts, a small-fugacity floor consistency probe, a measured
// entropy-conservation trace, and the worst-start mixing time
inline HardcorePipeline hardcore_pipeline(const HardcoreSpec& spec, int t_grid = 5,
                                          int n_paths = 48, double mix_eps = 0.25,
                                          uint64_t seed = 19, int max_f = 10) {
  const Graph& g = spec.graph;
  int deg = std::max(3, g.max_degree);
  double delta = 1.0 - spec.lambda / critical_fugacity(deg);
  if (delta <= 0) throw Error(Err::NotUnique, "fugacity at or above the uniqueness threshold");
  if (g.n > max_f) throw Error(Err::BudgetExceeded, "n=" + std::to_string(g.n));
  HardcorePipeline r;
  r.n = g.n;
  r.lambda = spec.lambda;
  r.max_degree = g.max_degree;
  r.delta = delta;
  r.si_cap = 144.0 / delta;
  r.mix_eps = mix_eps;
  SpinMeasure nu = build_hardcore(spec);

  if (t_grid < 2) t_grid = 2;
  r.si_ok = true;
  r.tame_ok = true;
  r.tilt_ok = true;
  for (int gi = 0; gi < t_grid; ++gi) {
    double t = 2.0 * static_cast<double>(gi) / (t_grid - 1);
    double lam_t = spec.lambda * std::exp(-2.0 * t);
    SpinMeasure mt = build_hardcore({g, lam_t});
    Certificate si = si_all_pinnings(mt, r.si_cap, max_f);
    r.worst_rho = std::max(r.worst_rho, si.constant);
    r.si_ok = r.si_ok && si.pass;
    Certificate tame = tame_marginals_check(mt, -1, max_f);
    r.tame_constant = std::max(r.tame_constant, tame.constant);
    r.tame_k = std::max(r.tame_k, std::max(1.0, tame.ratio_constant));
    r.tame_c = std::max(r.tame_c, std::max(1.0, tame.gap_constant));
    r.tame_ok = r.tame_ok && tame.feasible && tame.constant <= std::exp(30.0);
    if (gi > 0) {
      SpinMeasure tilted = tilt(nu, Eigen::VectorXd::Constant(g.n, -t));
      double d = (full_weights(tilted) - full_weights(mt)).cwiseAbs().maxCoeff();
      r.tilt_max_diff = std::max(r.tilt_max_diff, d);
    }
  }
  r.tilt_ok = r.tilt_max_diff <= 1e-12;

  r.marginals_ok = true;
  for (int v = 0; v < g.n; ++v) {
    std::vector<int8_t> u(static_cast<size_t>(g.n), 0);
    MarginalBoundsReport mb = hardcore_marginal_bounds_check(spec, v, u, delta);
    r.marginals_ok = r.marginals_ok && mb.pass;
    int other = -1;
    for (int w = 0; w < g.n && other < 0; ++w) {
      if (w == v) continue;
      bool adjacent = false;
      for (int nb : g.adj[v]) adjacent = adjacent || nb == w;
      if (!adjacent) other = w;
    }
    if (other >= 0) {
      u[static_cast<size_t>(other)] = -1;
      MarginalBoundsReport mb2 = hardcore_marginal_bounds_check(spec, v, u, delta);
      r.marginals_ok = r.marginals_ok && mb2.pass;
    }
  }

  r.endpoint_lambda = std::min(spec.lambda, 1.0 / (2.0 * deg));
  SpinMeasure mend =
      r.endpoint_lambda == spec.lambda ? nu : build_hardcore({g, r.endpoint_lambda});
  r.endpoint_floor = 1.0 / (4.0 * g.n);
  r.endpoint_upper = mlsi_adversarial(glauber(mend), 40, seed).upper;
  r.endpoint_ok = r.endpoint_upper >= r.endpoint_floor - 1e-9;

  r.ingredients_ok =
      r.si_ok && r.marginals_ok && r.tame_ok && r.tilt_ok && r.endpoint_ok;

  r.nf_horizon = 2.0;
  Eigen::VectorXd fvals(nu.w.size());
  {
    auto rng = rng_stream(seed, 555);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (Eigen::Index i = 0; i < fvals.size(); ++i) fvals[i] = std::exp(unif(rng));
  }
  ConservationTrace tr = conservation_trace_nf(nu, r.nf_horizon, fvals, n_paths, seed + 1);
  r.nf_ratio = tr.cumulative_ratio;
  r.nf_se = tr.se;
  double k4 = std::pow(std::max(1.0, r.tame_k), 4);
  double clipped = std::min(1.0, std::max(r.nf_ratio, 1e-300));
  r.fitted_c = -std::log(clipped) / (k4 * r.nf_horizon);

  Kernel k = glauber(nu);
  r.reference_gap = spectral_gap(k).gap;
  r.reference_upper = mlsi_adversarial(k, 40, seed + 2).upper;
  int worst = 0;
  for (uint32_t cfg : k.support) {
    Eigen::VectorXd w0 = Eigen::VectorXd::Zero(Eigen::Index(1) << nu.n);
    w0[cfg] = 1;
    worst = std::max(worst, tv_mixing_time(k, materialize(nu.n, w0), mix_eps));
  }
  r.t_mix = worst;
  r.mix_budget = g.n * std::log(std::max(2.0, static_cast<double>(g.n))) +
                 3.0 * g.n * std::log(1.0 / mix_eps);
  r.mix_ratio = r.t_mix / r.mix_budget;
  return r;
}

// ---- reports ----

struct IngredientRow {
  std::string name;
  double value = 0;
  bool pass = true;
  bool asserted = true;
};

inline std::string pipeline_json(const std::string& pipeline, const std::string& instance,
                                 const std::vector<IngredientRow>& rows, double assembled,
                                 double bracket_lo, double bracket_hi,
                                 const std::vector<std::pair<std::string, double>>& fitted) {
  using detail::jnum;
  std::ostringstream o;
  o << "{\"pipeline\":\"" << pipeline << "\",\"instance\":\"" << instance << "\",";
  o << "\"ingredients\":[";
  for (size_t i = 0; i < rows.size(); ++i) {
    if (i) o << ",";
    o << "{\"name\":\"" << rows[i].name << "\",\"value\":" << jnum(rows[i].value)
      << ",\"pass\":" << (rows[i].pass ? "true" : "false")
      << ",\"asserted\":" << (rows[i].asserted ? "true" : "false") << "}";
  }
  o << "],\"assembled_bound\":" << jnum(assembled);
  o << ",\"brackets\":{\"lo\":" << jnum(bracket_lo) << ",\"hi\":" << jnum(bracket_hi) << "}";
  o << ",\"fitted_constants\":{";
  for (size_t i = 0; i < fitted.size(); ++i) {
    if (i) o << ",";
    o << "\"" << fitted[i].first << "\":" << jnum(fitted[i].second);
  }
  o << "}}";
  return o.str();
}

inline std::string anneal_json(const AnnealBound& r, const std::string& instance) {
  std::vector<IngredientRow> rows = {
      {"conservation_factor", r.eps, true, r.eps_certified},
      {"conservation_measured", r.eps_measured, true, false},
      {"inner_bound", r.delta, r.delta > 0, true},
      {"reference", r.reference, r.consistent, true},
  };
  if (r.concat_reference >= 0)
    rows.push_back({"stopped_composition_reference", r.concat_reference, r.consistent, true});
  double lo = std::max(0.0, r.assembled - r.slack);
  return pipeline_json(std::string("anneal-") + anneal_mode_name(r.mode), instance, rows,
                       r.assembled, lo, std::max(r.reference, lo),
                       {{"statistical_se", r.eps_se}});
}

inline std::string sk_pipeline_json(const SkPipeline& r, const std::string& instance) {
  std::vector<IngredientRow> rows = {
      {"coupling_norm", r.j_norm, true, true},
      {"covariance_cap_ratio", r.worst_cov_ratio, r.hypothesis_ok, true},
      {"endpoint_upper", r.endpoint_upper, r.endpoint_ok, true},
      {"reference_gap", r.reference_gap, r.bound <= r.reference_gap + 1e-9, true},
      {"reference_upper", r.reference_upper, r.bound <= r.reference_upper + 1e-9, true},
  };
  return pipeline_json("interaction-norm", instance, rows, r.bound, r.bound_quadrature,
                       std::min(r.reference_gap, r.reference_upper), {});
}

inline std::string graphical_json(const GraphicalBound& r, const std::string& instance) {
  std::vector<IngredientRow> rows = {
      {"uniqueness_margin", r.delta, r.delta > 0, true},
      {"correlation_radius", r.worst_rho, r.hypothesis_ok, true},
      {"decay_exponent", r.exponent, r.exponent <= 8.0 / r.delta + 1e-9, true},
      {"reference_gap", r.reference_gap, r.assembled <= r.reference_gap + 1e-9, true},
      {"reference_upper", r.reference_upper, r.assembled <= r.reference_upper + 1e-9, true},
  };
  return pipeline_json("graphical-uniqueness", instance, rows, r.assembled, r.assembled,
                       r.assembled_sharp, {});
}

inline std::string ferro_json(const FerroBound& r, const std::string& instance) {
  std::vector<IngredientRow> rows = {
      {"coupling_norm", r.j_norm, true, true},
      {"susceptibility_integral", r.chi_integral, true, true},
      {"field_monotonicity_excess", r.gks_excess, r.gks_ok, true},
      {"reference_gap", r.reference_gap, r.assembled <= r.reference_gap + 1e-9, true},
      {"reference_upper", r.reference_upper, r.assembled <= r.reference_upper + 1e-9, true},
  };
  return pipeline_json("ferromagnetic-susceptibility", instance, rows, r.assembled,
                       r.assembled, r.reference_upper, {});
}

inline std::string hardcore_json(const HardcorePipeline& r, const std::string& instance) {
  std::vector<IngredientRow> rows = {
      {"uniqueness_margin", r.delta, r.delta > 0, true},
      {"correlation_radius", r.worst_rho, r.si_ok, true},
      {"marginal_envelopes", r.marginals_ok ? 1.0 : 0.0, r.marginals_ok, true},
      {"tame_constant", r.tame_constant, r.tame_ok, true},
      {"tilt_reparameterization_gap", r.tilt_max_diff, r.tilt_ok, true},
      {"small_fugacity_upper", r.endpoint_upper, r.endpoint_ok, true},
      {"conservation_ratio", r.nf_ratio, true, false},
      {"mixing_time", static_cast<double>(r.t_mix), true, false},
      {"mixing_ratio", r.mix_ratio, true, false},
  };
  return pipeline_json("occupancy-uniqueness", instance, rows, r.endpoint_floor,
                       std::max(0.0, r.nf_ratio - 4.0 * r.nf_se),
                       std::min(1.0, r.nf_ratio + 4.0 * r.nf_se),
                       {{"entropy_decay_c", r.fitted_c},
                        {"tame_k", r.tame_k},
                        {"tame_c", r.tame_c}});
}

}  // namespace locmix

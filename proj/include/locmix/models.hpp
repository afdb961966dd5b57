#pragma once

#include "locmix/spin_measure.hpp"

namespace locmix {

struct Graph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<std::vector<int>> adj;
  int max_degree = 0;
};

inline Graph build_graph(int n, const std::vector<std::pair<int, int>>& edges) {
  if (n < 1) throw Error(Err::ParseError, "graph needs n >= 1");
  Graph g;
  g.n = n;
  g.adj.assign(n, {});
  std::vector<std::vector<char>> seen(n, std::vector<char>(n, 0));
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n)
      throw Error(Err::ParseError, "edge endpoint out of range");
    if (a == b) throw Error(Err::ParseError, "self-loop");
    if (seen[a][b]) throw Error(Err::ParseError, "duplicate edge");
    seen[a][b] = seen[b][a] = 1;
    g.edges.emplace_back(a, b);
    g.adj[a].push_back(b);
    g.adj[b].push_back(a);
  }
  for (int i = 0; i < n; ++i)
    g.max_degree = std::max(g.max_degree, static_cast<int>(g.adj[i].size()));
  return g;
}

struct IsingSpec {
  Eigen::MatrixXd J;
  Eigen::VectorXd field;
  bool negate_coupling = false;  // density uses exp(-<x,Jx>+<x,v>) when set
};

inline void validate_ising(const IsingSpec& s) {
  int n = static_cast<int>(s.J.rows());
  if (s.J.cols() != n || s.field.size() != n)
    throw Error(Err::ParseError, "ising spec shape mismatch");
  if (n > kMaxCoords) throw Error(Err::DimensionTooLarge, "n=" + std::to_string(n));
  if ((s.J - s.J.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw Error(Err::ParseError, "coupling matrix must be symmetric");
  if (!s.J.allFinite() || !s.field.allFinite())
    throw Error(Err::NonFinite, "ising spec");
}

// weights proportional to exp(<x,Jx> + <x,v>), or exp(-<x,Jx> + <x,v>)
// under the negated-coupling convention
inline SpinMeasure build_ising(const IsingSpec& s) {
  validate_ising(s);
  int n = static_cast<int>(s.J.rows());
  double sign = s.negate_coupling ? -1.0 : 1.0;
  Eigen::VectorXd logw(Eigen::Index(1) << n);
  Eigen::VectorXd x(n);
  for (uint32_t c = 0; c < logw.size(); ++c) {
    for (int i = 0; i < n; ++i) x[i] = spin_of_bit(c, i);
    logw[c] = sign * x.dot(s.J * x) + x.dot(s.field);
  }
  double lse = logsumexp(logw);
  Eigen::VectorXd w(logw.size());
  for (Eigen::Index c = 0; c < w.size(); ++c) w[c] = std::exp(logw[c] - lse);
  return materialize(n, w);
}

inline Eigen::MatrixXd graph_coupling(const Graph& g) {
  // J_G = (adjacency + degree diagonal) / 2; <x, (beta/2) J_G x> differs from
  // beta * #monochromatic(x) only by a constant
  Eigen::MatrixXd jg = Eigen::MatrixXd::Zero(g.n, g.n);
  for (auto [a, b] : g.edges) {
    jg(a, b) += 0.5;
    jg(b, a) += 0.5;
    jg(a, a) += 0.5;
    jg(b, b) += 0.5;
  }
  return jg;
}

// weights proportional to exp(<x,v> + beta * #monochromatic edges)
inline SpinMeasure build_graph_ising(const Graph& g, double beta, const Eigen::VectorXd& v) {
  if (v.size() != g.n) throw Error(Err::ParseError, "field length mismatch");
  if (g.n > kMaxCoords) throw Error(Err::DimensionTooLarge, "n=" + std::to_string(g.n));
  if (!std::isfinite(beta) || !v.allFinite()) throw Error(Err::NonFinite, "graph ising spec");
  Eigen::VectorXd logw(Eigen::Index(1) << g.n);
  for (uint32_t c = 0; c < logw.size(); ++c) {
    int mono = 0;
    for (auto [a, b] : g.edges)
      if (spin_of_bit(c, a) == spin_of_bit(c, b)) ++mono;
    double lw = beta * mono;
    for (int i = 0; i < g.n; ++i) lw += v[i] * spin_of_bit(c, i);
    logw[c] = lw;
  }
  double lse = logsumexp(logw);
  Eigen::VectorXd w(logw.size());
  for (Eigen::Index c = 0; c < w.size(); ++c) w[c] = std::exp(logw[c] - lse);
  return materialize(g.n, w);
}

// largest delta in (0,1) with exp(|beta|) < (D - delta) / (D - 2 + delta),
// solved at equality; nonpositive result means outside the tree-uniqueness
// window
inline double uniqueness_margin(int max_degree, double beta) {
  if (max_degree < 3)
    throw Error(Err::DegreeTooSmall, "margin needs max degree >= 3");
  double e = std::exp(std::abs(beta));
  double delta = (max_degree - (max_degree - 2) * e) / (1.0 + e);
  return std::min(delta, 1.0 - std::numeric_limits<double>::epsilon());
}

struct HardcoreSpec {
  Graph graph;
  double lambda = 1.0;
};

// occupancy measure: +1 = occupied, support = independent sets,
// weight lambda^{#occupied}
inline SpinMeasure build_hardcore(const HardcoreSpec& s) {
  if (!(s.lambda > 0) || !std::isfinite(s.lambda))
    throw Error(Err::ParseError, "fugacity must be positive and finite");
  const Graph& g = s.graph;
  if (g.n > kMaxCoords) throw Error(Err::DimensionTooLarge, "n=" + std::to_string(g.n));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(Eigen::Index(1) << g.n);
  for (uint32_t c = 0; c < w.size(); ++c) {
    bool indep = true;
    for (auto [a, b] : g.edges)
      if (spin_of_bit(c, a) == +1 && spin_of_bit(c, b) == +1) {
        indep = false;
        break;
      }
    if (!indep) continue;
    int occ = 0;
    for (int i = 0; i < g.n; ++i)
      if (spin_of_bit(c, i) == +1) ++occ;
    w[c] = std::pow(s.lambda, occ);
  }
  return materialize(g.n, w);
}

inline double critical_fugacity(int degree) {
  if (degree < 3) throw Error(Err::DegreeTooSmall, "critical fugacity needs degree >= 3");
  return std::pow(degree - 1.0, degree - 1) / std::pow(degree - 2.0, degree);
}

struct MarginalBoundsReport {
  int vertex = 0;
  double p_plus = 0;
  double lower = 0, upper = 0;
  double lower_unique = -1;  // set when a uniqueness margin is supplied
  bool pass = false;
};

// checks  lam/(1+lam) * (1/(1+lam))^{|N_v|} <= P(x_v = +1 | pins) <= lam/(1+lam)
// for a pinning u touching neither v nor its neighbors; delta >= 0 additionally
// engages the e^{-3e^2} lower bound valid for lambda <= (1-delta)*critical
inline MarginalBoundsReport hardcore_marginal_bounds_check(const HardcoreSpec& s, int v,
                                                           const std::vector<int8_t>& u,
                                                           double delta = -1) {
  const Graph& g = s.graph;
  if (v < 0 || v >= g.n) throw Error(Err::ParseError, "vertex out of range");
  if (static_cast<int>(u.size()) != g.n) throw Error(Err::ParseError, "pin length mismatch");
  if (u[v] != 0) throw Error(Err::InvalidPinning, "pins the tested vertex");
  for (int nb : g.adj[v])
    if (u[nb] != 0) throw Error(Err::InvalidPinning, "pins a neighbor of the tested vertex");
  SpinMeasure nu = build_hardcore(s);
  SpinMeasure cond = pin(nu, u);
  MarginalBoundsReport r;
  r.vertex = v;
  r.p_plus = (moments(cond).b[v] + 1.0) / 2.0;
  double lam = s.lambda;
  r.upper = lam / (1.0 + lam);
  r.lower = r.upper * std::pow(1.0 / (1.0 + lam), static_cast<int>(g.adj[v].size()));
  r.pass = (r.p_plus >= r.lower - 1e-12) && (r.p_plus <= r.upper + 1e-12);
  if (delta >= 0) {
    r.lower_unique = r.upper * std::exp(-3.0 * std::exp(2.0));
    r.pass = r.pass && (r.p_plus >= r.lower_unique - 1e-12);
  }
  return r;
}

struct CovBoundReport {
  double op_bound = 0;      // 1/(1-2||J||)
  double worst_norm = 0;    // max ||Cov|| over the scan
  double worst_ratio = 0;   // max ||Cov||*(1-2||J||)
  int scanned = 0;
  bool pass = false;
};

inline double op_norm_sym(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// for positive-definite J with ||J|| < 1/2 the covariance of
// exp(-<x,Jx>+<v,x>) is uniformly bounded by 1/(1-2||J||) over fields v
inline CovBoundReport ising_cov_bound_check(const Eigen::MatrixXd& J, int n_fields,
                                            uint64_t seed, double field_sd = 2.0) {
  int n = static_cast<int>(J.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  double jnorm = es.eigenvalues().cwiseAbs().maxCoeff();
  if (es.eigenvalues().minCoeff() < -1e-12)
    throw Error(Err::PreconditionViolated, "coupling matrix must be positive semidefinite");
  if (jnorm >= 0.5) throw Error(Err::PreconditionViolated, "need ||J|| < 1/2");
  CovBoundReport r;
  r.op_bound = 1.0 / (1.0 - 2.0 * jnorm);
  std::vector<double> norms(n_fields + 1);
  parallel_for(n_fields + 1, [&](int t) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    if (t > 0) {
      auto rng = rng_stream(seed, t);
      std::normal_distribution<double> gauss(0.0, field_sd);
      for (int i = 0; i < n; ++i) v[i] = gauss(rng);
    }
    IsingSpec sp{J, v, true};
    norms[t] = op_norm_sym(moments(build_ising(sp)).cov);
  });
  for (double nm : norms) r.worst_norm = std::max(r.worst_norm, nm);
  r.worst_ratio = r.worst_norm * (1.0 - 2.0 * jnorm);
  r.scanned = n_fields + 1;
  r.pass = r.worst_norm <= r.op_bound + 1e-9;
  return r;
}

struct GksReport {
  double worst_excess = -std::numeric_limits<double>::infinity();
  int scanned = 0;
  bool pass = false;
};

// external fields only decrease off-diagonal covariances of a ferromagnet
inline GksReport gks_monotonicity_check(const Graph& g, double beta, int n_fields,
                                        uint64_t seed, double field_sd = 2.0) {
  if (beta < 0) throw Error(Err::NotFerromagnetic, "negative coupling");
  Eigen::MatrixXd cov0 = moments(build_graph_ising(g, beta, Eigen::VectorXd::Zero(g.n))).cov;
  GksReport r;
  std::vector<double> excess(n_fields);
  parallel_for(n_fields, [&](int t) {
    auto rng = rng_stream(seed, t);
    std::normal_distribution<double> gauss(0.0, field_sd);
    Eigen::VectorXd v(g.n);
    for (int i = 0; i < g.n; ++i) v[i] = gauss(rng);
    Eigen::MatrixXd cov = moments(build_graph_ising(g, beta, v)).cov;
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < g.n; ++i)
      for (int j = 0; j < g.n; ++j)
        if (i != j) worst = std::max(worst, cov(i, j) - cov0(i, j));
    excess[t] = worst;
  });
  for (double e : excess) r.worst_excess = std::max(r.worst_excess, e);
  r.scanned = n_fields;
  r.pass = r.worst_excess <= 1e-12;
  return r;
}

// brute-force independent set family for cross-checking build_hardcore
inline std::vector<uint32_t> independent_sets(const Graph& g) {
  std::vector<uint32_t> out;
  for (uint32_t mask = 0; mask < (1u << g.n); ++mask) {
    bool ok = true;
    for (auto [a, b] : g.edges)
      if ((mask >> a & 1u) && (mask >> b & 1u)) {
        ok = false;
        break;
      }
    if (ok) out.push_back(mask);
  }
  return out;
}

}  // namespace locmix

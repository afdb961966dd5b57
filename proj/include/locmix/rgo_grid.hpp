#pragma once

#include <numbers>

#include "locmix/spectra.hpp"

namespace locmix {
namespace detail {
inline std::string sci(double x) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << x;
  return os.str();
}
}  // namespace detail

// One-dimensional strongly log-convex potential held on a uniform grid over a
// truncation interval. Weights are exp(-V(x_i))*h renormalized, so downstream
// code can treat the grid as an exact finite-state measure.
struct GridMeasure {
  Eigen::VectorXd x;  // increasing, uniform spacing h
  Eigen::VectorXd w;  // probability weights
  Eigen::VectorXd v;  // potential values at the grid points
  double mu = 0;      // strong-convexity constant claimed for V
  double h = 0;
  double a = 0, b = 0;
  double curvature_min = 0;  // min centered second difference of V
  double tail_estimate = 0;  // Gaussian-envelope bound on the truncated mass
  std::function<double(double)> vfun;  // kept for refinement studies
  int m() const { return static_cast<int>(x.size()); }
};

inline GridMeasure discretize(const std::function<double(double)>& V, double mu, double a,
                              double b, int m, double tol_curv = 1e-6) {
  if (!(mu > 0) || !std::isfinite(mu))
    throw Error(Err::PreconditionViolated, "convexity parameter must be positive");
  if (!std::isfinite(a) || !std::isfinite(b) || !(b > a))
    throw Error(Err::PreconditionViolated, "need a finite interval with b > a");
  if (m < 64) throw Error(Err::PreconditionViolated, "need at least 64 grid points");
  GridMeasure g;
  g.mu = mu;
  g.a = a;
  g.b = b;
  g.vfun = V;
  g.h = (b - a) / (m - 1);
  g.x.resize(m);
  g.v.resize(m);
  for (int i = 0; i < m; ++i) {
    g.x[i] = a + g.h * i;
    g.v[i] = V(g.x[i]);
    if (!std::isfinite(g.v[i]))
      throw Error(Err::NonFinite, "potential not finite at x=" + std::to_string(g.x[i]));
  }
  // centered second differences; taking the min over the grid handles kinks,
  // where the one-sided pieces can only push the local value up
  double cmin = std::numeric_limits<double>::infinity();
  for (int i = 1; i + 1 < m; ++i)
    cmin = std::min(cmin, (g.v[i - 1] - 2.0 * g.v[i] + g.v[i + 1]) / (g.h * g.h));
  g.curvature_min = cmin;
  if (cmin < mu - tol_curv)
    throw Error(Err::NotStronglyConvex, "min second difference " + std::to_string(cmin) +
                                            " below mu=" + std::to_string(mu));
  int istar = 0;
  double vmin = g.v.minCoeff(&istar);
  g.w.resize(m);
  for (int i = 0; i < m; ++i) g.w[i] = std::exp(-(g.v[i] - vmin)) * g.h;
  double captured = g.w.sum();
  // envelope exp(-(mu/2)(x-x*)^2) around the minimizer, with a one-cell margin
  // since the grid minimizer sits within h of the true one
  double xstar = g.x[istar];
  double c = std::sqrt(std::numbers::pi / (2.0 * mu));
  double left = c * std::erfc(std::sqrt(mu / 2.0) * std::max(0.0, xstar - a - g.h));
  double right = c * std::erfc(std::sqrt(mu / 2.0) * std::max(0.0, b - xstar - g.h));
  g.tail_estimate = (left + right) / captured;
  if (g.tail_estimate > 1e-10)
    throw Error(Err::TailMass, "truncated tail estimate " + detail::sci(g.tail_estimate) +
                                   " exceeds 1e-10; widen the interval");
  g.w /= captured;
  return g;
}

namespace detail {
// Gauss-Hermite nodes and weights for weight exp(-t^2), by Golub-Welsch on the
// Jacobi matrix; weights returned normalized to sum 1
inline void gauss_hermite(int n, Eigen::VectorXd& t, Eigen::VectorXd& wt) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) J(k - 1, k) = J(k, k - 1) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  t = es.eigenvalues();
  wt.resize(n);
  for (int i = 0; i < n; ++i) wt[i] = sq(es.eigenvectors()(0, i));
  wt /= wt.sum();
}
}  // namespace detail

// Restricted Gaussian dynamics on the grid: propose y ~ N(x, eta), land on the
// softmax tilt of the grid measure by exp(-(z-y)^2/(2 eta)). The y-integral is
// the only quadrature; the tilt itself is a direct grid sum.
struct GridKernel {
  GridMeasure gm;
  double eta = 0;
  double renorm_residual = 0;  // worst |row sum - 1| before renormalization
  double db_residual = 0;      // worst |pi_i P_ij - pi_j P_ji| after it
  Kernel k;                    // spectra-compatible view; support = grid indices
};

inline GridKernel rgd_kernel(const GridMeasure& gm, double eta, int nodes = 64) {
  if (!(eta > 0) || !std::isfinite(eta))
    throw Error(Err::PreconditionViolated, "step parameter must be positive");
  int m = gm.m();
  if (m < 2 || gm.w.minCoeff() <= 0)
    throw Error(Err::PreconditionViolated, "grid weights underflow; shrink the interval");
  Eigen::VectorXd t, qw;
  detail::gauss_hermite(nodes, t, qw);
  double yscale = std::sqrt(2.0 * eta);
  Eigen::VectorXd logw = gm.w.array().log();
  Eigen::MatrixXd P(m, m);
  std::vector<double> rowsum(m);
  parallel_for(m, [&](int i) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd e(m);
    for (int j = 0; j < nodes; ++j) {
      double y = gm.x[i] + yscale * t[j];
      for (int l = 0; l < m; ++l) e[l] = logw[l] - sq(gm.x[l] - y) / (2.0 * eta);
      double mx = e.maxCoeff();
      double z = 0;
      for (int l = 0; l < m; ++l) {
        e[l] = std::exp(e[l] - mx);
        z += e[l];
      }
      acc += (qw[j] / z) * e;
    }
    rowsum[i] = acc.sum();
    P.row(i) = acc / rowsum[i];
  });
  GridKernel gk;
  gk.gm = gm;
  gk.eta = eta;
  for (int i = 0; i < m; ++i)
    gk.renorm_residual = std::max(gk.renorm_residual, std::abs(rowsum[i] - 1.0));
  if (gk.renorm_residual > 1e-8)
    throw Error(Err::QuadratureFailure,
                "row renormalization residual " + detail::sci(gk.renorm_residual));
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      gk.db_residual =
          std::max(gk.db_residual, std::abs(gm.w[i] * P(i, j) - gm.w[j] * P(j, i)));
  if (gk.db_residual > 1e-8)
    throw Error(Err::QuadratureFailure,
                "detailed balance residual " + detail::sci(gk.db_residual) +
                    "; refine the grid or the quadrature");
  gk.k.P = std::move(P);
  gk.k.pi = gm.w;
  gk.k.support.resize(m);
  for (int i = 0; i < m; ++i) gk.k.support[i] = static_cast<uint32_t>(i);
  return gk;
}

struct RgoReport {
  int m = 0;
  double mu = 0, eta = 0;
  double bound = 0;  // mu / (mu + 1/eta)
  double gap = 0, gap_fine = 0;
  double refinement_delta = 0;
  double slack = 0;  // 10x refinement delta
  double mlsi_upper = 0;
  double renorm_residual = 0, db_residual = 0;
  bool gap_ok = false, mlsi_ok = false, pass = false;
};

inline RgoReport rgo_mlsi_check(const GridMeasure& gm, double eta, int restarts = 16,
                                uint64_t seed = 23, int nodes = 64) {
  if (!gm.vfun)
    throw Error(Err::PreconditionViolated, "grid measure carries no potential function");
  RgoReport r;
  r.m = gm.m();
  r.mu = gm.mu;
  r.eta = eta;
  r.bound = gm.mu / (gm.mu + 1.0 / eta);
  GridKernel gk = rgd_kernel(gm, eta, nodes);
  r.renorm_residual = gk.renorm_residual;
  r.db_residual = gk.db_residual;
  r.gap = spectral_gap(gk.k).gap;
  GridMeasure fine = discretize(gm.vfun, gm.mu, gm.a, gm.b, 2 * gm.m() - 1);
  r.gap_fine = spectral_gap(rgd_kernel(fine, eta, nodes).k).gap;
  r.refinement_delta = std::abs(r.gap_fine - r.gap);
  r.slack = 10.0 * r.refinement_delta + 1e-9;
  r.mlsi_upper = mlsi_adversarial(gk.k, restarts, seed).upper;
  r.gap_ok = r.gap >= r.bound - r.slack;
  r.mlsi_ok = r.mlsi_upper >= r.bound - r.slack;
  r.pass = r.gap_ok && r.mlsi_ok;
  return r;
}

struct KlDecayReport {
  double rate = 0;        // per-step contraction the decay is tested against
  double warm_ratio = 0;  // max density ratio of the start
  std::vector<double> kl;
  double worst_excess = 0;  // max over t of kl[t]/((1-rate)^t kl[0]) - 1
  double slack = 0;
  bool pass = false;
};

// evolve the start distribution by the kernel adjoint and compare KL against
// the geometric envelope (1-rate)^t * KL_0 * (1+slack)
inline KlDecayReport kl_decay_check(const GridKernel& gk, double rate,
                                    const Eigen::VectorXd& f0, int steps = 50,
                                    double slack = 0) {
  const Eigen::VectorXd& pi = gk.k.pi;
  if (f0.size() != pi.size()) throw Error(Err::ParseError, "start density size mismatch");
  if (f0.minCoeff() < 0) throw Error(Err::NegativeInput, "start density must be nonnegative");
  if (!(rate > 0) || rate >= 1) throw Error(Err::PreconditionViolated, "need rate in (0,1)");
  KlDecayReport r;
  r.rate = rate;
  r.slack = slack;
  Eigen::VectorXd f = f0 / pi.dot(f0);
  r.warm_ratio = f.maxCoeff();
  Eigen::VectorXd rho = pi.cwiseProduct(f);
  double kl0 = detail::entropy_of(pi, f);
  r.kl.push_back(kl0);
  r.pass = true;
  double envelope = kl0;
  for (int t = 1; t <= steps; ++t) {
    rho = gk.k.P.transpose() * rho;
    rho /= rho.sum();
    f = rho.cwiseQuotient(pi);
    double kl = detail::entropy_of(pi, f);
    r.kl.push_back(kl);
    envelope *= 1.0 - rate;
    double cap = envelope * (1.0 + slack) + 1e-13 * std::max(1.0, kl0);
    if (kl > cap) r.pass = false;
    if (envelope > 0) r.worst_excess = std::max(r.worst_excess, kl / envelope - 1.0);
  }
  return r;
}

inline std::string export_grid_csv(const GridMeasure& g) {
  std::ostringstream os;
  os.precision(17);
  os << "x,weight,potential\n";
  for (int i = 0; i < g.m(); ++i) os << g.x[i] << "," << g.w[i] << "," << g.v[i] << "\n";
  return os.str();
}

inline std::string export_grid_kernel_csv(const GridKernel& gk) {
  std::ostringstream os;
  os.precision(17);
  int m = gk.gm.m();
  os << "x";
  for (int j = 0; j < m; ++j) os << "," << gk.gm.x[j];
  os << "\n";
  for (int i = 0; i < m; ++i) {
    os << gk.gm.x[i];
    for (int j = 0; j < m; ++j) os << "," << gk.k.P(i, j);
    os << "\n";
  }
  return os.str();
}

}  // namespace locmix

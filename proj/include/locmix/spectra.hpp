#pragma once

#include "locmix/kernels.hpp"

namespace locmix {

struct SpectralReport {
  double gap = 1.0;
  Eigen::VectorXd eigenvalues;  // descending, leading entry 1
  Eigen::VectorXd witness;      // function over support achieving the gap
};

inline void require_reversible(const Kernel& k, double tol = 1e-8) {
  int s = static_cast<int>(k.support.size());
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      if (std::abs(k.pi[i] * k.P(i, j) - k.pi[j] * k.P(j, i)) > tol)
        throw Error(Err::NotReversible, "detailed balance violated at " + std::to_string(i) +
                                            "," + std::to_string(j));
}

inline double dirichlet_form(const Kernel& k, const Eigen::VectorXd& phi) {
  double s = 0;
  int m = static_cast<int>(k.support.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) s += k.pi[i] * k.P(i, j) * sq(phi[i] - phi[j]);
  return 0.5 * s;
}

inline SpectralReport spectral_gap(const Kernel& k) {
  require_reversible(k);
  int s = static_cast<int>(k.support.size());
  SpectralReport r;
  if (s == 1) {
    r.eigenvalues = Eigen::VectorXd::Ones(1);
    r.witness = Eigen::VectorXd::Zero(1);
    r.gap = 1.0;
    return r;
  }
  Eigen::VectorXd sqrtpi = k.pi.cwiseSqrt();
  Eigen::MatrixXd A(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) A(i, j) = sqrtpi[i] * k.P(i, j) / sqrtpi[j];
  A = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  Eigen::VectorXd ev = es.eigenvalues();  // ascending
  r.eigenvalues = ev.reverse();
  r.gap = 1.0 - r.eigenvalues[1];
  // eigenvector of the second-largest eigenvalue, mapped back to a function
  Eigen::VectorXd u = es.eigenvectors().col(s - 2);
  r.witness = u.cwiseQuotient(sqrtpi);
  double mu = k.pi.dot(r.witness);
  r.witness.array() -= mu;
  double nrm = std::sqrt(k.pi.dot(r.witness.cwiseProduct(r.witness)));
  if (nrm > 0) r.witness /= nrm;
  return r;
}

struct MlsiEstimate {
  double upper = 1.0;       // best adversarial bound on the entropy decay rate
  Eigen::VectorXd witness_f;
  int restarts_used = 0;
  double best_ratio = 0;    // sup of Ent[Pf]/Ent[f] found
};

namespace detail {
// entropy functional with the mean tracked as 1 + sum(pi*(f-1)); keeps the
// cancellation error proportional to the deviation of f from constant instead
// of flooring at machine epsilon of 1
inline double entropy_of(const Eigen::VectorXd& pi, const Eigen::VectorXd& f) {
  double m1 = 0, s = 0;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    m1 += pi[i] * (f[i] - 1.0);
    s += pi[i] * xlogx(f[i]);
  }
  double mu = 1.0 + m1;
  double xlm = mu > 0 ? mu * std::log1p(m1) : 0.0;
  return s - xlm;
}
}  // namespace detail

// adversarial search for sup_f Ent[Pf]/Ent[f]; the returned upper bound on the
// entropy decay rate is one-sided (the true rate is at most `upper`)
inline MlsiEstimate mlsi_adversarial(const Kernel& k, int restarts = 50, uint64_t seed = 0,
                                     int max_iter = 5000, double tol = 1e-10) {
  require_reversible(k);
  int s = static_cast<int>(k.support.size());
  if (s < 2) throw Error(Err::DegenerateEntropy, "entropy vanishes identically");
  const double floor_val = 1e-12;
  auto project = [&](Eigen::VectorXd f) {
    for (int i = 0; i < s; ++i) f[i] = std::max(f[i], floor_val);
    return Eigen::VectorXd(f / k.pi.dot(f));
  };
  auto ratio = [&](const Eigen::VectorXd& f) {
    double be = detail::entropy_of(k.pi, f);
    if (be <= 1e-18) return 0.0;
    Eigen::VectorXd pf = k.P * f;
    double r = detail::entropy_of(k.pi, pf) / be;
    // Ent[Pf] <= Ent[f] always holds; tiny overshoot is roundoff, big
    // overshoot means the denominator was pure noise
    if (!(r >= 0.0) || r > 1.0 + 1e-6) return 0.0;
    return std::min(r, 1.0);
  };
  SpectralReport sr = spectral_gap(k);

  MlsiEstimate best;
  std::vector<std::pair<double, Eigen::VectorXd>> results(restarts);
  parallel_for(restarts, [&](int t) {
    auto rng = rng_stream(seed, t);
    std::normal_distribution<double> gauss(0, 1);
    Eigen::VectorXd f(s);
    if (t == 0) {
      f = project(sr.witness.cwiseProduct(sr.witness));
    } else if (t == 1) {
      f = project((Eigen::VectorXd::Ones(s) + 0.5 * sr.witness).cwiseProduct(
          Eigen::VectorXd::Ones(s) + 0.5 * sr.witness));
    } else if (t % 3 == 2) {
      f.setConstant(floor_val);
      f[static_cast<int>(rng() % s)] = 1.0;
      f = project(f);
    } else {
      for (int i = 0; i < s; ++i) f[i] = std::exp(gauss(rng));
      f = project(f);
    }
    double cur = ratio(f);
    double step = 0.1;
    for (int it = 0; it < max_iter; ++it) {
      // gradient of A/B with A = Ent[Pf], B = Ent[f] at the normalized point
      Eigen::VectorXd pf = k.P * f;
      double A = detail::entropy_of(k.pi, pf), B = detail::entropy_of(k.pi, f);
      if (B <= 1e-18) break;
      Eigen::VectorXd gA = Eigen::VectorXd::Zero(s), gB(s);
      for (int i = 0; i < s; ++i) {
        double lp = std::log(std::max(pf[i], 1e-300));
        for (int j = 0; j < s; ++j) gA[j] += k.pi[i] * k.P(i, j) * (1.0 + lp);
      }
      for (int j = 0; j < s; ++j)
        gB[j] = k.pi[j] * (1.0 + std::log(std::max(f[j], 1e-300)));
      Eigen::VectorXd grad = (gA * B - gB * A) / (B * B);
      bool moved = false;
      for (int h = 0; h < 40 && !moved; ++h) {
        Eigen::VectorXd cand = project(f + step * grad);
        double cr = ratio(cand);
        if (cr > cur + 1e-16) {
          f = cand;
          cur = cr;
          step *= 1.5;
          moved = true;
        } else {
          step *= 0.5;
        }
      }
      if (!moved || step < tol) break;
    }
    results[t] = {cur, f};
  });
  for (int t = 0; t < restarts; ++t) {
    if (results[t].first > best.best_ratio) {
      best.best_ratio = results[t].first;
      best.witness_f = results[t].second;
    }
  }
  best.restarts_used = restarts;
  best.upper = std::min(1.0, std::max(0.0, 1.0 - best.best_ratio));
  if (best.witness_f.size() == 0) best.witness_f = Eigen::VectorXd::Ones(s);
  return best;
}

// exact E[Var_{nu_t}[phi]] (or entropy) over the coordinate scheme: average
// over revealed subsets S of size t and revealed values, weighted by marginal
// mass
inline double expected_post_localization(const SpinMeasure& m, int t,
                                         const Eigen::VectorXd& phi, bool entropy_mode = false) {
  int f = m.f();
  if (t < 0 || t > f) throw Error(Err::SubsetTooLarge, "need 0 <= t <= f");
  if (phi.size() != m.w.size()) throw Error(Err::ParseError, "function size mismatch");
  auto subsets = subsets_of_size(f, t);
  double inv = 1.0 / static_cast<double>(subsets.size());
  double acc = 0;
  for (const auto& S : subsets) {
    uint32_t mask = 0;
    for (int j : S) mask |= (1u << j);  // mask in free-config bit space
    for (uint32_t bits = 0; bits < (1u << t); ++bits) {
      uint32_t revealed = 0;
      for (int q = 0; q < t; ++q)
        if ((bits >> q) & 1u) revealed |= (1u << S[q]);
      double mass = 0;
      for (uint32_t fc = 0; fc < m.w.size(); ++fc)
        if ((fc & mask) == revealed) mass += m.w[fc];
      if (mass <= 0) continue;
      double mu = 0, val = 0;
      for (uint32_t fc = 0; fc < m.w.size(); ++fc) {
        if ((fc & mask) != revealed) continue;
        double p = m.w[fc] / mass;
        if (entropy_mode) {
          mu += p * phi[fc];
          val += p * xlogx(phi[fc]);
        } else {
          mu += p * phi[fc];
          val += p * sq(phi[fc]);
        }
      }
      double contrib = entropy_mode ? (val - xlogx(mu)) : (val - sq(mu));
      acc += inv * mass * contrib;
    }
  }
  return acc;
}

struct IdentityReport {
  double max_discrepancy = 0;
  double gap_kernel = 0;
  double gap_quadratic_form = 0;
  int samples = 0;
  bool pass = false;
};

// two facts at once: for sampled phi the kernel Dirichlet form equals the
// expected conditional variance, and the spectral gap equals the smallest
// generalized eigenvalue of that conditional-variance form against Var
inline IdentityReport verify_localization_gap_identity(const SpinMeasure& m, int tau,
                                                       int n_phi, uint64_t seed,
                                                       double tol = 1e-10) {
  Kernel k = kernel_from_coordinate_localization(m, tau);
  int s = static_cast<int>(k.support.size());
  IdentityReport rep;
  rep.samples = n_phi;
  // phi over the kernel support vs phi over free configs of m share indexing
  // only when every free config has positive mass; map support index -> fc
  std::vector<uint32_t> fc_of(s);
  for (int i = 0; i < s; ++i) {
    uint32_t fc = 0;
    for (int j = 0; j < m.f(); ++j)
      if (spin_of_bit(k.support[i], m.free_idx[j]) == +1) fc |= (1u << j);
    fc_of[i] = fc;
  }
  auto lift = [&](const Eigen::VectorXd& phi_sup) {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(m.w.size());
    for (int i = 0; i < s; ++i) full[fc_of[i]] = phi_sup[i];
    return full;
  };
  for (int t = 0; t < n_phi + 1; ++t) {
    auto rng = rng_stream(seed, t);
    std::normal_distribution<double> gauss(0, 1);
    Eigen::VectorXd phi(s);
    if (t == 0)
      phi.setOnes();
    else
      for (int i = 0; i < s; ++i) phi[i] = gauss(rng);
    double lhs = dirichlet_form(k, phi);
    double rhs = expected_post_localization(m, tau, lift(phi));
    rep.max_discrepancy = std::max(rep.max_discrepancy, std::abs(lhs - rhs));
  }
  rep.gap_kernel = spectral_gap(k).gap;
  // whitened quadratic form: with phi = D^{-1/2} U c, Var = |c|^2 and the
  // conditional-variance form becomes U^T D^{-1/2} T D^{-1/2} U
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(s, s);
  {
    auto subsets = subsets_of_size(m.f(), tau);
    double inv = 1.0 / static_cast<double>(subsets.size());
    for (const auto& S : subsets) {
      uint32_t mask = 0;
      for (int j : S) mask |= (1u << m.free_idx[j]);
      for (uint32_t bits = 0; bits < (1u << tau); ++bits) {
        uint32_t revealed = 0;
        for (int q = 0; q < tau; ++q)
          if ((bits >> q) & 1u) revealed |= (1u << m.free_idx[S[q]]);
        std::vector<int> states;
        double mass = 0;
        for (int i = 0; i < s; ++i)
          if ((k.support[i] & mask) == revealed) {
            states.push_back(i);
            mass += k.pi[i];
          }
        if (mass <= 0) continue;
        for (int a : states)
          for (int b : states) {
            double ca = k.pi[a] / mass, cb = k.pi[b] / mass;
            T(a, b) += inv * mass * ((a == b ? ca : 0) - ca * cb);
          }
      }
    }
  }
  Eigen::VectorXd sqrtpi = k.pi.cwiseSqrt();
  // orthonormal basis of the complement of sqrt(pi)
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(sqrtpi);
  Eigen::MatrixXd full_q = qr.householderQ();
  Eigen::MatrixXd U = full_q.rightCols(s - 1);
  Eigen::MatrixXd Dinv = sqrtpi.cwiseInverse().asDiagonal();
  Eigen::MatrixXd Mw = U.transpose() * Dinv * T * Dinv * U;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (Mw + Mw.transpose()));
  rep.gap_quadratic_form = es.eigenvalues().minCoeff();
  rep.pass = rep.max_discrepancy <= tol &&
             std::abs(rep.gap_kernel - rep.gap_quadratic_form) <= 1e-8;
  return rep;
}

struct EntropyStepReport {
  double max_violation = -std::numeric_limits<double>::infinity();
  int samples = 0;
  bool pass = false;
};

// per-function step inequality: Ent[Pf] <= Ent[f] - E[Ent_{nu_tau}[f]]
inline EntropyStepReport verify_entropy_step_inequality(const SpinMeasure& m, int tau,
                                                        int n_f, uint64_t seed,
                                                        double tol = 1e-10) {
  Kernel k = kernel_from_coordinate_localization(m, tau);
  int s = static_cast<int>(k.support.size());
  std::vector<uint32_t> fc_of(s);
  for (int i = 0; i < s; ++i) {
    uint32_t fc = 0;
    for (int j = 0; j < m.f(); ++j)
      if (spin_of_bit(k.support[i], m.free_idx[j]) == +1) fc |= (1u << j);
    fc_of[i] = fc;
  }
  EntropyStepReport rep;
  rep.samples = n_f;
  for (int t = 0; t < n_f + 2; ++t) {
    auto rng = rng_stream(seed, t);
    std::normal_distribution<double> gauss(0, 1);
    Eigen::VectorXd f(s);
    if (t == 0)
      f.setOnes();
    else if (t == 1) {
      f.setConstant(1e-9);
      f[static_cast<int>(rng() % s)] = 1.0;
    } else
      for (int i = 0; i < s; ++i) f[i] = std::exp(gauss(rng));
    Eigen::VectorXd pf = k.P * f;
    double lhs = detail::entropy_of(k.pi, pf);
    Eigen::VectorXd f_free = Eigen::VectorXd::Zero(m.w.size());
    for (int i = 0; i < s; ++i) f_free[fc_of[i]] = f[i];
    double rhs = detail::entropy_of(k.pi, f) - expected_post_localization(m, tau, f_free, true);
    rep.max_violation = std::max(rep.max_violation, lhs - rhs);
  }
  rep.pass = rep.max_violation <= tol;
  return rep;
}

// smallest t with max_x TV(delta_x P^t, pi) <= eps, by repeated multiplication
inline int tv_mixing_time(const Kernel& k, const SpinMeasure& mu0, double eps,
                          long cap = 1000000) {
  if (!(eps > 0 && eps < 0.5)) throw Error(Err::ParseError, "need eps in (0, 1/2)");
  int s = static_cast<int>(k.support.size());
  Eigen::VectorXd p(s);
  for (int i = 0; i < s; ++i) {
    p[i] = mu0.weight_of_full(k.support[i]);
  }
  double mass = p.sum();
  if (std::abs(mass - 1.0) > 1e-9)
    throw Error(Err::NotAbsolutelyContinuous, "initial law puts mass outside the support");
  auto tv = [&](const Eigen::VectorXd& q) { return 0.5 * (q - k.pi).cwiseAbs().sum(); };
  if (tv(p) <= eps) return 0;
  // a unit-modulus nontrivial eigenvalue means TV can stall
  SpectralReport sr = spectral_gap(k);
  double lam_star = std::max(std::abs(sr.eigenvalues[1]),
                             std::abs(sr.eigenvalues[sr.eigenvalues.size() - 1]));
  if (lam_star >= 1.0 - 1e-15)
    throw Error(Err::Nonconvergence, "unit spectral radius on the mean-zero subspace");
  for (long t = 1; t <= cap; ++t) {
    p = (p.transpose() * k.P).transpose();
    if (tv(p) <= eps) return static_cast<int>(t);
  }
  throw Error(Err::Nonconvergence, "TV still above eps at the step cap");
}

struct MixingConsistency {
  int t_measured = 0;
  double gap = 0;
  double eta = 0;  // min stationary mass
  double bound_expression = 0;  // gap^{-1} (log 1/eta + log 1/eps)
  double ratio = 0;             // t_measured / bound_expression
};

inline MixingConsistency fact_mixing_consistency(const Kernel& k, double eps) {
  MixingConsistency r;
  r.gap = spectral_gap(k).gap;
  r.eta = k.pi.minCoeff();
  int worst = 0;
  for (size_t i = 0; i < k.support.size(); ++i) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(Eigen::Index(1) << k.stationary.n);
    w[k.support[i]] = 1;
    SpinMeasure start = materialize(k.stationary.n, w);
    worst = std::max(worst, tv_mixing_time(k, start, eps));
  }
  r.t_measured = worst;
  r.bound_expression = (std::log(1.0 / r.eta) + std::log(1.0 / eps)) / r.gap;
  r.ratio = r.t_measured / r.bound_expression;
  return r;
}

}  // namespace locmix

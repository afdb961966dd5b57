#pragma once

#include "locmix/common.hpp"

namespace locmix {

// Probability measure on {-1,+1}^n with explicit pinned coordinates.
// Weights are stored over the 2^f free-coordinate configurations only,
// lexicographic: bit j of the index is free coordinate free_idx[j],
// set bit = +1, so index 0 is the all-(-1) corner of the free subcube.
struct SpinMeasure {
  int n = 0;
  std::vector<int8_t> pin;    // per coordinate: -1, 0 (free), +1
  std::vector<int> free_idx;  // coordinates with pin == 0, increasing
  Eigen::VectorXd w;          // 2^f normalized weights

  int f() const { return static_cast<int>(free_idx.size()); }

  // Free-config index -> full-config bitmask (bit i set = coordinate i is +1).
  uint32_t full_config(uint32_t fc) const {
    uint32_t full = 0;
    for (int i = 0; i < n; ++i)
      if (pin[i] == +1) full |= (1u << i);
    for (int j = 0; j < f(); ++j)
      if ((fc >> j) & 1u) full |= (1u << free_idx[j]);
    return full;
  }

  double weight_of_full(uint32_t full) const {
    uint32_t fc = 0;
    for (int i = 0; i < n; ++i) {
      int s = spin_of_bit(full, i);
      if (pin[i] != 0) {
        if (s != pin[i]) return 0.0;
      }
    }
    for (int j = 0; j < f(); ++j)
      if (spin_of_bit(full, free_idx[j]) == +1) fc |= (1u << j);
    return w[fc];
  }
};

struct Moments {
  Eigen::VectorXd b;
  Eigen::MatrixXd cov;
  std::vector<uint8_t> free_mask;
};

inline SpinMeasure materialize(int n, const Eigen::VectorXd& full_w) {
  if (n < 1) throw Error(Err::ParseError, "need n >= 1");
  if (n > kMaxCoords)
    throw Error(Err::DimensionTooLarge,
                "n=" + std::to_string(n) + " exceeds " + std::to_string(kMaxCoords));
  if (full_w.size() != (Eigen::Index(1) << n))
    throw Error(Err::ParseError, "weight vector must have 2^n entries");
  Eigen::VectorXd v = full_w;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw Error(Err::NonFinite, "weight " + std::to_string(i));
    if (v[i] < -1e-14) throw Error(Err::NegativeInput, "weight " + std::to_string(i));
    if (v[i] < 0) v[i] = 0;
  }
  double total = v.sum();
  if (!(total > 0)) throw Error(Err::AllZeroMass, "all weights vanish");

  SpinMeasure m;
  m.n = n;
  m.pin.assign(n, 0);
  // a coordinate constant over the support becomes a pin
  for (int i = 0; i < n; ++i) {
    double mass_plus = 0, mass_minus = 0;
    for (uint32_t c = 0; c < v.size(); ++c) {
      if (spin_of_bit(c, i) == +1)
        mass_plus += v[c];
      else
        mass_minus += v[c];
    }
    if (mass_plus == 0) m.pin[i] = -1;
    if (mass_minus == 0) m.pin[i] = +1;
  }
  for (int i = 0; i < n; ++i)
    if (m.pin[i] == 0) m.free_idx.push_back(i);
  int f = m.f();
  m.w = Eigen::VectorXd::Zero(Eigen::Index(1) << f);
  for (uint32_t c = 0; c < v.size(); ++c) {
    if (v[c] == 0) continue;
    uint32_t fc = 0;
    for (int j = 0; j < f; ++j)
      if (spin_of_bit(c, m.free_idx[j]) == +1) fc |= (1u << j);
    m.w[fc] += v[c];
  }
  m.w /= m.w.sum();
  return m;
}

inline Eigen::VectorXd full_weights(const SpinMeasure& m) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(Eigen::Index(1) << m.n);
  for (uint32_t fc = 0; fc < m.w.size(); ++fc) out[m.full_config(fc)] = m.w[fc];
  return out;
}

// Exponential tilt: weights multiplied by exp(<x, v>), computed in log domain.
// Pins are unchanged (the factor is constant on pinned coordinates).
inline SpinMeasure tilt(const SpinMeasure& m, const Eigen::VectorXd& v) {
  if (v.size() != m.n) throw Error(Err::ParseError, "tilt vector size mismatch");
  for (int i = 0; i < m.n; ++i)
    if (!std::isfinite(v[i])) throw Error(Err::NonFinite, "tilt component " + std::to_string(i));
  SpinMeasure out = m;
  int f = m.f();
  Eigen::VectorXd logw(m.w.size());
  for (uint32_t fc = 0; fc < m.w.size(); ++fc) {
    double lw = m.w[fc] > 0 ? std::log(m.w[fc]) : -std::numeric_limits<double>::infinity();
    for (int j = 0; j < f; ++j) lw += v[m.free_idx[j]] * spin_of_bit(fc, j);
    logw[fc] = lw;
  }
  double lse = logsumexp(logw);
  for (uint32_t fc = 0; fc < m.w.size(); ++fc)
    out.w[fc] = std::exp(logw[fc] - lse);
  out.w /= out.w.sum();
  return out;
}

// Pinning: u_i in {-1,0,+1}, nonzero entries restrict to the subcube x_i = u_i
// and renormalize. Pins already present must not be contradicted.
inline SpinMeasure pin(const SpinMeasure& m, const std::vector<int8_t>& u) {
  if (static_cast<int>(u.size()) != m.n) throw Error(Err::ParseError, "pin vector size mismatch");
  for (int i = 0; i < m.n; ++i) {
    if (u[i] != -1 && u[i] != 0 && u[i] != 1)
      throw Error(Err::ParseError, "pin entries must be -1, 0 or +1");
    if (u[i] != 0 && m.pin[i] != 0 && u[i] != m.pin[i])
      throw Error(Err::IncompatiblePin, "coordinate " + std::to_string(i));
  }
  Eigen::VectorXd restricted = Eigen::VectorXd::Zero(m.w.size());
  double mass = 0;
  for (uint32_t fc = 0; fc < m.w.size(); ++fc) {
    bool keep = true;
    for (int j = 0; j < m.f(); ++j) {
      int i = m.free_idx[j];
      if (u[i] != 0 && spin_of_bit(fc, j) != u[i]) {
        keep = false;
        break;
      }
    }
    if (keep) {
      restricted[fc] = m.w[fc];
      mass += m.w[fc];
    }
  }
  if (!(mass > 0)) throw Error(Err::ZeroMassSubcube, "requested subcube has zero mass");
  SpinMeasure tmp = m;
  tmp.w = restricted;
  Eigen::VectorXd fw = full_weights(tmp);
  SpinMeasure out = materialize(m.n, fw);
  // materialize re-derives pins; requested ones are implied by the zeroed mass
  return out;
}

inline SpinMeasure pin_one(const SpinMeasure& m, int i, int s) {
  std::vector<int8_t> u(m.n, 0);
  u[i] = static_cast<int8_t>(s);
  return pin(m, u);
}

inline Moments moments(const SpinMeasure& m) {
  Moments mo;
  mo.b = Eigen::VectorXd::Zero(m.n);
  mo.cov = Eigen::MatrixXd::Zero(m.n, m.n);
  mo.free_mask.assign(m.n, 0);
  int f = m.f();
  Eigen::VectorXd bf = Eigen::VectorXd::Zero(f);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(f, f);
  for (uint32_t fc = 0; fc < m.w.size(); ++fc) {
    double ww = m.w[fc];
    if (ww == 0) continue;
    for (int j = 0; j < f; ++j) {
      int sj = spin_of_bit(fc, j);
      bf[j] += ww * sj;
      for (int k = j + 1; k < f; ++k) second(j, k) += ww * sj * spin_of_bit(fc, k);
    }
  }
  for (int i = 0; i < m.n; ++i) mo.b[i] = m.pin[i];
  for (int j = 0; j < f; ++j) {
    mo.b[m.free_idx[j]] = bf[j];
    mo.free_mask[m.free_idx[j]] = 1;
  }
  for (int j = 0; j < f; ++j) {
    mo.cov(m.free_idx[j], m.free_idx[j]) = 1.0 - sq(bf[j]);
    for (int k = j + 1; k < f; ++k) {
      double c = second(j, k) - bf[j] * bf[k];
      mo.cov(m.free_idx[j], m.free_idx[k]) = c;
      mo.cov(m.free_idx[k], m.free_idx[j]) = c;
    }
  }
  return mo;
}

struct InfluenceReport {
  std::vector<int> coords;  // free coordinates the matrices refer to
  Eigen::MatrixXd psi;      // Cov * diag(Cov)^{-1}
  Eigen::MatrixXd cor;      // diag(Cov)^{-1/2} Cov diag(Cov)^{-1/2}
  double rho = 0;           // spectral radius of psi = operator norm of cor
};

inline InfluenceReport influence_correlation(const SpinMeasure& m) {
  InfluenceReport r;
  r.coords = m.free_idx;
  int f = m.f();
  r.psi = Eigen::MatrixXd::Zero(f, f);
  r.cor = Eigen::MatrixXd::Zero(f, f);
  if (f == 0) return r;
  Moments mo = moments(m);
  Eigen::MatrixXd cf(f, f);
  for (int j = 0; j < f; ++j)
    for (int k = 0; k < f; ++k) cf(j, k) = mo.cov(m.free_idx[j], m.free_idx[k]);
  for (int j = 0; j < f; ++j)
    if (!(cf(j, j) > 0))
      throw Error(Err::DegenerateCoordinate,
                  "zero variance at free coordinate " + std::to_string(m.free_idx[j]));
  Eigen::VectorXd d = cf.diagonal();
  for (int j = 0; j < f; ++j)
    for (int k = 0; k < f; ++k) {
      r.psi(j, k) = cf(j, k) / d[k];
      r.cor(j, k) = cf(j, k) / std::sqrt(d[j] * d[k]);
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r.cor);
  r.rho = es.eigenvalues().cwiseAbs().maxCoeff();
  return r;
}

// Functions on the support are vectors over free configs, aligned with w.
inline double mean(const SpinMeasure& m, const Eigen::VectorXd& phi) {
  if (phi.size() != m.w.size()) throw Error(Err::ParseError, "function size mismatch");
  return m.w.dot(phi);
}

inline double variance(const SpinMeasure& m, const Eigen::VectorXd& phi) {
  double mu = mean(m, phi);
  double s = 0;
  for (Eigen::Index i = 0; i < phi.size(); ++i) s += m.w[i] * sq(phi[i] - mu);
  return s;
}

inline double xlogx(double x) { return x > 0 ? x * std::log(x) : 0.0; }

inline double entropy_functional(const SpinMeasure& m, const Eigen::VectorXd& fvals) {
  if (fvals.size() != m.w.size()) throw Error(Err::ParseError, "function size mismatch");
  double mu = 0, s = 0;
  for (Eigen::Index i = 0; i < fvals.size(); ++i) {
    double fx = fvals[i];
    if (!std::isfinite(fx)) throw Error(Err::NonFinite, "f " + std::to_string(i));
    if (fx < -1e-14) throw Error(Err::NegativeInput, "f " + std::to_string(i));
    if (fx < 0) fx = 0;
    mu += m.w[i] * fx;
    s += m.w[i] * xlogx(fx);
  }
  return s - xlogx(mu);
}

inline double kl_divergence(const SpinMeasure& mu, const SpinMeasure& nu) {
  if (mu.n != nu.n) throw Error(Err::ParseError, "kl: dimension mismatch");
  Eigen::VectorXd wm = full_weights(mu), wn = full_weights(nu);
  double s = 0;
  for (Eigen::Index c = 0; c < wm.size(); ++c) {
    if (wm[c] == 0) continue;
    if (wn[c] == 0)
      throw Error(Err::NotAbsolutelyContinuous, "config " + std::to_string(c));
    s += wm[c] * std::log(wm[c] / wn[c]);
  }
  return std::max(s, 0.0);
}

// log of the Laplace transform  theta -> log E[exp(<x, theta>)],
// including the constant contribution of pinned coordinates.
inline double log_laplace(const SpinMeasure& m, const Eigen::VectorXd& theta) {
  if (theta.size() != m.n) throw Error(Err::ParseError, "theta size mismatch");
  double pinned = 0;
  for (int i = 0; i < m.n; ++i)
    if (m.pin[i] != 0) pinned += theta[i] * m.pin[i];
  int f = m.f();
  Eigen::VectorXd logw(m.w.size());
  for (uint32_t fc = 0; fc < m.w.size(); ++fc) {
    double lw = m.w[fc] > 0 ? std::log(m.w[fc]) : -std::numeric_limits<double>::infinity();
    for (int j = 0; j < f; ++j) lw += theta[m.free_idx[j]] * spin_of_bit(fc, j);
    logw[fc] = lw;
  }
  return logsumexp(logw) + pinned;
}

struct TiltResult {
  Eigen::VectorXd v;
  SpinMeasure tilted;
  int iterations = 0;
};

// Finds v with  b(tilt(m, v)) = target  by damped Newton on the convex dual
// g(v) = log_laplace(v) - <v, target>.  Hessian is Cov(tilt(m, v)).
inline TiltResult moment_matching_tilt(const SpinMeasure& m, const Eigen::VectorXd& target,
                                       double tol = 1e-9, int max_iter = 200,
                                       double box = 40.0) {
  if (target.size() != m.n) throw Error(Err::ParseError, "target size mismatch");
  for (int i = 0; i < m.n; ++i) {
    if (m.pin[i] != 0) {
      if (std::abs(target[i] - m.pin[i]) > tol)
        throw Error(Err::OutsideHull, "pinned coordinate " + std::to_string(i));
    } else if (std::abs(target[i]) >= 1.0) {
      throw Error(Err::OutsideHull, "coordinate " + std::to_string(i));
    }
  }
  int f = m.f();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m.n);
  TiltResult res;
  if (f == 0) {
    res.v = v;
    res.tilted = m;
    return res;
  }
  Eigen::VectorXd tf(f);
  for (int j = 0; j < f; ++j) tf[j] = target[m.free_idx[j]];

  auto objective = [&](const Eigen::VectorXd& vn) {
    return log_laplace(m, vn) - vn.dot(target);
  };
  double cur = objective(v);
  SpinMeasure tm = m;
  for (int it = 0; it < max_iter; ++it) {
    tm = tilt(m, v);
    Moments mo = moments(tm);
    Eigen::VectorXd r(f);
    for (int j = 0; j < f; ++j) r[j] = mo.b[m.free_idx[j]] - tf[j];
    if (r.cwiseAbs().maxCoeff() <= tol) {
      res.v = v;
      res.tilted = tm;
      res.iterations = it;
      return res;
    }
    Eigen::MatrixXd H(f, f);
    for (int j = 0; j < f; ++j)
      for (int k = 0; k < f; ++k) H(j, k) = mo.cov(m.free_idx[j], m.free_idx[k]);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd step;
    bool ok = false;
    if (ldlt.info() == Eigen::Success) {
      step = ldlt.solve(r);
      ok = step.allFinite() && (H * step - r).norm() <= 1e-8 * std::max(1.0, r.norm());
    }
    if (!ok) {
      // singular or inconsistent: ridge solve pushes along the flat direction
      Eigen::MatrixXd Hr = H + 1e-12 * Eigen::MatrixXd::Identity(f, f);
      step = Hr.ldlt().solve(r);
    }
    double alpha = 1.0;
    for (;;) {
      Eigen::VectorXd vn = v;
      for (int j = 0; j < f; ++j) vn[m.free_idx[j]] -= alpha * step[j];
      bool inside = true;
      for (int j = 0; j < f; ++j)
        if (std::abs(vn[m.free_idx[j]]) > box) inside = false;
      double nxt = inside ? objective(vn) : std::numeric_limits<double>::infinity();
      if (inside && nxt <= cur + 1e-15 * std::abs(cur)) {
        v = vn;
        cur = nxt;
        break;
      }
      alpha *= 0.5;
      if (alpha < 1e-18)
        throw Error(Err::OutsideHull, "step collapsed at the tilt box boundary");
    }
    double vmax = 0;
    for (int j = 0; j < f; ++j) vmax = std::max(vmax, std::abs(v[m.free_idx[j]]));
    if (vmax > box - 1e-3)
      throw Error(Err::OutsideHull, "tilt vector reached the search box");
  }
  throw Error(Err::MaxIterations, "moment matching did not converge");
}

}  // namespace locmix

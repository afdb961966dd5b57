#pragma once

#include <sstream>

#include "locmix/spin_measure.hpp"

namespace locmix {

// Reversible transition matrix over the positive-mass configurations of its
// stationary measure. support holds full-config bitmasks in increasing order.
struct Kernel {
  std::vector<uint32_t> support;
  Eigen::MatrixXd P;
  Eigen::VectorXd pi;  // stationary weights aligned with support
  SpinMeasure stationary;

  int index_of(uint32_t config) const {
    auto it = std::lower_bound(support.begin(), support.end(), config);
    if (it == support.end() || *it != config) return -1;
    return static_cast<int>(it - support.begin());
  }
};

inline void kernel_budget_check(int f, int soft_cap = 12) {
  if (f > 14)
    throw Error(Err::DimensionTooLarge, "kernel over " + std::to_string(f) + " free coordinates");
  if (f > soft_cap)
    throw Error(Err::BudgetExceeded, "kernel soft cap " + std::to_string(soft_cap) +
                                         " below f=" + std::to_string(f));
}

inline std::vector<uint32_t> kernel_support(const SpinMeasure& m) {
  std::vector<uint32_t> s;
  for (uint32_t fc = 0; fc < m.w.size(); ++fc)
    if (m.w[fc] > 0) s.push_back(m.full_config(fc));
  std::sort(s.begin(), s.end());
  return s;
}

inline void validate_kernel(const Kernel& k, double row_tol = 1e-12, double db_tol = 1e-10) {
  int s = static_cast<int>(k.support.size());
  for (int i = 0; i < s; ++i) {
    double row = k.P.row(i).sum();
    if (std::abs(row - 1.0) > row_tol)
      throw Error(Err::NonFinite, "row " + std::to_string(i) + " sums to " + std::to_string(row));
    for (int j = 0; j < s; ++j)
      if (k.P(i, j) < -1e-14)
        throw Error(Err::NonFinite, "negative transition probability");
  }
  double worst_db = 0, worst_stat = 0;
  for (int i = 0; i < s; ++i) {
    double out = 0;
    for (int j = 0; j < s; ++j) {
      worst_db = std::max(worst_db, std::abs(k.pi[i] * k.P(i, j) - k.pi[j] * k.P(j, i)));
      out += k.pi[j] * k.P(j, i);
    }
    worst_stat = std::max(worst_stat, std::abs(out - k.pi[i]));
  }
  if (worst_db > db_tol) throw Error(Err::NotReversible, "detailed balance off by " + std::to_string(worst_db));
  if (worst_stat > 1e-10) throw Error(Err::NotReversible, "stationarity off by " + std::to_string(worst_stat));
}

inline Kernel make_kernel(const SpinMeasure& m, const Eigen::MatrixXd& P, bool validate = true) {
  Kernel k;
  k.support = kernel_support(m);
  k.P = P;
  k.stationary = m;
  int s = static_cast<int>(k.support.size());
  k.pi.resize(s);
  for (int i = 0; i < s; ++i) k.pi[i] = m.weight_of_full(k.support[i]);
  k.pi /= k.pi.sum();
  if (validate) validate_kernel(k);
  return k;
}

// single-site dynamics: pick one of the f free coordinates uniformly, move to
// the flipped configuration with probability nu(y)/(nu(x)+nu(y))
inline Kernel glauber(const SpinMeasure& m) {
  int f = m.f();
  if (f == 0) throw Error(Err::NoFreeCoordinates, "all coordinates pinned");
  kernel_budget_check(f, 14);
  std::vector<uint32_t> sup = kernel_support(m);
  int s = static_cast<int>(sup.size());
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(s, s);
  Kernel k;
  k.support = sup;
  for (int i = 0; i < s; ++i) {
    uint32_t x = sup[i];
    double wx = m.weight_of_full(x);
    double stay = 1.0;
    for (int j = 0; j < f; ++j) {
      uint32_t y = x ^ (1u << m.free_idx[j]);
      double wy = m.weight_of_full(y);
      if (wy <= 0) continue;
      auto it = std::lower_bound(sup.begin(), sup.end(), y);
      double p = (1.0 / f) * wy / (wx + wy);
      P(i, static_cast<int>(it - sup.begin())) = p;
      stay -= p;
    }
    P(i, i) = stay;
  }
  return make_kernel(m, P);
}

// resample a uniformly random size-l subset of the free coordinates from the
// conditional measure given the rest
inline Kernel l_glauber(const SpinMeasure& m, int l, int soft_cap = 12) {
  int f = m.f();
  if (f == 0) throw Error(Err::NoFreeCoordinates, "all coordinates pinned");
  if (l < 1 || l > f) throw Error(Err::SubsetTooLarge, "need 1 <= l <= " + std::to_string(f));
  kernel_budget_check(f, soft_cap);
  std::vector<uint32_t> sup = kernel_support(m);
  int s = static_cast<int>(sup.size());
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(s, s);
  auto subsets = subsets_of_size(f, l);
  double inv = 1.0 / static_cast<double>(subsets.size());
  for (const auto& A : subsets) {
    uint32_t mask = 0;  // full-config bit mask of the resampled coordinates
    for (int j : A) mask |= (1u << m.free_idx[j]);
    for (int i = 0; i < s; ++i) {
      uint32_t x = sup[i];
      // conditional of nu given the configuration off A
      double z = 0;
      for (uint32_t bits = 0; bits < (1u << l); ++bits) {
        uint32_t y = x & ~mask;
        for (int t = 0; t < l; ++t)
          if ((bits >> t) & 1u) y |= (1u << m.free_idx[A[t]]);
        z += m.weight_of_full(y);
      }
      for (uint32_t bits = 0; bits < (1u << l); ++bits) {
        uint32_t y = x & ~mask;
        for (int t = 0; t < l; ++t)
          if ((bits >> t) & 1u) y |= (1u << m.free_idx[A[t]]);
        double wy = m.weight_of_full(y);
        if (wy <= 0) continue;
        auto it = std::lower_bound(sup.begin(), sup.end(), y);
        P(i, static_cast<int>(it - sup.begin())) += inv * wy / z;
      }
    }
  }
  return make_kernel(m, P);
}

// literal evaluation of the induced kernel of the coordinate scheme stopped
// after tau reveals: average over revealed subsets S and revealed values of
// cond(x) * cond(y) / nu(x)
inline Kernel kernel_from_coordinate_localization(const SpinMeasure& m, int tau,
                                                  int soft_cap = 12) {
  int f = m.f();
  if (tau < 0 || tau > f) throw Error(Err::SubsetTooLarge, "need 0 <= tau <= f");
  kernel_budget_check(f, soft_cap);
  std::vector<uint32_t> sup = kernel_support(m);
  int s = static_cast<int>(sup.size());
  std::vector<double> wsup(s);
  for (int i = 0; i < s; ++i) {
    wsup[i] = m.weight_of_full(sup[i]);
    if (!(wsup[i] > 0)) throw Error(Err::ZeroStationaryRow, "state " + std::to_string(i));
  }
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(s, s);
  auto subsets = subsets_of_size(f, tau);
  double inv = 1.0 / static_cast<double>(subsets.size());
  std::vector<int> cond_states;
  for (const auto& S : subsets) {
    uint32_t mask = 0;
    for (int j : S) mask |= (1u << m.free_idx[j]);
    for (uint32_t bits = 0; bits < (1u << tau); ++bits) {
      uint32_t revealed = 0;
      for (int t = 0; t < tau; ++t)
        if ((bits >> t) & 1u) revealed |= (1u << m.free_idx[S[t]]);
      cond_states.clear();
      double mass = 0;
      for (int i = 0; i < s; ++i)
        if ((sup[i] & mask) == revealed) {
          cond_states.push_back(i);
          mass += wsup[i];
        }
      if (mass <= 0) continue;
      for (int a : cond_states)
        for (int b : cond_states)
          P(a, b) += inv * mass * (wsup[a] / mass) * (wsup[b] / mass) / wsup[a];
    }
  }
  return make_kernel(m, P);
}

struct CubeRgdResult {
  Kernel kernel;            // symmetrized, satisfies the type invariants
  Eigen::MatrixXd raw_P;    // Monte Carlo row estimates before symmetrization
  Eigen::MatrixXd se;       // per-entry standard errors of raw_P
  double worst_reversibility_gap = 0;  // max |pi_x P_xy - pi_y P_yx| on raw rows
  double worst_reversibility_tol = 0;  // 3x propagated standard error at that entry
  bool reversibility_within_3se = true;
};

// restricted Gaussian dynamics on the cube: from x, draw y ~ N(x, eta I) over
// the free coordinates and resample from nu tilted by y/eta
inline CubeRgdResult cube_rgd(const SpinMeasure& m, double eta, int mc_samples,
                              uint64_t seed, double se_target = -1, int soft_cap = 12) {
  if (!(eta > 0)) throw Error(Err::ParseError, "need eta > 0");
  if (mc_samples < 100) throw Error(Err::InsufficientSamples, "need at least 100 samples");
  int f = m.f();
  if (f == 0) throw Error(Err::NoFreeCoordinates, "all coordinates pinned");
  kernel_budget_check(f, soft_cap);
  std::vector<uint32_t> sup = kernel_support(m);
  int s = static_cast<int>(sup.size());
  CubeRgdResult res;
  res.raw_P = Eigen::MatrixXd::Zero(s, s);
  res.se = Eigen::MatrixXd::Zero(s, s);
  double sqeta = std::sqrt(eta);
  parallel_for(s, [&](int i) {
    auto rng = rng_stream(seed, i);
    std::normal_distribution<double> gauss(0.0, 1.0);
    uint32_t x = sup[i];
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(s), m2 = Eigen::VectorXd::Zero(s);
    Eigen::VectorXd logw(s), p(s);
    for (int it = 0; it < mc_samples; ++it) {
      // y = x + sqrt(eta) g; only <z, y>/eta matters on the support
      Eigen::VectorXd y(f);
      for (int t = 0; t < f; ++t) y[t] = spin_of_bit(x, m.free_idx[t]) + sqeta * gauss(rng);
      for (int j = 0; j < s; ++j) {
        double dot = 0;
        for (int t = 0; t < f; ++t) dot += spin_of_bit(sup[j], m.free_idx[t]) * y[t];
        logw[j] = std::log(m.weight_of_full(sup[j])) + dot / eta;
      }
      double lse = logsumexp(logw);
      for (int j = 0; j < s; ++j) p[j] = std::exp(logw[j] - lse);
      mean += p;
      m2 += p.cwiseProduct(p);
    }
    mean /= mc_samples;
    m2 /= mc_samples;
    for (int j = 0; j < s; ++j) {
      res.raw_P(i, j) = mean[j];
      double var = std::max(0.0, m2[j] - sq(mean[j]));
      res.se(i, j) = std::sqrt(var / mc_samples);
    }
  });
  if (se_target > 0 && res.se.maxCoeff() > se_target)
    throw Error(Err::InsufficientSamples,
                "worst standard error " + std::to_string(res.se.maxCoeff()));
  Eigen::VectorXd pi(s);
  for (int i = 0; i < s; ++i) pi[i] = m.weight_of_full(sup[i]);
  pi /= pi.sum();
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      double gap = std::abs(pi[i] * res.raw_P(i, j) - pi[j] * res.raw_P(j, i));
      double tol = 3.0 * (pi[i] * res.se(i, j) + pi[j] * res.se(j, i)) + 1e-15;
      if (gap > res.worst_reversibility_gap) {
        res.worst_reversibility_gap = gap;
        res.worst_reversibility_tol = tol;
      }
      if (gap > tol) res.reversibility_within_3se = false;
    }
  // symmetrize the flow, then absorb row-sum slack into the diagonal (which
  // never enters detailed balance); if slack would go negative anywhere the
  // off-diagonal flow is damped by one global factor to stay stochastic
  Eigen::MatrixXd flow(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      flow(i, j) = 0.5 * (pi[i] * res.raw_P(i, j) + pi[j] * res.raw_P(j, i));
  double damp = 1.0;
  for (int i = 0; i < s; ++i) {
    double off = flow.row(i).sum() - flow(i, i);
    if (off > pi[i]) damp = std::min(damp, pi[i] / off);
  }
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(s, s);
  for (int i = 0; i < s; ++i) {
    double off = 0;
    for (int j = 0; j < s; ++j)
      if (j != i) {
        P(i, j) = damp * flow(i, j) / pi[i];
        off += P(i, j);
      }
    P(i, i) = 1.0 - off;
  }
  res.kernel = make_kernel(m, P);
  return res;
}

inline std::string config_string(uint32_t config, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += spin_of_bit(config, i) == +1 ? '+' : '-';
  return s;
}

inline std::string export_kernel_csv(const Kernel& k) {
  std::ostringstream os;
  os.precision(17);
  int n = k.stationary.n;
  os << "config";
  for (uint32_t c : k.support) os << "," << config_string(c, n);
  os << "\n";
  for (size_t i = 0; i < k.support.size(); ++i) {
    os << config_string(k.support[i], n);
    for (Eigen::Index j = 0; j < k.P.cols(); ++j) os << "," << k.P(i, j);
    os << "\n";
  }
  return os.str();
}

}  // namespace locmix

#pragma once

#include "catch_amalgamated.hpp"
#include "locmix/spin_measure.hpp"

namespace testutil {

using namespace locmix;

// positive weights, no pins
inline SpinMeasure random_measure(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Eigen::VectorXd w(Eigen::Index(1) << n);
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = u(rng);
  return materialize(n, w);
}

// weights with a sprinkling of zeros, support kept connected enough to use
inline SpinMeasure random_sparse_measure(int n, std::mt19937_64& rng, double p_zero = 0.3) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution z(p_zero);
  Eigen::VectorXd w(Eigen::Index(1) << n);
  for (;;) {
    int nonzero = 0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w[i] = z(rng) ? 0.0 : u(rng);
      if (w[i] > 0) ++nonzero;
    }
    if (nonzero >= 2) break;
  }
  return materialize(n, w);
}

inline Eigen::VectorXd random_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

inline double max_full_diff(const SpinMeasure& a, const SpinMeasure& b) {
  return (full_weights(a) - full_weights(b)).cwiseAbs().maxCoeff();
}

inline double op_norm(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()[0];
}

inline double spectral_radius(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(a);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace testutil

#include "helpers.hpp"
#include "locmix/spectra.hpp"

using namespace locmix;
using namespace testutil;
using Catch::Approx;

namespace {
SpinMeasure uniform_measure(int n) {
  return materialize(n, Eigen::VectorXd::Ones(Eigen::Index(1) << n));
}

Kernel two_state(double a, double b) {
  Eigen::VectorXd w(2);
  w << b / (a + b), a / (a + b);
  Eigen::MatrixXd P(2, 2);
  P << 1 - a, a, b, 1 - b;
  return make_kernel(materialize(1, w), P);
}
}  // namespace

TEST_CASE("spectral gap closed forms") {
  auto rng = rng_stream(41, 0);
  Kernel rank_one = kernel_from_coordinate_localization(random_measure(3, rng), 0);
  CHECK(spectral_gap(rank_one).gap == Approx(1.0).margin(1e-10));

  // two-state chain: eigenvalues 1 and 1-a-b
  for (auto [a, b] : std::vector<std::pair<double, double>>{{0.3, 0.5}, {0.1, 0.05}, {0.9, 0.8}}) {
    SpectralReport r = spectral_gap(two_state(a, b));
    CHECK(r.gap == Approx(a + b).margin(1e-12));
  }

  for (int n : {2, 3, 4}) {
    SpectralReport r = spectral_gap(glauber(uniform_measure(n)));
    CHECK(r.gap == Approx(1.0 / n).margin(1e-12));
  }
}

TEST_CASE("spectral witness achieves the gap as a Rayleigh quotient") {
  auto rng = rng_stream(42, 0);
  for (int trial = 0; trial < 10; ++trial) {
    int n = 2 + static_cast<int>(rng() % 4);
    SpinMeasure m = trial % 2 ? random_sparse_measure(n, rng) : random_measure(n, rng);
    if (m.f() < 1) continue;
    Kernel k = glauber(m);
    SpectralReport r = spectral_gap(k);
    double var = k.pi.dot(r.witness.cwiseProduct(r.witness)) - sq(k.pi.dot(r.witness));
    REQUIRE(var > 1e-12);
    CHECK(dirichlet_form(k, r.witness) / var == Approx(r.gap).margin(1e-9));
    CHECK(std::abs(k.pi.dot(r.witness)) < 1e-10);
    CHECK(r.gap >= -1e-12);
    CHECK(r.gap <= 2 + 1e-12);
  }
}

TEST_CASE("spectral gap ignores coordinate labels") {
  auto rng = rng_stream(43, 0);
  SpinMeasure m = random_measure(4, rng);
  Eigen::VectorXd fw = full_weights(m);
  Eigen::VectorXd pw = Eigen::VectorXd::Zero(fw.size());
  std::vector<int> perm = {3, 1, 0, 2};
  for (uint32_t c = 0; c < fw.size(); ++c) {
    uint32_t pc = 0;
    for (int i = 0; i < 4; ++i)
      if ((c >> i) & 1u) pc |= (1u << perm[i]);
    pw[pc] = fw[c];
  }
  SpinMeasure pm = materialize(4, pw);
  CHECK(spectral_gap(glauber(m)).gap == Approx(spectral_gap(glauber(pm)).gap).margin(1e-10));
}

TEST_CASE("non-reversible input is rejected") {
  Kernel k = two_state(0.3, 0.5);
  k.P(0, 0) += 0.1;
  k.P(0, 1) -= 0.1;
  CHECK_THROWS_MATCHES(spectral_gap(k), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::NotReversible;
                       }));
}

TEST_CASE("entropy-decay search on kernels with constant image") {
  // single spin: P has rank one, Pf is constant, decay upper bound is 1
  Eigen::VectorXd w(2);
  w << 0.4, 0.6;
  MlsiEstimate e = mlsi_adversarial(glauber(materialize(1, w)), 20, 5);
  CHECK(e.upper == Approx(1.0).margin(1e-8));
  MlsiEstimate e2 = mlsi_adversarial(two_state(0.5, 0.5), 20, 6);
  CHECK(e2.upper == Approx(1.0).margin(1e-8));
}

TEST_CASE("entropy-decay search on the two-bit uniform chain finds the indicator optimum") {
  // sup Ent[Pf]/Ent[f] = 1/4, attained by a one-configuration indicator
  MlsiEstimate e = mlsi_adversarial(glauber(uniform_measure(2)), 50, 7);
  CHECK(e.best_ratio == Approx(0.25).margin(1e-3));
  CHECK(e.upper == Approx(0.75).margin(1e-3));
  CHECK(e.upper <= 1.0);
  CHECK(e.restarts_used == 50);
  // witness reproduces the reported value
  Eigen::VectorXd pf = glauber(uniform_measure(2)).P * e.witness_f;
  Kernel k = glauber(uniform_measure(2));
  double rep = detail::entropy_of(k.pi, pf) / detail::entropy_of(k.pi, e.witness_f);
  CHECK(1.0 - rep == Approx(e.upper).margin(1e-8));
}

TEST_CASE("entropy-decay search rejects dirac measures") {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(4);
  w[2] = 1;
  SpinMeasure dirac = materialize(2, w);
  Kernel k;
  k.support = kernel_support(dirac);
  k.P = Eigen::MatrixXd::Ones(1, 1);
  k.pi = Eigen::VectorXd::Ones(1);
  k.stationary = dirac;
  CHECK_THROWS_MATCHES(mlsi_adversarial(k, 5, 8), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::DegenerateEntropy;
                       }));
}

TEST_CASE("dirichlet form equals expected conditional variance") {
  // phi = x1 on uniform 3 bits, reveal 2: only the subset {2,3} leaves
  // variance 1, with probability 1/3
  SpinMeasure m = uniform_measure(3);
  Eigen::VectorXd phi(8);
  for (uint32_t fc = 0; fc < 8; ++fc) phi[fc] = spin_of_bit(fc, 0);
  CHECK(expected_post_localization(m, 2, phi) == Approx(1.0 / 3).margin(1e-12));
  Kernel k = kernel_from_coordinate_localization(m, 2);
  Eigen::VectorXd phi_sup(8);
  for (int i = 0; i < 8; ++i) phi_sup[i] = spin_of_bit(k.support[i], 0);
  CHECK(dirichlet_form(k, phi_sup) == Approx(1.0 / 3).margin(1e-12));

  IdentityReport rep = verify_localization_gap_identity(m, 2, 30, 44);
  CHECK(rep.pass);
  CHECK(rep.gap_kernel == Approx(1.0 / 3).margin(1e-10));
  CHECK(rep.gap_quadratic_form == Approx(1.0 / 3).margin(1e-10));
}

TEST_CASE("gap identity on random instances") {
  auto rng = rng_stream(45, 0);
  for (int trial = 0; trial < 8; ++trial) {
    int n = 2 + static_cast<int>(rng() % 5);
    SpinMeasure m = trial % 2 ? random_sparse_measure(n, rng) : random_measure(n, rng);
    int f = m.f();
    if (f < 1) continue;
    int tau = static_cast<int>(rng() % (f + 1));
    IdentityReport rep = verify_localization_gap_identity(m, tau, 25, 46 + trial);
    CHECK(rep.max_discrepancy <= 1e-10);
    CHECK(rep.pass);
  }
}

TEST_CASE("entropy step inequality") {
  SpinMeasure m = uniform_measure(2);
  EntropyStepReport rep = verify_entropy_step_inequality(m, 1, 30, 47);
  CHECK(rep.pass);

  // indicator on uniform n=2, tau=1: strict inequality with hand-computed sides
  Kernel k = kernel_from_coordinate_localization(m, 1);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(4);
  f[0] = 4.0;
  Eigen::VectorXd pf = k.P * f;
  double lhs = detail::entropy_of(k.pi, pf);
  double ent_f = detail::entropy_of(k.pi, f);
  double cond = expected_post_localization(m, 1, f, true);
  // Ent[f] = log 4, E[Ent_tau[f]] = log 2, Ent[Pf] = (1/2) log 2
  CHECK(ent_f == Approx(std::log(4.0)).margin(1e-12));
  CHECK(cond == Approx(std::log(2.0)).margin(1e-12));
  CHECK(lhs == Approx(0.5 * std::log(2.0)).margin(1e-12));
  CHECK(lhs < ent_f - cond - 1e-6);

  auto rng = rng_stream(48, 0);
  for (int trial = 0; trial < 6; ++trial) {
    int n = 2 + static_cast<int>(rng() % 5);
    SpinMeasure mm = trial % 2 ? random_sparse_measure(n, rng) : random_measure(n, rng);
    int ff = mm.f();
    if (ff < 1) continue;
    int tau = static_cast<int>(rng() % (ff + 1));
    CHECK(verify_entropy_step_inequality(mm, tau, 20, 49 + trial).pass);
  }
}

TEST_CASE("expected conditional variance endpoints and monotonicity") {
  auto rng = rng_stream(50, 0);
  SpinMeasure m = uniform_measure(3);
  Eigen::VectorXd phi(8);
  for (uint32_t fc = 0; fc < 8; ++fc)
    phi[fc] = spin_of_bit(fc, 0) + spin_of_bit(fc, 1) + spin_of_bit(fc, 2);
  CHECK(expected_post_localization(m, 0, phi) == Approx(variance(m, phi)).margin(1e-12));
  CHECK(expected_post_localization(m, 1, phi) == Approx(2.0).margin(1e-12));
  CHECK(expected_post_localization(m, 3, phi) == Approx(0.0).margin(1e-14));

  for (int trial = 0; trial < 8; ++trial) {
    int n = 2 + static_cast<int>(rng() % 5);
    SpinMeasure mm = random_measure(n, rng);
    Eigen::VectorXd p = random_vec(static_cast<int>(mm.w.size()), rng);
    double prev = expected_post_localization(mm, 0, p);
    for (int t = 1; t <= mm.f(); ++t) {
      double cur = expected_post_localization(mm, t, p);
      CHECK(cur <= prev + 1e-12);
      prev = cur;
    }
  }
}

TEST_CASE("tv mixing time matches the two-state closed form") {
  for (auto [a, b] : std::vector<std::pair<double, double>>{{0.2, 0.3}, {0.05, 0.4}, {0.6, 0.7}}) {
    Kernel k = two_state(a, b);
    Eigen::VectorXd w0 = Eigen::VectorXd::Zero(2);
    w0[0] = 1;
    SpinMeasure start = materialize(1, w0);
    double tv0 = 0.5 * ((1.0 - k.pi[0]) + k.pi[1]);
    double eps = 0.09;  // off the exact-boundary case tv(t) == eps
    int want;
    if (tv0 <= eps)
      want = 0;
    else
      want = static_cast<int>(
          std::ceil(std::log(eps / tv0) / std::log(std::abs(1 - a - b)) - 1e-9));
    CHECK(tv_mixing_time(k, start, eps) == want);
  }
}

TEST_CASE("tv mixing time against brute-force powering") {
  SpinMeasure m = uniform_measure(3);
  Kernel k = glauber(m);
  double eps = 0.25;
  int worst_direct = 0;
  for (int i = 0; i < 8; ++i) {
    Eigen::RowVectorXd p = Eigen::RowVectorXd::Zero(8);
    p[i] = 1;
    int t = 0;
    while (0.5 * (p.transpose() - k.pi).cwiseAbs().sum() > eps) {
      p = p * k.P;
      ++t;
    }
    worst_direct = std::max(worst_direct, t);
  }
  int worst_api = 0;
  for (int i = 0; i < 8; ++i) {
    Eigen::VectorXd w0 = Eigen::VectorXd::Zero(8);
    w0[k.support[i]] = 1;
    worst_api = std::max(worst_api, tv_mixing_time(k, materialize(3, w0), eps));
  }
  CHECK(worst_api == worst_direct);

  // stationary start mixes immediately
  CHECK(tv_mixing_time(k, m, 0.1) == 0);

  // flip chain has eigenvalue -1: no convergence
  Eigen::MatrixXd flip(2, 2);
  flip << 0, 1, 1, 0;
  Kernel per = make_kernel(materialize(1, Eigen::VectorXd::Ones(2)), flip);
  Eigen::VectorXd d0 = Eigen::VectorXd::Zero(2);
  d0[0] = 1;
  CHECK_THROWS_MATCHES(tv_mixing_time(per, materialize(1, d0), 0.1), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::Nonconvergence;
                       }));
}

TEST_CASE("mixing consistency ratio is reported") {
  Kernel k = glauber(uniform_measure(3));
  MixingConsistency r = fact_mixing_consistency(k, 0.25);
  CHECK(r.t_measured > 0);
  CHECK(r.gap == Approx(1.0 / 3).margin(1e-12));
  CHECK(r.eta == Approx(0.125).margin(1e-12));
  CHECK(r.bound_expression > 0);
  CHECK(r.ratio > 0);
  CHECK(r.ratio < 1.5);
}

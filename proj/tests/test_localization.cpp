#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "catch_amalgamated.hpp"
#include "helpers.hpp"
#include "json.hpp"
#include "locmix/localization.hpp"
#include "locmix/models.hpp"

using namespace locmix;
using testutil::max_full_diff;
using testutil::random_measure;
using testutil::random_sparse_measure;

namespace {

SpinMeasure uniform_measure(int n) {
  return materialize(n, Eigen::VectorXd::Ones(Eigen::Index(1) << n));
}

Eigen::VectorXd random_positive_fn(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 3.0);
  Eigen::VectorXd v(size);
  for (int i = 0; i < size; ++i) v[i] = u(rng);
  return v;
}

}  // namespace

TEST_CASE("coordinate ensemble endpoints") {
  std::mt19937_64 rng(801);
  SpinMeasure m = random_measure(4, rng);

  LocEnsemble e0 = coord_enumerate(m, 0);
  REQUIRE(e0.members.size() == 1);
  CHECK(e0.weights[0] == Catch::Approx(1.0).margin(1e-14));
  CHECK(max_full_diff(e0.members[0], m) <= 1e-14);

  LocEnsemble ef = coord_enumerate(m, 4);
  REQUIRE(ef.members.size() == 16);
  double wsum = 0;
  for (size_t k = 0; k < ef.members.size(); ++k) {
    const SpinMeasure& d = ef.members[k];
    CHECK(d.f() == 0);
    uint32_t full = d.full_config(0);
    // the endpoint is nu-distributed: the Dirac at x carries weight nu(x)
    uint32_t fc = 0;
    for (int j = 0; j < m.f(); ++j)
      if ((full >> m.free_idx[j]) & 1u) fc |= (1u << j);
    CHECK(ef.weights[k] == Catch::Approx(m.w[fc]).margin(1e-14));
    wsum += ef.weights[k];
  }
  CHECK(wsum == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("coordinate ensemble is an exact mixture of the base measure") {
  std::mt19937_64 rng(802);
  for (int n = 3; n <= 6; ++n) {
    SpinMeasure m = random_measure(n, rng);
    for (int t = 0; t <= n; ++t) {
      LocEnsemble ens = coord_enumerate(m, t);
      EnsembleCheck c = validate_ensemble(ens, m);
      CHECK(std::abs(c.weight_sum - 1.0) <= 1e-12);
      CHECK(c.max_mixture_diff <= 1e-10);
    }
  }
  // zero-mass subcubes are dropped without breaking the mixture
  for (int rep = 0; rep < 5; ++rep) {
    SpinMeasure m = random_sparse_measure(4, rng);
    for (int t = 0; t <= m.f(); ++t) {
      EnsembleCheck c = validate_ensemble(coord_enumerate(m, t), m);
      CHECK(std::abs(c.weight_sum - 1.0) <= 1e-12);
      CHECK(c.max_mixture_diff <= 1e-10);
    }
  }
}

TEST_CASE("coordinate ensemble budget and range errors") {
  std::mt19937_64 rng(803);
  SpinMeasure m = random_measure(5, rng);
  CHECK_THROWS_MATCHES(coord_enumerate(m, 6), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return e.code == Err::SubsetTooLarge; }));
  CHECK_THROWS_MATCHES(coord_enumerate(m, 3, 10), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return e.code == Err::BudgetExceeded; }));
}

TEST_CASE("sampled coordinate step agrees with its pinning form") {
  std::mt19937_64 rng(804);
  for (int rep = 0; rep < 100; ++rep) {
    int n = 2 + static_cast<int>(rng() % 4);
    bool sparse = rep % 3 == 0;
    SpinMeasure m = sparse ? random_sparse_measure(n, rng) : random_measure(n, rng);
    CoordStep st = coord_sample_step(m, rng);  // internal 1e-12 assertion
    // a reveal can force further coordinates when the support is sparse
    if (sparse)
      CHECK(st.next.f() <= m.f() - 1);
    else
      CHECK(st.next.f() == m.f() - 1);
    CHECK(st.next.pin[st.coord] == st.spin);
    // slope magnitude matches the chosen side
    double bk = moments(m).b[st.coord];
    double want = st.spin > 0 ? 1.0 / (1.0 + bk) : -1.0 / (1.0 - bk);
    CHECK(st.z[st.coord] == Catch::Approx(want).margin(1e-12));
  }
}

TEST_CASE("sampled coordinate step slope statistics") {
  std::mt19937_64 rng(805);
  SpinMeasure m = random_measure(3, rng);
  Moments mo = moments(m);

  // E[Z]=0 holds exactly at the level of branch probabilities
  for (int i = 0; i < 3; ++i) {
    double b = mo.b[i];
    double exact = (1.0 / (1.0 + b)) * (1.0 + b) / 2.0 - (1.0 / (1.0 - b)) * (1.0 - b) / 2.0;
    CHECK(std::abs(exact) <= 1e-15);
    // f * Cov(Z)_kk = 1/(1-b^2), the inverse of the diagonal covariance
    double second = (1.0 / sq(1.0 + b)) * (1.0 + b) / 2.0 + (1.0 / sq(1.0 - b)) * (1.0 - b) / 2.0;
    CHECK(second == Catch::Approx(1.0 / (1.0 - sq(b))).epsilon(1e-12));
    CHECK(second == Catch::Approx(1.0 / moments(m).cov(i, i)).epsilon(1e-12));
  }

  // and empirically across sampled steps
  int trials = 4000;
  double zsum = 0;
  double zsq = 0;
  for (int k = 0; k < trials; ++k) {
    CoordStep st = coord_sample_step(m, rng);
    zsum += st.z.sum();
    zsq += sq(st.z.sum());
  }
  double meanz = zsum / trials;
  double se = std::sqrt((zsq / trials - sq(meanz)) / trials);
  CHECK(std::abs(meanz) <= 4 * se + 1e-12);
}

TEST_CASE("single free spin pins to a point with unit slopes") {
  std::mt19937_64 rng(806);
  SpinMeasure m = uniform_measure(1);
  for (int rep = 0; rep < 20; ++rep) {
    CoordStep st = coord_sample_step(m, rng);
    CHECK(st.next.f() == 0);
    CHECK(std::abs(st.z[0]) == Catch::Approx(1.0).margin(1e-14));
  }
  SpinMeasure dirac = pin_one(m, 0, 1);
  CHECK_THROWS_MATCHES(coord_sample_step(dirac, rng), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return e.code == Err::NoFreeCoordinates; }));
}

TEST_CASE("one-step variance drop equals the slope-covariance quadratic form") {
  std::mt19937_64 rng(807);
  for (int rep = 0; rep < 30; ++rep) {
    int n = 3 + static_cast<int>(rng() % 4);
    SpinMeasure m = random_measure(n, rng);
    Eigen::VectorXd phi = testutil::random_vec(static_cast<int>(m.w.size()), rng);
    CHECK(vardecay_step_check(m, phi).diff <= 1e-10);
    // also along a partially revealed state
    CoordStep st = coord_sample_step(m, rng);
    Eigen::VectorXd phi2 = restrict_function(m, st.next, phi);
    CHECK(vardecay_step_check(st.next, phi2).diff <= 1e-10);
  }
}

TEST_CASE("driven simulation with zero driver stays put") {
  std::mt19937_64 rng(810);
  SpinMeasure m = random_measure(3, rng);
  auto C0 = [](double) { return Eigen::MatrixXd::Zero(3, 3); };
  SlResult r = sl_simulate(m, C0, 1e-2, 0.5, rng, 10);
  for (const auto& st : r.path.states) CHECK(max_full_diff(st, m) <= 1e-14);
  CHECK(r.resid_rms <= 1e-14);
  CHECK(r.max_clip_frac == 0.0);
}

TEST_CASE("driven simulation conserves mass and mean") {
  std::mt19937_64 rng(811);
  IsingSpec spec;
  spec.J = Eigen::MatrixXd::Zero(3, 3);
  spec.J(0, 1) = spec.J(1, 0) = 0.2;
  spec.J(1, 2) = spec.J(2, 1) = -0.15;
  spec.field = Eigen::VectorXd::Zero(3);
  spec.field[0] = 0.1;
  SpinMeasure m = build_ising(spec);
  auto CI = [](double) { return Eigen::MatrixXd::Identity(3, 3); };

  int M = 2000;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(8);
  Eigen::MatrixXd per_path(M, 8);
  double worst_resid = 0, worst_clip = 0;
  for (int k = 0; k < M; ++k) {
    std::mt19937_64 prng = rng_stream(811, static_cast<uint64_t>(k));
    SlResult r = sl_simulate(m, CI, 1e-3, 1.0, prng, 1, 0.01, false);
    Eigen::VectorXd fw = full_weights(r.path.states.back());
    per_path.row(k) = fw.transpose();
    acc += fw;
    worst_resid = std::max(worst_resid, r.resid_rms);
    worst_clip = std::max(worst_clip, r.max_clip_frac);
  }
  acc /= M;
  Eigen::VectorXd base = full_weights(m);
  for (int i = 0; i < 8; ++i) {
    double var = 0;
    for (int k = 0; k < M; ++k) var += sq(per_path(k, i) - acc[i]);
    double se = std::sqrt(var / (M - 1) / M);
    CHECK(std::abs(acc[i] - base[i]) <= 4 * se + 1e-12);
  }
  CHECK(worst_resid <= 10 * 1e-3);
  CHECK(worst_clip <= 1e-3);
}

TEST_CASE("clipping residual shrinks with the step size") {
  SpinMeasure m = uniform_measure(3);
  Eigen::MatrixXd C = 2.5 * Eigen::MatrixXd::Identity(3, 3);
  auto Cf = [&](double) { return C; };
  double avg_coarse = 0, avg_fine = 0;
  int reps = 40;
  for (int k = 0; k < reps; ++k) {
    std::mt19937_64 r1 = rng_stream(812, static_cast<uint64_t>(k));
    avg_coarse += sl_simulate(m, Cf, 1e-2, 0.5, r1, 1, 1.0, false).resid_rms;
    std::mt19937_64 r2 = rng_stream(813, static_cast<uint64_t>(k));
    avg_fine += sl_simulate(m, Cf, 1e-3, 0.5, r2, 1, 1.0, false).resid_rms;
  }
  avg_coarse /= reps;
  avg_fine /= reps;
  CHECK(avg_fine <= avg_coarse + 1e-12);
  CHECK(avg_fine <= 10 * 1e-3);
}

TEST_CASE("oversized driver step is rejected") {
  std::mt19937_64 rng(814);
  SpinMeasure m = uniform_measure(3);
  auto Cbig = [](double) { return 20.0 * Eigen::MatrixXd::Identity(3, 3); };
  CHECK_THROWS_MATCHES(sl_simulate(m, Cbig, 1e-2, 0.2, rng), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return e.code == Err::StepTooLarge; }));
}

TEST_CASE("default step size scales with the driver norm") {
  Eigen::MatrixXd C = 4.0 * Eigen::MatrixXd::Identity(2, 2);
  CHECK(default_sl_dt(C) == Catch::Approx(1e-3 / 16.0).epsilon(1e-12));
  CHECK(default_sl_dt(0.5 * Eigen::MatrixXd::Identity(2, 2)) == Catch::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("density-ratio form holds exactly where affine functions are complete") {
  std::mt19937_64 rng(815);
  SpinMeasure m = uniform_measure(1);
  auto CI = [](double) { return Eigen::MatrixXd::Identity(1, 1); };
  SlResult r = sl_simulate(m, CI, 1e-2, 1.0, rng, 10);
  Eigen::MatrixXd J = 0.5 * Eigen::MatrixXd::Identity(1, 1);
  FormFitReport rep = sl_form_check(r.path, J);
  CHECK(rep.residuals.front() == 0.0);
  CHECK(rep.max_residual <= 1e-10);
}

TEST_CASE("density-ratio form residual decreases with the step size") {
  std::mt19937_64 jrng(817);
  Eigen::MatrixXd A(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) A(i, j) = std::normal_distribution<double>(0, 1)(jrng);
  Eigen::MatrixXd J = A * A.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esj(J);
  J *= 0.008 / esj.eigenvalues().cwiseAbs().maxCoeff();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(2.0 * J);
  REQUIRE(es.eigenvalues().minCoeff() >= 0);
  Eigen::MatrixXd C = es.operatorSqrt();
  auto Cf = [&](double) { return C; };
  SpinMeasure m = uniform_measure(3);

  std::vector<double> dts{1e-2, 1e-3, 1e-4};
  std::vector<double> resid;
  for (double dt : dts) {
    std::mt19937_64 rng = rng_stream(816, 0);
    SlResult r = sl_simulate(m, Cf, dt, 1.0, rng, 10);
    resid.push_back(sl_form_check(r.path, J).max_residual);
  }
  CHECK(resid[0] >= resid[2]);
  CHECK(resid[2] <= 1e-3);
}

TEST_CASE("negative-fields single spin matches the closed-form clock law") {
  SpinMeasure m = uniform_measure(1);
  double horizon = 3.0;
  int M = 5000;
  std::vector<double> jumps;
  for (int k = 0; k < M; ++k) {
    std::mt19937_64 rng = rng_stream(820, static_cast<uint64_t>(k));
    LocPath p = nf_simulate(m, horizon, rng);
    for (const auto& ev : p.events)
      if (ev.kind == "pin") jumps.push_back(ev.time);
  }
  // survival exp(-int_0^s (1 - tanh r) dr) = (1 + e^{-2s})/2
  double p_jump = (1.0 - std::exp(-2.0 * horizon)) / 2.0;
  double frac = static_cast<double>(jumps.size()) / M;
  double se = std::sqrt(p_jump * (1 - p_jump) / M);
  CHECK(std::abs(frac - p_jump) <= 4 * se);

  std::sort(jumps.begin(), jumps.end());
  auto cdf = [&](double s) { return (1.0 - std::exp(-2.0 * s)) / (2.0 * p_jump); };
  double ks = 0;
  size_t mj = jumps.size();
  for (size_t i = 0; i < mj; ++i) {
    double g = cdf(jumps[i]);
    ks = std::max(ks, std::abs((i + 1.0) / mj - g));
    ks = std::max(ks, std::abs(static_cast<double>(i) / mj - g));
  }
  CHECK(ks <= 1.628 / std::sqrt(static_cast<double>(mj)));
}

TEST_CASE("negative-fields state keeps the tilt-of-pinned form") {
  std::mt19937_64 rng(821);
  for (int rep = 0; rep < 10; ++rep) {
    SpinMeasure m = rep % 2 == 0 ? random_measure(4, rng) : random_sparse_measure(4, rng);
    std::mt19937_64 prng = rng_stream(822, static_cast<uint64_t>(rep));
    LocPath p = nf_simulate(m, 2.0, prng);
    CHECK(max_full_diff(p.states.front(), m) <= 1e-15);
    CHECK(nf_form_invariant_gap(p) <= 1e-12);
    // events are increasing in time, each pinning to +1
    double last = 0;
    for (const auto& ev : p.events) {
      CHECK(ev.time >= last);
      CHECK(ev.spin == 1);
      last = ev.time;
    }
    CHECK(p.events.size() <= static_cast<size_t>(m.f()));
  }
}

TEST_CASE("negative-fields process is a martingale on the hardcore pair") {
  Graph g = build_graph(2, {{0, 1}});
  SpinMeasure m = build_hardcore({g, 1.0});
  int M = 2000;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(4);
  Eigen::MatrixXd per_path(M, 4);
  for (int k = 0; k < M; ++k) {
    std::mt19937_64 rng = rng_stream(823, static_cast<uint64_t>(k));
    LocPath p = nf_simulate(m, 1.0, rng);
    Eigen::VectorXd fw = full_weights(p.states.back());
    per_path.row(k) = fw.transpose();
    acc += fw;
  }
  acc /= M;
  Eigen::VectorXd base = full_weights(m);
  for (int i = 0; i < 4; ++i) {
    double var = 0;
    for (int k = 0; k < M; ++k) var += sq(per_path(k, i) - acc[i]);
    double se = std::sqrt(var / (M - 1) / M);
    CHECK(std::abs(acc[i] - base[i]) <= 4 * se + 1e-12);
  }
}

TEST_CASE("variance conservation trace telescopes on the uniform cube") {
  for (int n : {4, 6}) {
    SpinMeasure m = uniform_measure(n);
    for (int l = 1; l < n; ++l) {
      int tau = n - l;
      Eigen::VectorXd phi(m.w.size());
      for (uint32_t fc = 0; fc < m.w.size(); ++fc) phi[fc] = spin_of_bit(fc, 0);
      ConservationTrace tr = conservation_trace_coord(m, tau, phi, false);
      REQUIRE(tr.certified);
      double want = static_cast<double>(l) / n;
      CHECK(std::abs(tr.cumulative_ratio - want) <= 1e-10);
      CHECK(std::abs(tr.cumulative_floor - want) <= 1e-10);
      for (size_t t = 0; t < tr.ratios.size(); ++t) {
        CHECK(tr.ratios[t] >= tr.floors[t] - 1e-9);
        CHECK(tr.ratios[t] >= 0.0);
        CHECK(tr.ratios[t] <= 1.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("variance conservation floor holds on random measures") {
  std::mt19937_64 rng(830);
  for (int rep = 0; rep < 8; ++rep) {
    int n = 3 + static_cast<int>(rng() % 3);
    SpinMeasure m = random_measure(n, rng);
    Eigen::VectorXd phi = testutil::random_vec(static_cast<int>(m.w.size()), rng);
    int tau = 1 + static_cast<int>(rng() % n);
    ConservationTrace tr = conservation_trace_coord(m, tau, phi, false);
    for (size_t t = 0; t < tr.ratios.size(); ++t) {
      CHECK(tr.ratios[t] >= tr.floors[t] - 1e-9);
      CHECK(tr.ratios[t] <= 1.0 + 1e-12);
    }
    CHECK(tr.cumulative_ratio >= tr.cumulative_floor - 1e-9);
  }
}

TEST_CASE("entropy conservation trace with unit stability coefficient") {
  SpinMeasure m = uniform_measure(3);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(8);
  f[0] = 1.0;  // indicator test function
  auto alpha_one = [](const SpinMeasure&) { return 1.0; };
  ConservationTrace tr = conservation_trace_coord(m, 3, f, true, alpha_one);
  REQUIRE(tr.certified);
  REQUIRE(tr.ratios.size() == 3);
  for (size_t t = 0; t < tr.ratios.size(); ++t) {
    double floor = 1.0 - 1.0 / (3.0 - static_cast<double>(t));
    CHECK(std::abs(tr.floors[t] - floor) <= 1e-12);
    CHECK(tr.ratios[t] >= floor - 1e-9);
    CHECK(tr.ratios[t] <= 1.0 + 1e-12);
  }

  std::mt19937_64 rng(831);
  Eigen::VectorXd fr = random_positive_fn(8, rng);
  ConservationTrace tr2 = conservation_trace_coord(m, 2, fr, true, alpha_one);
  for (size_t t = 0; t < tr2.ratios.size(); ++t)
    CHECK(tr2.ratios[t] >= tr2.floors[t] - 1e-9);
}

TEST_CASE("driven entropy decay dominates the coupling-norm floor") {
  std::mt19937_64 rng(832);
  Eigen::MatrixXd A(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) A(i, j) = std::normal_distribution<double>(0, 0.3)(rng);
  Eigen::MatrixXd J = 0.5 * (A * A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  double opJ = es.eigenvalues().cwiseAbs().maxCoeff();
  if (opJ > 0.2) {
    J *= 0.2 / opJ;
    opJ = 0.2;
  }
  IsingSpec spec;
  spec.J = J;
  spec.field = Eigen::VectorXd::Zero(3);
  spec.negate_coupling = true;  // ferromagnet-free sign, covariance bound applies
  SpinMeasure m = build_ising(spec);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(2.0 * J);
  Eigen::MatrixXd C = es2.operatorSqrt();
  auto Cf = [&](double) { return C; };
  Eigen::VectorXd f = random_positive_fn(8, rng);
  auto alpha = [&](double t) { return 2.0 * opJ / (1.0 - 2.0 * (1.0 - t) * opJ); };
  ConservationTrace tr = conservation_trace_sl(m, Cf, f, 1.0, 1e-3, 400, 833, alpha);
  REQUIRE(tr.certified);
  CHECK(std::abs(tr.cumulative_floor - (1.0 - 2.0 * opJ)) <= 1e-3);
  CHECK(tr.cumulative_ratio >= tr.cumulative_floor - 3.0 * tr.se);
  CHECK(tr.cumulative_ratio <= 1.0 + 3.0 * tr.se);
}

TEST_CASE("negative-fields entropy decay dominates its exponential floor") {
  std::mt19937_64 rng(834);
  SpinMeasure m = uniform_measure(2);
  Eigen::VectorXd f = random_positive_fn(4, rng);
  ConservationTrace tr = conservation_trace_nf(m, 0.5, f, 400, 835, 1.0);
  REQUIRE(tr.certified);
  CHECK(tr.cumulative_floor == Catch::Approx(std::exp(-2.0)).epsilon(1e-12));
  CHECK(tr.cumulative_ratio >= tr.cumulative_floor - 3.0 * tr.se);
}

TEST_CASE("kernel estimate at time zero is the rank-one chain") {
  std::mt19937_64 rng(840);
  SpinMeasure m = random_measure(3, rng);
  std::vector<LocPath> paths;
  for (int k = 0; k < 10; ++k) paths.push_back(coord_sample_path(m, 0, rng));
  KernelEstimate est = estimate_kernel_from_paths(paths, 0.0);
  for (size_t i = 0; i < est.support.size(); ++i)
    for (size_t j = 0; j < est.support.size(); ++j) {
      CHECK(est.P(i, j) == Catch::Approx(m.w[est.support[j]]).margin(1e-12));
      CHECK(est.se(i, j) <= 1e-15);
    }
}

TEST_CASE("kernel estimate from full reveals converges to the single-site chain") {
  std::mt19937_64 rng(841);
  SpinMeasure m = random_measure(3, rng);
  int M = 2000;
  std::vector<LocPath> paths;
  paths.reserve(M);
  for (int k = 0; k < M; ++k) {
    std::mt19937_64 prng = rng_stream(842, static_cast<uint64_t>(k));
    paths.push_back(coord_sample_path(m, m.f() - 1, prng));
  }
  KernelEstimate est = estimate_kernel_from_paths(paths, m.f() - 1);
  Kernel gl = glauber(m);
  REQUIRE(est.support == gl.support);
  for (size_t i = 0; i < est.support.size(); ++i)
    for (size_t j = 0; j < est.support.size(); ++j)
      CHECK(std::abs(est.P(i, j) - gl.P(i, j)) <= 3 * est.se(i, j) + 1e-9);
}

TEST_CASE("driven kernel estimate matches the Gaussian-channel chain") {
  std::mt19937_64 rng(843);
  SpinMeasure m = random_measure(2, rng);
  auto CI = [](double) { return Eigen::MatrixXd::Identity(2, 2); };
  int M = 2000;
  std::vector<LocPath> paths;
  paths.reserve(M);
  for (int k = 0; k < M; ++k) {
    std::mt19937_64 prng = rng_stream(844, static_cast<uint64_t>(k));
    paths.push_back(sl_simulate(m, CI, 1e-3, 1.0, prng, 1, 0.01, false).path);
  }
  KernelEstimate est = estimate_kernel_from_paths(paths, 1.0);
  CubeRgdResult rgd = cube_rgd(m, 1.0, 40000, 845);
  REQUIRE(est.support == rgd.kernel.support);
  for (size_t i = 0; i < est.support.size(); ++i)
    for (size_t j = 0; j < est.support.size(); ++j) {
      double tol = 4 * std::sqrt(sq(est.se(i, j)) + sq(rgd.se(i, j))) + 2e-3;
      CHECK(std::abs(est.P(i, j) - rgd.raw_P(i, j)) <= tol);
    }
}

TEST_CASE("kernel estimate refuses zero-mass base entries on the full grid") {
  Eigen::VectorXd w(4);
  w << 1.0, 0.0, 1.0, 1.0;
  SpinMeasure m = materialize(2, w);
  std::mt19937_64 rng(846);
  std::vector<LocPath> paths{coord_sample_path(m, 0, rng)};
  CHECK_THROWS_MATCHES(estimate_kernel_from_paths(paths, 0.0, true), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return e.code == Err::ZeroDenominator; }));
}

TEST_CASE("path trace exports as json lines") {
  std::mt19937_64 rng(850);
  SpinMeasure m = random_measure(3, rng);
  LocPath p = coord_sample_path(m, 2, rng);
  p.seed = 850;
  std::string text = export_path_jsonl(p);
  std::istringstream is(text);
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) {
    auto parsed = nlohmann::json::parse(line);
    if (lines == 0) {
      CHECK(parsed["scheme"] == "coordinate");
      CHECK(parsed["seed"] == 850);
    } else {
      CHECK(parsed["kind"] == "pin");
      CHECK(parsed.contains("coord"));
    }
    ++lines;
  }
  CHECK(lines == 3);
}

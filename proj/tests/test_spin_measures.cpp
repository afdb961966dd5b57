#include "helpers.hpp"

using namespace locmix;
using namespace testutil;
using Catch::Approx;

TEST_CASE("materialize normalizes and computes hand-checked moments") {
  // configs in index order: (--), (+-), (-+), (++) with weights 3,1,1,3
  Eigen::VectorXd w(4);
  w << 3, 1, 1, 3;
  SpinMeasure m = materialize(2, w);
  REQUIRE(m.f() == 2);
  REQUIRE(m.w.sum() == Approx(1.0).margin(1e-12));
  Moments mo = moments(m);
  // b = 0 by symmetry; E[x1 x2] = (3-1-1+3)/8 = 1/2 by hand
  CHECK(std::abs(mo.b[0]) < 1e-12);
  CHECK(std::abs(mo.b[1]) < 1e-12);
  CHECK(mo.cov(0, 1) == Approx(0.5).margin(1e-12));
  CHECK(mo.cov(0, 0) == Approx(1.0).margin(1e-12));
}

TEST_CASE("materialize derives pins for constant coordinates") {
  Eigen::VectorXd w(8);
  w.setZero();
  w[1] = 2;  // (+,-,-)
  w[5] = 1;  // (+,-,+)
  SpinMeasure m = materialize(3, w);
  REQUIRE(m.pin[0] == +1);
  REQUIRE(m.pin[1] == -1);
  REQUIRE(m.pin[2] == 0);
  REQUIRE(m.f() == 1);
  CHECK(m.w[0] == Approx(2.0 / 3).margin(1e-12));
  Moments mo = moments(m);
  CHECK(mo.b[0] == 1.0);
  CHECK(mo.cov(0, 0) == 0.0);
  CHECK(mo.b[2] == Approx(-1.0 / 3).margin(1e-12));
}

TEST_CASE("materialize input validation") {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(4);
  CHECK_THROWS_MATCHES(materialize(2, z), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::AllZeroMass;
                       }));
  Eigen::VectorXd nf(4);
  nf << 1, std::numeric_limits<double>::quiet_NaN(), 1, 1;
  CHECK_THROWS_MATCHES(materialize(2, nf), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::NonFinite;
                       }));
  Eigen::VectorXd neg(4);
  neg << 1, -0.5, 1, 1;
  CHECK_THROWS_MATCHES(materialize(2, neg), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::NegativeInput;
                       }));
  CHECK_THROWS_MATCHES(materialize(21, z), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::DimensionTooLarge;
                       }));
  CHECK_THROWS_AS(materialize(3, z), Error);  // wrong length
}

TEST_CASE("dirac measure pins everything") {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(8);
  w[6] = 5;  // (-,+,+)
  SpinMeasure m = materialize(3, w);
  REQUIRE(m.f() == 0);
  Moments mo = moments(m);
  CHECK(mo.b[0] == -1.0);
  CHECK(mo.b[1] == 1.0);
  CHECK(mo.b[2] == 1.0);
  CHECK(mo.cov.norm() == 0.0);
}

TEST_CASE("tilt of uniform gives tanh marginals") {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(8);
  SpinMeasure m = materialize(3, w);
  Eigen::VectorXd v(3);
  v << 0.3, -1.2, 0.7;
  Moments mo = moments(tilt(m, v));
  for (int i = 0; i < 3; ++i) {
    CHECK(mo.b[i] == Approx(std::tanh(v[i])).margin(1e-12));
    CHECK(mo.cov(i, i) == Approx(1 - sq(std::tanh(v[i]))).margin(1e-12));
  }
  // product structure survives the tilt
  CHECK(std::abs(mo.cov(0, 1)) < 1e-12);
}

TEST_CASE("tilt composition and normalization invariants") {
  auto rng = rng_stream(11, 0);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + static_cast<int>(rng() % 4);
    SpinMeasure m = random_sparse_measure(n, rng);
    Eigen::VectorXd u = random_vec(n, rng), v = random_vec(n, rng);
    SpinMeasure a = tilt(tilt(m, u), v);
    SpinMeasure b = tilt(m, u + v);
    CHECK(max_full_diff(a, b) < 1e-12);
    CHECK(a.w.sum() == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("pin merges, errors, and commutes with disjoint tilts") {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(8);
  SpinMeasure m = materialize(3, w);
  std::vector<int8_t> u = {0, 1, 0};
  SpinMeasure p = pin(m, u);
  REQUIRE(p.pin[1] == 1);
  REQUIRE(p.f() == 2);

  std::vector<int8_t> conflict = {0, -1, 0};
  CHECK_THROWS_MATCHES(pin(p, conflict), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::IncompatiblePin;
                       }));

  Eigen::VectorXd w2 = Eigen::VectorXd::Zero(4);
  w2[0] = 1;
  w2[3] = 1;  // support (--), (++)
  SpinMeasure m2 = materialize(2, w2);
  std::vector<int8_t> kill = {1, -1};
  CHECK_THROWS_MATCHES(pin(m2, kill), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::ZeroMassSubcube;
                       }));

  // tilt on coords {0,2}, pin on coord 1: order does not matter
  auto rng = rng_stream(12, 0);
  for (int trial = 0; trial < 10; ++trial) {
    SpinMeasure r = random_measure(3, rng);
    Eigen::VectorXd v = random_vec(3, rng);
    v[1] = 0;
    SpinMeasure ab = pin(tilt(r, v), u);
    SpinMeasure ba = tilt(pin(r, u), v);
    CHECK(max_full_diff(ab, ba) < 1e-12);
  }
}

TEST_CASE("influence matrix matches halved conditional mean differences") {
  auto rng = rng_stream(13, 0);
  for (int trial = 0; trial < 15; ++trial) {
    int n = 2 + static_cast<int>(rng() % 5);  // up to 6
    SpinMeasure m = random_measure(n, rng);
    InfluenceReport rep = influence_correlation(m);
    REQUIRE(static_cast<int>(rep.coords.size()) == n);
    for (int k = 0; k < n; ++k) {
      Moments plus = moments(pin_one(m, k, +1));
      Moments minus = moments(pin_one(m, k, -1));
      for (int j = 0; j < n; ++j) {
        if (j == k) continue;
        double oracle = 0.5 * (plus.b[j] - minus.b[j]);
        CHECK(rep.psi(j, k) == Approx(oracle).margin(1e-10));
      }
      CHECK(rep.psi(k, k) == Approx(1.0).margin(1e-12));
    }
  }
}

TEST_CASE("spectral radius of influence equals operator norm of correlation") {
  auto rng = rng_stream(14, 0);
  for (int trial = 0; trial < 12; ++trial) {
    int n = 2 + static_cast<int>(rng() % 7);  // up to 8
    SpinMeasure m = random_measure(n, rng);
    InfluenceReport rep = influence_correlation(m);
    double rho_psi = spectral_radius(rep.psi);
    double cor_op = op_norm(rep.cor);
    CHECK(rep.rho == Approx(rho_psi).margin(1e-9));
    CHECK(rep.rho == Approx(cor_op).margin(1e-9));
    CHECK(rho_psi <= op_norm(rep.psi) + 1e-9);
  }
}

TEST_CASE("influence special cases") {
  auto rng = rng_stream(15, 0);
  SpinMeasure prod = tilt(materialize(3, Eigen::VectorXd::Ones(8)), random_vec(3, rng));
  CHECK(influence_correlation(prod).rho == Approx(1.0).margin(1e-10));

  Eigen::VectorXd w = Eigen::VectorXd::Zero(4);
  w[0] = 1;
  w[3] = 1;  // perfectly correlated pair
  CHECK(influence_correlation(materialize(2, w)).rho == Approx(2.0).margin(1e-10));

  // strong tilt underflows a marginal to 1: degenerate free coordinate
  Eigen::VectorXd big(2);
  big << 40, 0;
  SpinMeasure deg = tilt(materialize(2, Eigen::VectorXd::Ones(4)), big);
  REQUIRE(deg.f() == 2);
  CHECK_THROWS_MATCHES(influence_correlation(deg), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::DegenerateCoordinate;
                       }));
}

TEST_CASE("pinning one coordinate moves the mean by a covariance column") {
  auto rng = rng_stream(16, 0);
  for (int trial = 0; trial < 15; ++trial) {
    int n = 2 + static_cast<int>(rng() % 5);  // up to 6
    SpinMeasure m = random_measure(n, rng);
    Moments mo = moments(m);
    for (int i = 0; i < n; ++i) {
      for (int s : {-1, +1}) {
        Moments ps = moments(pin_one(m, i, s));
        Eigen::VectorXd oracle = mo.b + mo.cov.col(i) * (s / (1.0 + s * mo.b[i]));
        for (int j = 0; j < n; ++j)
          CHECK(ps.b[j] == Approx(oracle[j]).margin(1e-10));
      }
    }
  }
}

TEST_CASE("variance and entropy functionals") {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(2);
  SpinMeasure m = materialize(1, w);
  Eigen::VectorXd phi(2);
  phi << -1, 1;
  CHECK(variance(m, phi) == Approx(1.0).margin(1e-12));
  Eigen::VectorXd fv(2);
  fv << 0, 2;
  CHECK(entropy_functional(m, fv) == Approx(std::log(2.0)).margin(1e-12));
  Eigen::VectorXd cst = Eigen::VectorXd::Constant(2, 3.0);
  CHECK(entropy_functional(m, cst) == Approx(0.0).margin(1e-12));
  Eigen::VectorXd neg(2);
  neg << -1, 1;
  CHECK_THROWS_MATCHES(entropy_functional(m, neg), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::NegativeInput;
                       }));
  Eigen::VectorXd tiny(2);
  tiny << -5e-15, 1;  // inside the clamp band
  CHECK(std::isfinite(entropy_functional(m, tiny)));
}

TEST_CASE("kl divergence against the tilt identity") {
  auto rng = rng_stream(17, 0);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + static_cast<int>(rng() % 4);
    SpinMeasure m = random_sparse_measure(n, rng);
    Eigen::VectorXd v = random_vec(n, rng);
    SpinMeasure t = tilt(m, v);
    double lhs = kl_divergence(t, m);
    double rhs = v.dot(moments(t).b) - log_laplace(m, v);
    CHECK(lhs == Approx(rhs).margin(1e-10));
  }
  // absolute continuity failure
  Eigen::VectorXd wa = Eigen::VectorXd::Ones(4);
  Eigen::VectorXd wb(4);
  wb << 1, 1, 1, 0;
  CHECK_THROWS_MATCHES(kl_divergence(materialize(2, wa), materialize(2, wb)), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::NotAbsolutelyContinuous;
                       }));
}

TEST_CASE("moment matching recovers atanh on a single coordinate") {
  SpinMeasure m = materialize(1, Eigen::VectorXd::Ones(2));
  Eigen::VectorXd target(1);
  target << 0.5;
  TiltResult tr = moment_matching_tilt(m, target);
  CHECK(tr.v[0] == Approx(std::atanh(0.5)).margin(1e-8));
  CHECK(moments(tr.tilted).b[0] == Approx(0.5).margin(1e-9));
}

TEST_CASE("moment matching round trips random tilts") {
  auto rng = rng_stream(18, 0);
  for (int trial = 0; trial < 15; ++trial) {
    int n = 2 + static_cast<int>(rng() % 4);
    SpinMeasure m = random_sparse_measure(n, rng);
    Eigen::VectorXd v = random_vec(n, rng, 0.8);
    Eigen::VectorXd target = moments(tilt(m, v)).b;
    TiltResult tr = moment_matching_tilt(m, target);
    Eigen::VectorXd got = moments(tr.tilted).b;
    for (int i = 0; i < n; ++i) CHECK(got[i] == Approx(target[i]).margin(1e-9));
    // dual-pair identity: kl at the matched tilt equals <v,b> - log-laplace
    double g = kl_divergence(tr.tilted, m);
    CHECK(g == Approx(tr.v.dot(target) - log_laplace(m, tr.v)).margin(1e-10));
  }
}

TEST_CASE("moment matching failure modes") {
  SpinMeasure m = materialize(2, Eigen::VectorXd::Ones(4));
  Eigen::VectorXd bad(2);
  bad << 1.0, 0.0;
  CHECK_THROWS_MATCHES(moment_matching_tilt(m, bad), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::OutsideHull;
                       }));
  // target outside the convex hull of a truncated support
  Eigen::VectorXd w3(4);
  w3 << 1, 1, 1, 0;  // support (--), (+-), (-+): b1+b2 <= 0 on the hull
  SpinMeasure trunc = materialize(2, w3);
  Eigen::VectorXd out(2);
  out << 0.9, 0.9;
  CHECK_THROWS_MATCHES(moment_matching_tilt(trunc, out), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::OutsideHull;
                       }));
  Eigen::VectorXd far(2);
  far << 0.9, -0.7;
  CHECK_THROWS_MATCHES(moment_matching_tilt(m, far, 1e-9, 1), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::MaxIterations;
                       }));
  // pinned coordinate: target must equal the pin
  SpinMeasure p = pin_one(materialize(2, Eigen::VectorXd::Ones(4)), 0, 1);
  Eigen::VectorXd t2(2);
  t2 << 1.0, 0.25;
  TiltResult tr = moment_matching_tilt(p, t2);
  CHECK(moments(tr.tilted).b[1] == Approx(0.25).margin(1e-9));
  t2[0] = 0.5;
  CHECK_THROWS_MATCHES(moment_matching_tilt(p, t2), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code == Err::OutsideHull;
                       }));
}

TEST_CASE("finite differences of the matched-tilt divergence invert the covariance") {
  auto rng = rng_stream(19, 0);
  SpinMeasure m = random_measure(2, rng);
  Eigen::VectorXd x0(2);
  x0 << 0.15, -0.2;
  auto g = [&](const Eigen::VectorXd& x) {
    TiltResult tr = moment_matching_tilt(m, x, 1e-11);
    return kl_divergence(tr.tilted, m);
  };
  double h = 1e-3;
  Eigen::MatrixXd H(2, 2);
  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd ej = Eigen::VectorXd::Zero(2);
    ej[j] = h;
    H(j, j) = (g(x0 + ej) - 2 * g(x0) + g(x0 - ej)) / (h * h);
    for (int k = j + 1; k < 2; ++k) {
      Eigen::VectorXd ek = Eigen::VectorXd::Zero(2);
      ek[k] = h;
      double v = (g(x0 + ej + ek) - g(x0 + ej - ek) - g(x0 - ej + ek) + g(x0 - ej - ek)) /
                 (4 * h * h);
      H(j, k) = v;
      H(k, j) = v;
    }
  }
  TiltResult tr = moment_matching_tilt(m, x0, 1e-11);
  Eigen::MatrixXd covinv = moments(tr.tilted).cov.inverse();
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k)
      CHECK(H(j, k) == Approx(covinv(j, k)).epsilon(1e-4).margin(1e-7));
}

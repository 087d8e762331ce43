#include "core/diagnostics.hpp"
#include "core/errors.hpp"
#include "core/hazards.hpp"
#include "core/spline.hpp"
#include "oracles/oracles.hpp"
#include "support/support.hpp"

#include <doctest.h>

#include <random>

using namespace flexmsm;
using namespace flexmsm::testing;

TEST_SUITE("spline") {
  TEST_CASE("degree 0 indicator basis") {
    SplineBasis b(0.0, 1.0, 2, 0);
    const Eigen::VectorXd v = b.eval(0.25);
    CHECK(v[0] == 1.0);
    CHECK(v[1] == 0.0);
    CHECK(b.eval(0.75)[1] == 1.0);
  }

  TEST_CASE("partition of unity and locality") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int degree = 1; degree <= 4; ++degree)
      for (int K : {degree + 1, 6, 10, 17}) {
        SplineBasis b(2.0, 9.0, K, degree);
        for (int i = 0; i < 200; ++i) {
          const double t = 2.0 + 7.0 * u(rng);
          const Eigen::VectorXd v = b.eval(t);
          CHECK(v.minCoeff() >= 0.0);
          CHECK(std::abs(v.sum() - 1.0) <= 1e-12);
          CHECK((v.array() != 0.0).count() <= degree + 1);
        }
        CHECK(std::abs(b.eval(9.0).sum() - 1.0) <= 1e-12);
      }
  }

  TEST_CASE("cubic basis matches the recursive definition") {
    SplineBasis b(1.0, 41.0, 10, 3);
    const auto knots = oracle::equidistant_knots(1.0, 41.0, 10, 3);
    REQUIRE(knots.size() == b.knots().size());
    for (std::size_t i = 0; i < knots.size(); ++i) CHECK(b.knots()[i] == doctest::Approx(knots[i]).epsilon(1e-14));
    double worst = 0.0;
    for (int g = 0; g < 200; ++g) {
      const double t = 1.0 + 40.0 * g / 200.0;
      const Eigen::VectorXd v = b.eval(t);
      for (int k = 0; k < 10; ++k) worst = std::max(worst, std::abs(v[k] - oracle::cox_de_boor(knots, k, 3, t)));
    }
    CHECK(worst <= 1e-10);
  }

  TEST_CASE("out-of-domain evaluation clamps and warns") {
    clear_warnings();
    SplineBasis b(0.0, 10.0, 8, 3);
    CHECK((b.eval(-5.0) - b.eval(0.0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((b.eval(25.0) - b.eval(10.0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(warnings_snapshot().count("spline_extrapolation") == 1);
    clear_warnings();
  }

  TEST_CASE("observed-range domain keeps the last time interior") {
    const auto b = SplineBasis::for_observed_range(1.0, 41.0, 10, 3);
    CHECK(b.lower() == 1.0);
    CHECK(b.upper() == doctest::Approx(41.0 + 40.0 / 7.0));
    CHECK_THROWS_AS(SplineBasis(1.0, 1.0, 10, 3), DomainError);
    CHECK_THROWS_AS(SplineBasis(0.0, 1.0, 3, 3), DomainError);
  }
}

namespace {

TransitionTerm make_term(Baseline family, int n_cov, int K = 8) {
  TransitionTerm t;
  t.from = 0;
  t.to = 1;
  t.baseline = family;
  if (family == Baseline::PSpline) t.basis = SplineBasis(0.5, 30.0, K, 3);
  for (int c = 0; c < n_cov; ++c) t.covariate_index.push_back(c);
  return t;
}

double q_of(const TransitionTerm& term, const Eigen::VectorXd& c, double t, const std::vector<double>& x) {
  return hazard(term, std::span<const double>(c.data(), c.size()), t, x);
}

Eigen::VectorXd grad_of(const TransitionTerm& term, const Eigen::VectorXd& c, double t, const std::vector<double>& x) {
  Eigen::VectorXd g(c.size());
  hazard_gradient(term, std::span<const double>(c.data(), c.size()), t, x, std::span<double>(g.data(), g.size()));
  return g;
}

}  // namespace

TEST_SUITE("hazards") {
  TEST_CASE("exponential hazard is constant") {
    const auto term = make_term(Baseline::Exponential, 0);
    Eigen::VectorXd c(1);
    c << -3.0;
    for (double t : {0.0, 1.0, 17.5}) CHECK(q_of(term, c, t, {}) == doctest::Approx(0.049787068367863944).epsilon(1e-14));
  }

  TEST_CASE("Gompertz hazard with covariates") {
    const auto term = make_term(Baseline::Gompertz, 2);
    Eigen::VectorXd c(4);
    c << -3.0, 0.030, 0.552, -0.281;
    CHECK(q_of(term, c, 11.0, {1.0, 1.0}) == doctest::Approx(std::exp(-3.0 + 0.33 + 0.552 - 0.281)).epsilon(1e-14));
    CHECK(std::exp(log_hazard(term, span_of(c), 11.0, std::vector<double>{1.0, 1.0})) ==
          doctest::Approx(q_of(term, c, 11.0, {1.0, 1.0})).epsilon(1e-14));
  }

  TEST_CASE("Weibull with unit shape reduces to exponential") {
    const auto w = make_term(Baseline::Weibull, 1);
    const auto e = make_term(Baseline::Exponential, 1);
    Eigen::VectorXd cw(3), ce(2);
    cw << -2.0, 0.0, 0.4;
    ce << -2.0, 0.4;
    for (double t : {0.01, 1.0, 12.0}) CHECK(q_of(w, cw, t, {1.0}) == doctest::Approx(q_of(e, ce, t, {1.0})).epsilon(1e-14));
    CHECK_THROWS_AS(q_of(w, cw, 0.0, {1.0}), DomainError);
    CHECK_THROWS_AS(q_of(w, cw, -1.0, {1.0}), DomainError);
  }

  TEST_CASE("Weibull hazard formula") {
    const auto w = make_term(Baseline::Weibull, 0);
    Eigen::VectorXd c(2);
    c << -4.0, 0.5;
    const double tau = std::exp(0.5);
    CHECK(q_of(w, c, 3.0, {}) == doctest::Approx(std::exp(-4.0) * tau * std::pow(3.0, tau - 1.0)).epsilon(1e-13));
  }

  TEST_CASE("simple analytic partials") {
    const auto g = make_term(Baseline::Gompertz, 0);
    Eigen::VectorXd c(2);
    c << -2.0, 0.07;
    const double q = q_of(g, c, 6.0, {});
    CHECK(grad_of(g, c, 6.0, {})[1] == doctest::Approx(6.0 * q).epsilon(1e-14));
    CHECK(grad_of(g, c, 6.0, {})[0] == doctest::Approx(q).epsilon(1e-14));

    const auto s = make_term(Baseline::PSpline, 0);
    std::mt19937_64 rng(4);
    const Eigen::VectorXd a = random_vector(8, rng, -4, -1);
    const Eigen::VectorXd B = s.basis->eval(13.3);
    const double qs = q_of(s, a, 13.3, {});
    CHECK((grad_of(s, a, 13.3, {}) - qs * B).cwiseAbs().maxCoeff() <= 1e-15);
  }

  TEST_CASE("gradients agree with central differences for every family") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> ut(0.5, 30.0);
    const std::vector<double> x{1.0, 0.37};
    for (Baseline f : {Baseline::Exponential, Baseline::Gompertz, Baseline::Weibull, Baseline::PSpline}) {
      const auto term = make_term(f, 2);
      double worst = 0.0;
      for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd c = random_vector(term.num_coefs(), rng, -1.0, 1.0);
        if (f == Baseline::Gompertz) c[1] *= 0.1;
        if (f == Baseline::Weibull) c[1] *= 0.5;
        const double t = ut(rng);
        const Eigen::VectorXd g = grad_of(term, c, t, x);
        const Eigen::VectorXd fd = fd_gradient([&](const Eigen::VectorXd& v) { return q_of(term, v, t, x); }, c, 1e-6);
        for (Eigen::Index k = 0; k < c.size(); ++k)
          worst = std::max(worst, std::abs(g[k] - fd[k]) / std::max(std::abs(g[k]), 1e-3 * std::abs(q_of(term, c, t, x))));
      }
      CHECK_MESSAGE(worst <= 1e-6, baseline_name(f));
    }
  }

  TEST_CASE("hazard is positive and log-linear in its coefficients") {
    std::mt19937_64 rng(9);
    const std::vector<double> x{1.0, 0.0};
    for (Baseline f : {Baseline::Exponential, Baseline::Gompertz, Baseline::PSpline}) {
      const auto term = make_term(f, 2);
      for (int trial = 0; trial < 50; ++trial) {
        const Eigen::VectorXd a = random_vector(term.num_coefs(), rng, -3, 1);
        const Eigen::VectorXd b = random_vector(term.num_coefs(), rng, -3, 1);
        const double t = 7.25;
        CHECK(q_of(term, a, t, x) > 0.0);
        const Eigen::VectorXd m = 0.5 * (a + b);
        const double mid = log_hazard(term, span_of(m), t, x);
        CHECK(mid == doctest::Approx(0.5 * (log_hazard(term, span_of(a), t, x) + log_hazard(term, span_of(b), t, x)))
                         .epsilon(1e-12));
      }
    }
  }

  TEST_CASE("increasing a covariate effect raises the hazard when the covariate is 1") {
    const auto term = make_term(Baseline::Gompertz, 2);
    Eigen::VectorXd c(4);
    c << -3.0, 0.03, 0.1, -0.2;
    double prev = q_of(term, c, 5.0, {1.0, 0.0});
    for (int i = 0; i < 10; ++i) {
      c[2] += 0.05;
      const double q = q_of(term, c, 5.0, {1.0, 0.0});
      CHECK(q > prev);
      prev = q;
    }
  }

  TEST_CASE("length mismatches are domain errors") {
    const auto term = make_term(Baseline::Gompertz, 2);
    Eigen::VectorXd c(3);
    c.setZero();
    CHECK_THROWS_AS(q_of(term, c, 1.0, {1.0, 1.0}), DomainError);
    Eigen::VectorXd d(4);
    d.setZero();
    CHECK_THROWS_AS(q_of(term, d, 1.0, {1.0}), DomainError);
  }
}

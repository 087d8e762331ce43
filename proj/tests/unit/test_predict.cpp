#include "core/errors.hpp"
#include "core/predict.hpp"
#include "core/scoring.hpp"
#include "core/simulate.hpp"
#include "support/support.hpp"

#include <doctest.h>

using namespace flexmsm;
using namespace flexmsm::testing;

namespace {

json three_state_json() {
  return json{{"states", 3},
              {"absorbing", {3}},
              {"transitions",
               {transition_json(1, 2, "gompertz", {"sex"}), transition_json(2, 1, "exponential"),
                transition_json(1, 3, "gompertz"), transition_json(2, 3, "gompertz", {"sex"})}}};
}

Eigen::VectorXd three_state_truth() {
  return (Eigen::VectorXd(9) << -2.0, 0.03, 0.4, -2.5, -4.5, 0.05, -3.5, 0.06, 0.3).finished();
}

struct Fitted {
  Model model;
  PanelDataset data;
  FitResult fit;
};

const Fitted& fitted() {
  static const Fitted f = [] {
    Model m(spec_of(three_state_json()));
    StudyDesign d = StudyDesign::defaults();
    d.n_subjects = 600;
    d.covariates = {{"sex", CovariateGenerator::Kind::Bernoulli, 0.5, 0.0}};
    d.baseline_state_probs = {0.7, 0.3};
    auto data = bind_panel(simulate_panel(m, three_state_truth(), d, 9).data, m);
    auto r = fit(m, data, PenaltySpec{}, m.start_values());
    return Fitted{std::move(m), std::move(data), std::move(r)};
  }();
  return f;
}

bool identical(const PredictionResult& a, const PredictionResult& b) {
  return a.point == b.point && a.mc_mean == b.mc_mean && a.mc_se == b.mc_se && a.lower == b.lower &&
         a.upper == b.upper;
}

}  // namespace

TEST_SUITE("predict") {
  TEST_CASE("degenerate horizon and covariance") {
    const auto& f = fitted();
    REQUIRE(f.fit.converged);
    const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    PredictOptions o;
    o.B = 200;
    const auto same = predict_matrix(f.model, f.fit.theta_hat, f.fit.covariance, 11.0, 11.0, x, o);
    CHECK(max_abs(same.point - Eigen::MatrixXd::Identity(3, 3)) == 0.0);
    CHECK(max_abs(same.mc_se) == 0.0);

    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(9, 9);
    const auto r = predict_matrix(f.model, f.fit.theta_hat, zero, 11.0, 13.0, x, o);
    CHECK(max_abs(r.mc_mean - r.point) <= 1e-14);
    CHECK(max_abs(r.mc_se) <= 1e-14);
    CHECK(max_abs(r.lower - r.point) <= 1e-14);

    Eigen::MatrixXd small = f.fit.covariance * 1e-6;
    const auto s = predict_matrix(f.model, f.fit.theta_hat, small, 11.0, 13.0, x, o);
    const auto full = predict_matrix(f.model, f.fit.theta_hat, f.fit.covariance, 11.0, 13.0, x, o);
    CHECK(max_abs(s.mc_se) < 2e-3 * max_abs(full.mc_se));
  }

  TEST_CASE("Monte Carlo summaries") {
    const auto& f = fitted();
    for (double sex : {0.0, 1.0}) {
      PredictOptions o;
      o.seed = 77;
      const auto r = predict_matrix(f.model, f.fit.theta_hat, f.fit.covariance, 11.0, 13.0,
                                    Eigen::VectorXd::Constant(1, sex), o);
      CHECK(r.B == 1000);
      CHECK(((r.point.rowwise().sum().array() - 1.0).abs().maxCoeff()) <= 1e-10);
      CHECK(((r.mc_mean.rowwise().sum().array() - 1.0).abs().maxCoeff()) <= 1e-8);
      CHECK(r.lower.minCoeff() >= 0.0);
      CHECK(r.upper.maxCoeff() <= 1.0);
      CHECK(((r.lower - r.mc_mean).array() <= 1e-15).all());
      CHECK(((r.mc_mean - r.upper).array() <= 1e-15).all());
      for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index j = 0; j < 3; ++j)
          CHECK(std::abs(r.mc_mean(i, j) - r.point(i, j)) <= 2.0 * r.mc_se(i, j) + 1e-12);
    }
  }

  TEST_CASE("reproducible for a fixed seed and any thread count") {
    const auto& f = fitted();
    const Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
    PredictOptions o;
    o.B = 300;
    o.seed = 5;
    const auto a = predict_matrix(f.model, f.fit.theta_hat, f.fit.covariance, 10.0, 14.0, x, o);
    const auto b = predict_matrix(f.model, f.fit.theta_hat, f.fit.covariance, 10.0, 14.0, x, o);
    o.threads = 4;
    const auto c = predict_matrix(f.model, f.fit.theta_hat, f.fit.covariance, 10.0, 14.0, x, o);
    CHECK(identical(a, b));
    CHECK(identical(a, c));
    o.seed = 6;
    const auto d = predict_matrix(f.model, f.fit.theta_hat, f.fit.covariance, 10.0, 14.0, x, o);
    CHECK_FALSE(identical(a, d));
    CHECK(a.point == d.point);

    const auto path = predict_path(f.model, f.fit.theta_hat, f.fit.covariance, 10.0, 12.2, x, o);
    REQUIRE(path.size() == 5);
    CHECK(path.back().t2 == doctest::Approx(12.2));
    CHECK(path[1].t2 == doctest::Approx(11.0));
  }

  TEST_CASE("grid refinement converges") {
    const auto& f = fitted();
    const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    auto point = [&](double h) {
      PredictOptions o;
      o.h = h;
      o.B = 1;
      return predict_matrix(f.model, f.fit.theta_hat, Eigen::MatrixXd::Zero(9, 9), 10.0, 20.0, x, o).point;
    };
    double prev = max_abs(point(1.0) - point(0.5));
    for (double h : {0.25, 0.125, 0.0625}) {
      const double change = max_abs(point(2 * h) - point(h));
      CHECK(change < prev);
      prev = change;
    }
  }

  TEST_CASE("covariance checks") {
    const auto& f = fitted();
    const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    Eigen::MatrixXd bad = f.fit.covariance;
    bad(0, 0) = -1.0;
    try {
      predict_matrix(f.model, f.fit.theta_hat, bad, 10.0, 12.0, x);
      FAIL("expected rejection");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("positive semi-definite") != std::string::npos);
    }
    PredictOptions o;
    o.clip_eigenvalues = true;
    o.B = 50;
    CHECK_NOTHROW(predict_matrix(f.model, f.fit.theta_hat, bad, 10.0, 12.0, x, o));
    CHECK_THROWS_AS(predict_matrix(f.model, f.fit.theta_hat, f.fit.covariance, 12.0, 10.0, x), DomainError);
    o.B = 0;
    CHECK_THROWS_AS(predict_matrix(f.model, f.fit.theta_hat, f.fit.covariance, 10.0, 12.0, x, o), DomainError);
  }

  TEST_CASE("sampler factor reproduces the covariance") {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd R = Eigen::MatrixXd::NullaryExpr(6, 4, [&]() { return std::normal_distribution<double>()(rng); });
    const Eigen::MatrixXd cov = R.transpose() * R;
    const MvnSampler pd(Eigen::VectorXd::Zero(4), cov);
    CHECK(max_abs(pd.factor() * pd.factor().transpose() - cov) <= 1e-12 * max_abs(cov));
    Eigen::MatrixXd singular = Eigen::MatrixXd::Zero(4, 4);
    singular.topLeftCorner(2, 2) = cov.topLeftCorner(2, 2);
    const MvnSampler ps(Eigen::VectorXd::Zero(4), singular);
    CHECK(max_abs(ps.factor() * ps.factor().transpose() - singular) <= 1e-12 * max_abs(cov));
    CHECK(ps.draw(1, 7) == ps.draw(1, 7));
    CHECK(ps.draw(1, 7).tail(2).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("Kaplan-Meier") {
    const auto none = kaplan_meier({1.0, 2.0, 3.0}, {false, false, false});
    CHECK(none.survival_at(0.5) == 1.0);
    CHECK(none.survival_at(10.0) == 1.0);

    const auto two = kaplan_meier({1.0, 2.0}, {true, false});
    CHECK(two.survival_at(0.99) == 1.0);
    CHECK(two.survival_at(1.0) == 0.5);
    CHECK(two.survival_at(5.0) == 0.5);
    CHECK(two.lower_at(1.0) == 0.0);
    CHECK(two.upper_at(1.0) == 1.0);

    // Four subjects, deaths at 1 and 3, censoring at 2 and 4.
    const auto km = kaplan_meier({1.0, 2.0, 3.0, 4.0}, {true, false, true, false});
    CHECK(km.survival_at(1.0) == doctest::Approx(0.75));
    CHECK(km.survival_at(3.0) == doctest::Approx(0.375));
    const double gw = 0.375 * std::sqrt(1.0 / (4.0 * 3.0) + 1.0 / (2.0 * 1.0));
    CHECK(km.lower_at(3.0) == doctest::Approx(std::max(0.0, 0.375 - 1.96 * gw)));
    CHECK(km.upper_at(3.0) == doctest::Approx(std::min(1.0, 0.375 + 1.96 * gw)));
    CHECK(km.at_risk == std::vector<int>{4, 2});

    CHECK_THROWS_AS(kaplan_meier({}, {}), DomainError);
    CHECK_THROWS_AS(kaplan_meier({-1.0}, {true}), DomainError);
  }

  TEST_CASE("Kaplan-Meier covers exponential survival at the quartiles") {
    int covered = 0;
    const double q = 0.2;
    for (std::uint64_t rep = 0; rep < 40; ++rep) {
      std::mt19937_64 rng(1000 + rep);
      std::exponential_distribution<double> e(q);
      std::vector<double> t(50);
      for (auto& v : t) v = e(rng);
      const auto km = kaplan_meier(t, std::vector<bool>(50, true));
      bool ok = true;
      for (double p : {0.25, 0.5, 0.75}) {
        const double s = -std::log(1.0 - p) / q;
        const double truth = std::exp(-q * s);
        ok = ok && km.lower_at(s) <= truth && truth <= km.upper_at(s);
      }
      covered += ok;
    }
    CHECK(covered >= 32);
  }

  TEST_CASE("survival curves") {
    const auto& f = fitted();
    const auto sc = survival_curves(f.model, f.fit.theta_hat, f.data, 0, 12.0, 0.5, 2);
    REQUIRE(sc.subject_survival.rows() > 0);
    CHECK(sc.times.front() == 0.0);
    CHECK(sc.times.back() == doctest::Approx(12.0));
    CHECK((sc.subject_survival.col(0).array() == 1.0).all());
    for (Eigen::Index k = 1; k < sc.subject_survival.cols(); ++k)
      CHECK((sc.subject_survival.col(k).array() <= sc.subject_survival.col(k - 1).array() + 1e-15).all());
    for (std::size_t k = 1; k < sc.mean.size(); ++k) CHECK(sc.mean[k] <= sc.mean[k - 1] + 1e-15);

    // Baseline state 2 has the larger death rate in the truth.
    const auto sc2 = survival_curves(f.model, f.fit.theta_hat, f.data, 1, 12.0, 0.5, 2);
    CHECK(sc2.mean.back() < sc.mean.back());

    Eigen::VectorXd no_death = f.fit.theta_hat;
    no_death[4] = -800.0;
    no_death[6] = -800.0;
    const auto alive = survival_curves(f.model, no_death, f.data, 0, 12.0, 0.5);
    CHECK((alive.subject_survival.array() == 1.0).all());

    CHECK_THROWS_AS(survival_curves(f.model, f.fit.theta_hat, f.data, 2, 12.0, 0.5), DomainError);
    PanelDataset only_first = f.data;
    std::erase_if(only_first.subjects, [](const Subject& s) { return s.states.front() == 1; });
    CHECK_THROWS_AS(survival_curves(f.model, f.fit.theta_hat, only_first, 1, 12.0, 0.5), DataError);
  }

  TEST_CASE("fitted exponential survival lies within Kaplan-Meier bands") {
    const json spec{{"states", 2}, {"absorbing", {2}}, {"transitions", {transition_json(1, 2, "exponential")}}};
    const Model m(spec_of(spec));
    StudyDesign d = StudyDesign::defaults();
    d.n_subjects = 300;
    d.covariates.clear();
    int within = 0;
    const int reps = 20;
    for (int rep = 0; rep < reps; ++rep) {
      const auto data = simulate_panel(m, Eigen::VectorXd::Constant(1, std::log(0.08)), d, 500 + rep).data;
      const auto f = fit(m, data, PenaltySpec{}, Eigen::VectorXd::Constant(1, -3.0));
      const double q = std::exp(f.theta_hat[0]);
      const auto sc = survival_curves(m, f.theta_hat, data, 0, 12.0, 0.6);
      REQUIRE(sc.times.size() == 21);
      bool ok = true;
      for (std::size_t k = 0; k < sc.times.size(); ++k) {
        CHECK(sc.mean[k] == doctest::Approx(std::exp(-q * sc.times[k])).epsilon(1e-12));
        if (k % 2 == 0 && k > 0 && k < 20) ok = ok && sc.km.lower_at(sc.times[k]) <= sc.mean[k] && sc.mean[k] <= sc.km.upper_at(sc.times[k]);
      }
      within += ok;
    }
    CHECK(within >= 17);
  }
}

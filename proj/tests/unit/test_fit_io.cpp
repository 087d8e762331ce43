#include "core/errors.hpp"
#include "core/fit_io.hpp"
#include "core/format.hpp"
#include "core/likelihood.hpp"
#include "support/support.hpp"

#include <doctest.h>

#include <sstream>

using namespace flexmsm;
using namespace flexmsm::testing;

namespace {

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

struct SplineFit {
  Model model;
  PanelDataset data;
  FitResult fit;
};

const SplineFit& spline_fit() {
  static const SplineFit f = [] {
    const json truth{{"states", 2}, {"absorbing", {2}}, {"transitions", {transition_json(1, 2, "gompertz", {"sex"})}}};
    const Model tm(spec_of(truth));
    StudyDesign d = StudyDesign::defaults();
    d.n_subjects = 300;
    d.covariates = {{"sex", CovariateGenerator::Kind::Bernoulli, 0.5, 0.0}};
    auto data = simulate_panel(tm, (Eigen::VectorXd(3) << -4.0, 0.06, 0.3).finished(), d, 4).data;
    const json spec{{"states", 2}, {"absorbing", {2}}, {"transitions", {transition_json(1, 2, "pspline", {"sex"}, 8)}}};
    Model m(spec_of(spec), std::make_pair(data.min_time(), data.max_time()));
    data = bind_panel(data, m);
    auto r = fit(m, data, PenaltySpec::from_log10({2.0}), m.start_values());
    return SplineFit{std::move(m), std::move(data), std::move(r)};
  }();
  return f;
}

}  // namespace

TEST_SUITE("fit_io") {
  TEST_CASE("fit round trip") {
    const auto& f = spline_fit();
    REQUIRE(f.fit.converged);
    const json j = fit_to_json(f.model, f.fit);
    const LoadedFit back = fit_from_json(json::parse(j.dump()));
    CHECK(back.fit.theta_hat == f.fit.theta_hat);
    CHECK(back.fit.covariance == f.fit.covariance);
    CHECK(back.fit.names == f.fit.names);
    CHECK(back.fit.lambda == f.fit.lambda);
    CHECK(back.fit.aic == f.fit.aic);
    CHECK(back.fit.df == f.fit.df);
    CHECK(back.fit.converged);
    CHECK(j["minus2_loglik"].get<double>() == -2.0 * f.fit.loglik);
    CHECK(j["trace"].size() == f.fit.trace.size());
    CHECK(j["splines"][0]["K"] == 8);

    // The stored spec pins the spline domain, so the rebuilt model gives the
    // same likelihood on the same data.
    const Model rebuilt(back.spec);
    const auto a = dataset_report(f.model, f.fit.theta_hat, f.data, PenaltySpec{f.fit.lambda}, f.fit.policy);
    const auto b = dataset_report(rebuilt, back.fit.theta_hat, f.data, PenaltySpec{back.fit.lambda}, back.fit.policy);
    CHECK(a.penalised_loglik == b.penalised_loglik);
  }

  TEST_CASE("malformed fit files") {
    CHECK_THROWS_AS(fit_from_json(json::array()), SpecError);
    json j = fit_to_json(spline_fit().model, spline_fit().fit);
    j["covariance"].erase(0);
    CHECK_THROWS_AS(fit_from_json(j), SpecError);
    CHECK_THROWS_AS(load_fit_file("/nonexistent/fit.json"), IoError);
  }

  TEST_CASE("theta parsing") {
    const Model m(spec_of(json{{"states", 3},
                               {"absorbing", {3}},
                               {"transitions", {transition_json(1, 2, "gompertz"), transition_json(1, 3, "gompertz"),
                                                transition_json(2, 3, "exponential")}},
                               {"constraints", {equal_constraint("xi", {"1-2.slope", "1-3.slope"})}}}));
    const auto& L = m.layout();
    REQUIRE(L.num_free() == 4);
    const Eigen::VectorXd th = (Eigen::VectorXd(4) << -1.0, 0.05, -2.0, -3.0).finished();
    CHECK(theta_from_json(theta_to_json(L, th), L) == th);
    CHECK(theta_from_json(json::array({-1.0, 0.05, -2.0, -3.0}), L) == th);

    json by_coef = json::object();
    for (int k = 0; k < 4; ++k) by_coef[L.theta_names()[k]] = th[k];
    CHECK(theta_from_json(by_coef, L) == th);

    CHECK_THROWS_AS(theta_from_json(json::array({1.0, 2.0}), L), SpecError);
    json missing = by_coef;
    missing.erase(L.theta_names()[0]);
    try {
      theta_from_json(missing, L);
      FAIL("expected missing parameter");
    } catch (const SpecError& e) {
      CHECK(std::string(e.what()).find(L.theta_names()[0]) != std::string::npos);
    }
    json unknown = by_coef;
    unknown["9-9.intercept"] = 1.0;
    CHECK_THROWS_AS(theta_from_json(unknown, L), SpecError);
    json text = by_coef;
    text[L.theta_names()[1]] = "x";
    CHECK_THROWS_AS(theta_from_json(text, L), SpecError);
  }

  TEST_CASE("design round trip") {
    StudyDesign d = StudyDesign::defaults();
    d.n_subjects = 77;
    d.baseline_state_probs = {0.5, 0.5};
    d.vital_status_prob = 0.25;
    d.covariates.push_back({"z", CovariateGenerator::Kind::Normal, 1.0, 2.0});
    d.covariates.push_back({"u", CovariateGenerator::Kind::Uniform, -1.0, 1.0});
    d.covariates.push_back({"c", CovariateGenerator::Kind::Constant, 3.0, 0.0});
    const StudyDesign e = design_from_json(json::parse(design_to_json(d).dump()));
    CHECK(design_to_json(e) == design_to_json(d));
    CHECK(e.covariates.size() == 5);
    CHECK_THROWS_AS(design_from_json(json{{"covariates", {{{"name", "x"}, {"distribution", "gamma"}}}}}), SpecError);
    CHECK_THROWS_AS(design_from_json(json{{"baseline_age", {1, 2, 3}}}), SpecError);
    CHECK_THROWS_AS(design_from_json(json{{"n_subjects", "many"}}), SpecError);
  }

  TEST_CASE("grid policy round trip") {
    GridPolicy p;
    p.kind = GridPolicy::Kind::Imposed;
    p.h = 0.25;
    p.origin = 1.5;
    const GridPolicy q = grid_policy_from_json(grid_policy_to_json(p));
    CHECK(q.kind == p.kind);
    CHECK(q.h == p.h);
    CHECK(q.origin == p.origin);
    CHECK_THROWS_AS(grid_policy_from_json(json{{"kind", "weekly"}}), SpecError);
  }

  TEST_CASE("csv writers") {
    SearchResult s;
    for (double l : {1.0, 3.0, 5.0}) {
      SearchPoint p;
      p.log10_lambda = {l};
      p.ok = l != 5.0;
      p.converged = p.ok;
      p.aic = 10.0 - l;
      p.error = p.ok ? "" : "failed, badly\nreally";
      s.surface.push_back(p);
    }
    s.best = 1;
    std::ostringstream out;
    write_surface_csv(out, s, {"1-2"});
    const std::string text = out.str();
    CHECK(count_lines(text) == 4);
    CHECK(text.rfind("log10_lambda_1-2,loglik,", 0) == 0);
    CHECK(text.find("failed  badly really") != std::string::npos);

    PredictionResult r;
    r.t1 = 1.0;
    r.t2 = 2.0;
    r.point = r.mc_mean = r.mc_se = r.lower = r.upper = Eigen::MatrixXd::Identity(3, 3);
    std::ostringstream pred;
    write_prediction_csv(pred, {r, r});
    CHECK(count_lines(pred.str()) == 1 + 2 * 9);
  }

  TEST_CASE("number formatting round trips") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
      const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
      CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.5) == "0.5");
  }
}

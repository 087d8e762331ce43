#include "core/errors.hpp"
#include "core/model_spec.hpp"
#include "core/spec_json.hpp"
#include "support/support.hpp"

#include <doctest.h>

#include <random>

using namespace flexmsm;
using namespace flexmsm::testing;

namespace {

int free_params(const json& j) { return ParameterLayout::build(spec_of(j)).num_free(); }

json with_splines(json j, std::initializer_list<std::pair<int, int>> edges) {
  for (auto& t : j["transitions"])
    for (auto [r, s] : edges)
      if (t["from"] == r && t["to"] == s) {
        t["baseline"] = "pspline";
        t["K"] = 10;
      }
  return j;
}

}  // namespace

TEST_SUITE("modelspec") {
  TEST_CASE("parameter counts of the five-state variants") {
    const auto none = [](int, int) { return std::vector<std::string>{}; };
    CHECK(free_params(fig1_json([](int, int) { return std::string("exponential"); }, none, false)) == 10);
    CHECK(free_params(fig1_json([](int, int) { return std::string("gompertz"); }, none, true)) == 15);
    CHECK(free_params(gompertz_covariate_json()) == 22);
    CHECK(free_params(with_splines(gompertz_covariate_json(), {{3, 4}})) == 30);
    CHECK(free_params(with_splines(gompertz_covariate_json(), {{1, 2}, {3, 4}})) == 38);
    json two{{"states", 2}, {"absorbing", {2}}, {"transitions", {transition_json(1, 2, "exponential")}}};
    CHECK(free_params(two) == 1);
  }

  TEST_CASE("parameter names follow coefficient paths and constraint names") {
    const auto L = ParameterLayout::build(spec_of(gompertz_covariate_json()));
    CHECK(L.find_theta("1-2.intercept") == 0);
    CHECK(L.find_theta("1-2.slope") == 1);
    CHECK(L.find_theta("1-2.beta.educ") >= 0);
    CHECK(L.find_theta("xi_B") >= 0);
    CHECK(L.find_theta("xi_D") >= 0);
    CHECK(L.find_theta("beta_D") >= 0);
    CHECK(L.find_theta("2-1.slope") == -1);
    CHECK(L.find_coefficient("3-2.slope") >= 0);
  }

  TEST_CASE("expand and collapse are inverse on random vectors") {
    const auto L = ParameterLayout::build(spec_of(with_splines(gompertz_covariate_json(), {{3, 4}})));
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const Eigen::VectorXd theta = random_vector(L.num_free(), rng, -5, 5);
      const Eigen::VectorXd eta = L.expand(theta);
      CHECK(L.is_consistent(eta));
      CHECK((L.collapse(eta) - theta).cwiseAbs().maxCoeff() == 0.0);
      CHECK((L.expand(L.collapse(eta)) - eta).cwiseAbs().maxCoeff() == 0.0);
      CHECK((L.design_matrix() * theta - eta).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  TEST_CASE("tied slots carry the same value") {
    const auto L = ParameterLayout::build(spec_of(gompertz_covariate_json()));
    Eigen::VectorXd theta = Eigen::VectorXd::LinSpaced(L.num_free(), 1, L.num_free());
    const Eigen::VectorXd eta = L.expand(theta);
    const double xi = theta[L.find_theta("xi_B")];
    for (const char* p : {"2-1.slope", "3-2.slope", "4-3.slope"}) CHECK(eta[L.find_coefficient(p)] == xi);
    Eigen::VectorXd bad = eta;
    bad[L.find_coefficient("3-2.slope")] += 1.0;
    CHECK_FALSE(L.is_consistent(bad));
    CHECK_THROWS_AS(L.collapse(bad), DomainError);
  }

  TEST_CASE("zero constraint pins the slot at exactly 0") {
    json j = gompertz_covariate_json();
    j["constraints"].push_back({{"type", "zero"}, {"targets", {"1-2.beta.educ", "2-3.beta.educ"}}});
    const auto L = ParameterLayout::build(spec_of(j));
    CHECK(L.num_free() == 20);
    std::mt19937_64 rng(3);
    const Eigen::VectorXd eta = L.expand(random_vector(L.num_free(), rng, -1, 1));
    CHECK(eta[L.find_coefficient("1-2.beta.educ")] == 0.0);
    CHECK(eta[L.find_coefficient("2-3.beta.educ")] == 0.0);
  }

  TEST_CASE("invalid model files are rejected") {
    json j = gompertz_covariate_json();
    j["constraints"].push_back(equal_constraint("x", {"1-2.slope", "9-9.slope"}));
    CHECK_THROWS_AS(ParameterLayout::build(spec_of(j)), SpecError);

    json w{{"states", 3},
           {"absorbing", {3}},
           {"transitions", {transition_json(1, 2, "weibull"), transition_json(2, 3, "pspline")}},
           {"constraints", {equal_constraint("bad", {"1-2.shape", "2-3.alpha1"})}}};
    CHECK_THROWS_AS(ParameterLayout::build(spec_of(w)), SpecError);

    json leaves{{"states", 2}, {"absorbing", {2}}, {"transitions", {transition_json(2, 1, "exponential")}}};
    CHECK_THROWS_AS(spec_of(leaves).validate(), SpecError);

    json dup{{"states", 2},
             {"absorbing", {2}},
             {"transitions", {transition_json(1, 2, "exponential"), transition_json(1, 2, "gompertz")}}};
    CHECK_THROWS_AS(spec_of(dup).validate(), SpecError);

    json smallK{{"states", 2}, {"absorbing", {2}}, {"transitions", {transition_json(1, 2, "pspline", {}, 2)}}};
    CHECK_THROWS_AS(spec_of(smallK).validate(), SpecError);

    json unknown{{"states", 2}, {"absorbing", {2}}, {"transitions", {transition_json(1, 2, "lognormal")}}};
    CHECK_THROWS_AS(spec_of(unknown), SpecError);
  }

  TEST_CASE("second-difference operator and its penalty block") {
    Eigen::MatrixXd expected(2, 4);
    expected << 1, -2, 1, 0, 0, 1, -2, 1;
    CHECK(difference_matrix(4, 2) == expected);
    Eigen::MatrixXd DtD(4, 4);
    DtD << 1, -2, 1, 0, -2, 5, -4, 1, 1, -4, 5, -2, 0, 1, -2, 1;

    json j{{"states", 2}, {"absorbing", {2}}, {"transitions", {transition_json(1, 2, "pspline", {"sex"}, 4)}}};
    j["transitions"][0]["degree"] = 2;
    const auto L = ParameterLayout::build(spec_of(j));
    const Eigen::MatrixXd J = penalty_matrix(PenaltySpec{{1.0}}, L);
    CHECK(J.topLeftCorner(4, 4) == DtD);
    CHECK(J.row(4).cwiseAbs().sum() == 0.0);
    CHECK(J.col(4).cwiseAbs().sum() == 0.0);
  }

  TEST_CASE("penalty matrix structure") {
    const auto L = ParameterLayout::build(spec_of(with_splines(gompertz_covariate_json(), {{1, 2}, {3, 4}})));
    CHECK(penalty_matrix(PenaltySpec{{0.0, 0.0}}, L).isZero(0.0));
    const Eigen::MatrixXd J = penalty_matrix(PenaltySpec{{1e7, 10.0}}, L);
    const Eigen::MatrixXd DtD = difference_matrix(10, 2).transpose() * difference_matrix(10, 2);
    const int a = L.find_theta("1-2.alpha1");
    const int b = L.find_theta("3-4.alpha1");
    CHECK((J.block(a, a, 10, 10) - 1e7 * DtD).cwiseAbs().maxCoeff() == 0.0);
    CHECK((J.block(b, b, 10, 10) - 10.0 * DtD).cwiseAbs().maxCoeff() == 0.0);
    CHECK(J.block(a, b, 10, 10).isZero(0.0));
    CHECK((J - J.transpose()).cwiseAbs().maxCoeff() == 0.0);
    double off = 0.0;
    for (int i = 0; i < L.num_free(); ++i)
      if (L.theta_roles()[i] != CoefRole::Alpha) off += J.row(i).cwiseAbs().sum() + J.col(i).cwiseAbs().sum();
    CHECK(off == 0.0);
    CHECK_THROWS_AS(penalty_matrix(PenaltySpec{{-1.0, 1.0}}, L), DomainError);
    CHECK_THROWS_AS(penalty_matrix(PenaltySpec{{1.0}}, L), DomainError);
  }

  TEST_CASE("penalty is non-negative and vanishes on its null space") {
    const auto L = ParameterLayout::build(spec_of(with_splines(gompertz_covariate_json(), {{1, 2}, {3, 4}})));
    const PenaltySpec p{{3.0, 250.0}};
    const Eigen::MatrixXd J = penalty_matrix(p, L);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      const Eigen::VectorXd theta = random_vector(L.num_free(), rng, -4, 4);
      const double quad = theta.dot(J * theta);
      CHECK(quad >= 0.0);
      CHECK(penalty_value(p, L, theta) == doctest::Approx(quad).epsilon(1e-10));
    }
    Eigen::VectorXd theta = random_vector(L.num_free(), rng, -4, 4);
    for (const char* base : {"1-2.alpha", "3-4.alpha"})
      for (int k = 1; k <= 10; ++k) theta[L.find_theta(base + std::to_string(k))] = -3.0 + 0.2 * k;
    CHECK(penalty_value(p, L, theta) == doctest::Approx(0.0).epsilon(1e-20));
    CHECK(std::abs(theta.dot(J * theta)) < 1e-9);
  }

  TEST_CASE("chain rule through the constraint map") {
    const auto L = ParameterLayout::build(spec_of(gompertz_covariate_json()));
    const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(L.num_coefficients(), 0.3, 2.0);
    auto f_eta = [&](const Eigen::VectorXd& eta) { return (eta.array() * w.array()).sin().sum(); };
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::VectorXd theta = random_vector(L.num_free(), rng, -1, 1);
      const Eigen::VectorXd eta = L.expand(theta);
      const Eigen::VectorXd grad_eta = (w.array() * (eta.array() * w.array()).cos()).matrix();
      const Eigen::VectorXd fd = fd_gradient([&](const Eigen::VectorXd& t) { return f_eta(L.expand(t)); }, theta, 1e-6);
      CHECK((L.pull_back(grad_eta) - fd).cwiseAbs().maxCoeff() < 1e-7);
    }
  }

  TEST_CASE("model JSON round trip") {
    json j = with_splines(gompertz_covariate_json(), {{3, 4}});
    j["lambda_grid"] = {{1, 3, 5, 7}};
    const ModelSpec a = spec_of(j);
    const ModelSpec b = spec_of(spec_to_json(a));
    CHECK(ParameterLayout::build(a).theta_names() == ParameterLayout::build(b).theta_names());
    CHECK(b.lambda_grid == a.lambda_grid);
    CHECK(b.covariate_names() == std::vector<std::string>{"sex", "educ"});
  }
}

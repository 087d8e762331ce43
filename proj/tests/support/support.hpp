#pragma once

#include "core/model.hpp"
#include "core/model_spec.hpp"
#include "core/panel.hpp"
#include "core/spec_json.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flexmsm::testing {

using nlohmann::json;

// The five-state structure: four living states with forward, backward and
// death transitions, state 5 absorbing.
inline const std::vector<std::pair<int, int>>& fig1_edges() {
  static const std::vector<std::pair<int, int>> e{{1, 2}, {1, 5}, {2, 1}, {2, 3}, {2, 5},
                                                  {3, 2}, {3, 4}, {3, 5}, {4, 3}, {4, 5}};
  return e;
}

inline json transition_json(int from, int to, const std::string& baseline,
                            const std::vector<std::string>& covariates = {}, int K = 10) {
  json t{{"from", from}, {"to", to}, {"baseline", baseline}};
  if (baseline == "pspline") t["K"] = K;
  if (!covariates.empty()) t["covariates"] = covariates;
  return t;
}

inline json equal_constraint(const std::string& name, const std::vector<std::string>& targets) {
  return json{{"type", "equal"}, {"name", name}, {"targets", targets}};
}

// Five-state model. `baseline_of` picks the family per edge, `covariates_of`
// the covariates; `constrained` adds the backward-slope, death-slope and
// death-sex-effect equalities used throughout the tests.
inline json fig1_json(const std::function<std::string(int, int)>& baseline_of,
                      const std::function<std::vector<std::string>(int, int)>& covariates_of, bool constrained) {
  json j{{"states", 5}, {"absorbing", {5}}, {"transitions", json::array()}};
  for (auto [r, s] : fig1_edges()) j["transitions"].push_back(transition_json(r, s, baseline_of(r, s), covariates_of(r, s)));
  if (constrained) {
    j["constraints"] = json::array();
    j["constraints"].push_back(equal_constraint("xi_B", {"2-1.slope", "3-2.slope", "4-3.slope"}));
    j["constraints"].push_back(equal_constraint("xi_D", {"1-5.slope", "2-5.slope", "3-5.slope", "4-5.slope"}));
  }
  return j;
}

inline std::vector<std::string> covariate_pattern(int r, int s) {
  if (s == 5) return {"sex"};
  if (s == r + 1) return {"sex", "educ"};
  return {};
}

inline json gompertz_covariate_json() {
  json j = fig1_json([](int, int) { return std::string("gompertz"); }, covariate_pattern, true);
  j["constraints"].push_back(
      equal_constraint("beta_D", {"1-5.beta.sex", "2-5.beta.sex", "3-5.beta.sex", "4-5.beta.sex"}));
  return j;
}

inline ModelSpec spec_of(const json& j) { return spec_from_json(j); }

// A valid generator for the given edges on D states with rates drawn
// log-uniformly in [lo, hi].
inline Eigen::MatrixXd random_generator(int D, const std::vector<std::pair<int, int>>& edges, std::mt19937_64& rng,
                                        double lo = 0.01, double hi = 2.0) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(D, D);
  for (auto [r, s] : edges) Q(r, s) = std::exp(u(rng));
  for (int i = 0; i < D; ++i) Q(i, i) = -Q.row(i).sum();
  return Q;
}

// Random edge set on D states with the last state absorbing and every
// living state having at least one exit.
inline std::vector<std::pair<int, int>> random_edges(int D, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<std::pair<int, int>> edges;
  for (int r = 0; r < D - 1; ++r) {
    bool any = false;
    for (int s = 0; s < D; ++s) {
      if (s == r) continue;
      if (coin(rng)) {
        edges.emplace_back(r, s);
        any = true;
      }
    }
    if (!any) edges.emplace_back(r, D - 1);
  }
  return edges;
}

inline Eigen::VectorXd random_vector(int n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

// Central difference gradient of f at x.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd a = x, b = x;
    a[k] += h;
    b[k] -= h;
    g[k] = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

inline std::span<const double> span_of(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// Builds a subject from (time, state) pairs with 1-based living states,
// -1 for a right-censored final row; `exact_death` marks the final row.
inline Subject make_subject(const std::string& id, const std::vector<std::pair<double, int>>& obs, bool exact_death,
                            int n_cov = 0, const std::vector<double>& x = {}) {
  Subject s;
  s.id = id;
  s.exact_death = exact_death;
  s.covariates = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(obs.size()), n_cov);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    s.times.push_back(obs[i].first);
    s.states.push_back(obs[i].second < 0 ? kRightCensored : obs[i].second - 1);
    for (int c = 0; c < n_cov; ++c) s.covariates(static_cast<Eigen::Index>(i), c) = x[c];
  }
  return s;
}

}  // namespace flexmsm::testing

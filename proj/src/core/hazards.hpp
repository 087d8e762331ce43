#pragma once

#include "core/model_spec.hpp"
#include "core/spline.hpp"

#include <optional>
#include <span>
#include <vector>

namespace flexmsm {

// A transition bound to its spline basis and to positions in the model's
// covariate vector.
//
// Local coefficient order (matching enumerate_coefficients):
//   Exponential  (intercept, beta...)
//   Gompertz     (intercept, slope, beta...)
//   Weibull      (log-rate intercept, log-shape, beta...)
//   PSpline      (alpha_1..alpha_K, beta...)
struct TransitionTerm {
  int from = 0;
  int to = 0;
  Baseline baseline = Baseline::Exponential;
  std::optional<SplineBasis> basis;
  std::vector<int> covariate_index;

  int num_baseline_coefs() const;
  int num_coefs() const { return num_baseline_coefs() + static_cast<int>(covariate_index.size()); }
};

// log q_rs(t | x).
double log_hazard(const TransitionTerm& term, std::span<const double> coefs, double t,
                  std::span<const double> x);

double hazard(const TransitionTerm& term, std::span<const double> coefs, double t,
              std::span<const double> x);

// Writes dq/dc for every local coefficient into `grad` and returns q.
double hazard_gradient(const TransitionTerm& term, std::span<const double> coefs, double t,
                       std::span<const double> x, std::span<double> grad);

}  // namespace flexmsm

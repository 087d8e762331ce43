#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace flexmsm {

// B-spline basis of K functions of the given degree on equidistant knots
// over [lower, upper]. The knot vector extends `degree` spacings beyond each
// end of the domain, as in the usual P-spline construction.
class SplineBasis {
 public:
  SplineBasis(double lower, double upper, int K, int degree);

  // Domain [t_min, t_max + one knot spacing] so the last observed time is
  // interior.
  static SplineBasis for_observed_range(double t_min, double t_max, int K, int degree);

  int size() const { return K_; }
  int degree() const { return degree_; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  double spacing() const { return spacing_; }
  const std::vector<double>& knots() const { return knots_; }

  // Writes B_1(t)..B_K(t) into `out` (length K). Times outside the domain
  // are clamped to the nearest endpoint and reported through the warning
  // sink. Returns the index of the first possibly-nonzero function.
  int eval(double t, std::span<double> out) const;
  Eigen::VectorXd eval(double t) const;

 private:
  double lower_, upper_, spacing_;
  int K_, degree_;
  std::vector<double> knots_;
};

}  // namespace flexmsm

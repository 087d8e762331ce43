#include "core/spline.hpp"

#include "core/diagnostics.hpp"
#include "core/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace flexmsm {

SplineBasis::SplineBasis(double lower, double upper, int K, int degree)
    : lower_(lower), upper_(upper), K_(K), degree_(degree) {
  if (!(upper > lower) || !std::isfinite(lower) || !std::isfinite(upper))
    throw DomainError("spline domain must satisfy lower < upper");
  if (degree < 0) throw DomainError("spline degree must be non-negative");
  if (K <= degree) throw DomainError("spline basis needs K > degree");
  const int nseg = K - degree;
  spacing_ = (upper - lower) / nseg;
  knots_.resize(K + degree + 1);
  for (int i = 0; i <= K + degree; ++i) knots_[i] = lower + (i - degree) * spacing_;
}

SplineBasis SplineBasis::for_observed_range(double t_min, double t_max, int K, int degree) {
  if (!(t_max > t_min)) t_max = t_min + 1.0;
  const double margin = (t_max - t_min) / (K - degree);
  return SplineBasis(t_min, t_max + margin, K, degree);
}

int SplineBasis::eval(double t, std::span<double> out) const {
  if (static_cast<int>(out.size()) != K_) throw DomainError("basis output has the wrong length");
  if (!std::isfinite(t)) throw DomainError("spline evaluated at a non-finite time");
  if (t < lower_ || t > upper_) {
    std::ostringstream msg;
    msg << "time " << t << " outside spline domain [" << lower_ << ", " << upper_
        << "]; clamped to the boundary";
    record_warning("spline_extrapolation", msg.str());
    t = std::clamp(t, lower_, upper_);
  }
  std::fill(out.begin(), out.end(), 0.0);

  // Knot span m with knots[m] <= t < knots[m+1], m in [degree, K-1].
  int m = degree_ + static_cast<int>(std::floor((t - lower_) / spacing_));
  m = std::clamp(m, degree_, K_ - 1);
  while (m > degree_ && t < knots_[m]) --m;
  while (m < K_ - 1 && t >= knots_[m + 1]) ++m;

  // Triangular recurrence for the degree+1 functions supported on span m.
  double N[32];
  double left[32], right[32];
  if (degree_ + 1 > 32) throw DomainError("spline degree too large");
  N[0] = 1.0;
  for (int j = 1; j <= degree_; ++j) {
    left[j] = t - knots_[m + 1 - j];
    right[j] = knots_[m + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = N[r] / (right[r + 1] + left[j - r]);
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
  const int first = m - degree_;
  for (int r = 0; r <= degree_; ++r) out[first + r] = N[r];
  return first;
}

Eigen::VectorXd SplineBasis::eval(double t) const {
  Eigen::VectorXd v(K_);
  eval(t, std::span<double>(v.data(), K_));
  return v;
}

}  // namespace flexmsm

#pragma once

// Reference implementations that share no code with the library.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <vector>

namespace flexmsm::oracle {

// B_{i,p}(t) by the Cox-de Boor recursion on an explicit knot vector, with
// half-open support [k_i, k_{i+p+1}).
inline double cox_de_boor(const std::vector<double>& knots, int i, int p, double t) {
  if (p == 0) return (knots[i] <= t && t < knots[i + 1]) ? 1.0 : 0.0;
  double v = 0.0;
  const double d1 = knots[i + p] - knots[i];
  const double d2 = knots[i + p + 1] - knots[i + 1];
  if (d1 > 0) v += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t);
  if (d2 > 0) v += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t);
  return v;
}

// Equidistant knots with `degree` extra spacings beyond each end of [lo, hi].
inline std::vector<double> equidistant_knots(double lo, double hi, int K, int degree) {
  const double h = (hi - lo) / (K - degree);
  std::vector<double> k;
  for (int i = -degree; i <= K; ++i) k.push_back(lo + i * h);
  return k;
}

// exp(A) by scaling and squaring a truncated Taylor series (50 terms), in
// long double.
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& A) {
  using M = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const M X0 = A.cast<long double>();
  long double norm = 0;
  for (Eigen::Index i = 0; i < X0.rows(); ++i) norm = std::max(norm, X0.row(i).cwiseAbs().sum());
  int s = 0;
  while (norm > 0.25L) {
    norm /= 2;
    ++s;
  }
  const M X = X0 / std::pow(2.0L, s);
  M term = M::Identity(A.rows(), A.cols());
  M sum = term;
  for (int m = 1; m <= 50; ++m) {
    term = (term * X) / static_cast<long double>(m);
    sum += term;
  }
  for (int k = 0; k < s; ++k) sum = (sum * sum).eval();
  return sum.cast<double>();
}

// Generator as a function of time.
using GeneratorFn = std::function<Eigen::MatrixXd(double)>;

// Probability mass over latent states after moving from the distribution
// `start` through (t1, t2] in `steps` equal steps, summing over every latent
// path with per-step transition probabilities I + dt Q(tau). The generator is
// evaluated at `q_time(tau)` for the step starting at tau.
inline Eigen::RowVectorXd path_sum(const Eigen::RowVectorXd& start, double t1, double t2, int steps,
                                   const GeneratorFn& Q, const std::function<double(double)>& q_time) {
  const double dt = (t2 - t1) / steps;
  Eigen::RowVectorXd v = start;
  for (int k = 0; k < steps; ++k) {
    const double tau = t1 + k * dt;
    const Eigen::MatrixXd G = Q(q_time(tau));
    Eigen::RowVectorXd next = v;
    for (Eigen::Index r = 0; r < G.rows(); ++r)
      for (Eigen::Index s = 0; s < G.cols(); ++s) next[s] += v[r] * dt * G(r, s);
    v = next;
  }
  return v;
}

// MLE of a constant rate from exact event/censoring times: log(d / exposure).
inline double exponential_log_rate_mle(double deaths, double exposure) { return std::log(deaths / exposure); }

}  // namespace flexmsm::oracle

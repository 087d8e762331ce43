#pragma once

#include "core/model.hpp"

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace flexmsm {

// Relative eigenvalue gap below which the divided difference in V_k is
// replaced by its limit.
inline constexpr double kEigenTieTolerance = 1e-7;
// Eigenvector matrices with a larger condition number are treated as
// near-defective and handled by the series route. The error in P on the eigen
// route is about 3 eps cond.
inline constexpr double kFallbackCondition = 1e6;
// Derivative error on the eigen route grows like eps * cond^2, so
// derivatives switch to complex-step differentiation much earlier than P.
inline constexpr double kDerivativeFallbackCondition = 1e4;

// dQ/dtheta_k = sum over entries with theta == k of value * U_edge, where
// U_edge = e_from (e_to - e_from)^T moves rate into the edge and out of the
// diagonal.
struct GeneratorDerivEntry {
  int theta = 0;
  int edge = 0;
  double value = 0.0;
};

struct GeneratorBundle {
  Eigen::MatrixXd Q;
  std::vector<std::pair<int, int>> edges;
  std::vector<GeneratorDerivEntry> dQ_entries;
  int num_params = 0;

  Eigen::VectorXcd eigenvalues;
  Eigen::MatrixXcd A;
  Eigen::MatrixXcd A_inv;
  double condition = 1.0;
  bool fallback = false;  // series + complex-step route

  bool derivative_fallback() const { return fallback || condition > kDerivativeFallbackCondition; }

  int num_states() const { return static_cast<int>(Q.rows()); }
  Eigen::MatrixXd dQ(int k) const;
  Eigen::MatrixXd edge_direction(int edge) const;
};

// Decompose Q and package it. `edges` and `entries` describe the parameter
// dependence; both may be empty when derivatives are not needed.
GeneratorBundle make_bundle(Eigen::MatrixXd Q, std::vector<std::pair<int, int>> edges,
                            std::vector<GeneratorDerivEntry> entries, int num_params);

// Q(t, x) for the model at expanded coefficients `eta`.
GeneratorBundle build_generator_eta(const Model& model, const Eigen::VectorXd& eta, double t,
                                    std::span<const double> x, bool with_derivatives = true);
GeneratorBundle build_generator(const Model& model, const Eigen::VectorXd& theta, double t,
                                std::span<const double> x, bool with_derivatives = true);

// P(dt) = A diag(exp(b dt)) A^-1, validated real and row-stochastic.
Eigen::MatrixXd transition_matrix(const GeneratorBundle& bundle, double dt);

// dP(dt)/dtheta_k for k = 0..num_params-1.
std::vector<Eigen::MatrixXd> transition_matrix_derivs(const GeneratorBundle& bundle, double dt);

// dP(dt) along each edge direction U_e.
std::vector<Eigen::MatrixXd> edge_derivs(const GeneratorBundle& bundle, double dt);

// Row-vector kernel: given a row vector r, returns r P(dt) and the matrix
// whose row e is r dP/dU_e.
struct RowStep {
  Eigen::RowVectorXd rP;
  Eigen::MatrixXd rW;  // edges x D
};
RowStep propagate_row(const GeneratorBundle& bundle, double dt, const Eigen::RowVectorXd& r,
                      bool with_derivatives);

// exp(A) by scaling and squaring of the Taylor series.
Eigen::MatrixXd expm_series(const Eigen::MatrixXd& A);
Eigen::MatrixXcd expm_series(const Eigen::MatrixXcd& A);

struct GridPolicy {
  enum class Kind { DataDriven, Imposed };
  Kind kind = Kind::DataDriven;
  double h = 0.5;
  double origin = 0.0;  // imposed grid points are origin + m h
};

// A piece of an observation interval with the time at which its constant
// generator is evaluated.
struct Cell {
  double start = 0.0;
  double end = 0.0;
  double q_time = 0.0;
};

// Pieces covering (t1, t2]. Data-driven: one cell evaluated at t1. Imposed:
// grid cells (u_m, u_m+1] intersected with the interval, each evaluated at
// its grid point u_m.
std::vector<Cell> interval_cells(double t1, double t2, const GridPolicy& policy);

// Breakpoints u_1 = t1, u_j+1 = u_j + h, last cell possibly shorter.
struct IntervalGrid {
  std::vector<double> breakpoints;
  bool imposed = true;
};
IntervalGrid anchored_grid(double t1, double t2, double h);

using CovariatePath = std::function<Eigen::VectorXd(double)>;

struct ChainResult {
  Eigen::MatrixXd P;
  std::vector<Eigen::MatrixXd> dP;  // empty unless requested
  double last_q_time = 0.0;
};

// P(t1, t2) as the ordered product of per-cell transition matrices;
// derivatives accumulated by the product rule.
ChainResult chain_interval(const Model& model, const Eigen::VectorXd& theta, double t1, double t2,
                           const CovariatePath& x_path, const GridPolicy& policy,
                           bool with_derivatives = true);
ChainResult chain_interval(const Model& model, const Eigen::VectorXd& theta, double t1, double t2,
                           const Eigen::VectorXd& x, const GridPolicy& policy,
                           bool with_derivatives = true);

// Row `from` of P(t1, t2) and its theta-derivatives (q x D), constant
// covariates. Used by the likelihood.
struct RowChain {
  Eigen::RowVectorXd p;
  Eigen::MatrixXd dp;
  double last_q_time = 0.0;
};
RowChain chain_row(const Model& model, const Eigen::VectorXd& eta, int from, double t1, double t2,
                   std::span<const double> x, const GridPolicy& policy, bool with_derivatives);

}  // namespace flexmsm

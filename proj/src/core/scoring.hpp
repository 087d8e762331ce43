#pragma once

#include "core/likelihood.hpp"
#include "core/markov.hpp"
#include "core/model.hpp"
#include "core/panel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace flexmsm {

struct FitOptions {
  int max_iter = 100;
  double tol = 1e-6;  // on sum |theta_k^(v+1) - theta_k^(v)|
  double score_tol = 1e-4;  // max |S_p| also required at convergence
  int max_halvings = 20;
  GridPolicy policy;
  int threads = 1;
};

struct TraceEntry {
  int iteration = 0;
  Eigen::VectorXd theta;
  double penalised_loglik = 0.0;
  double score_norm = 0.0;  // max |S_p|
  double step_scale = 1.0;  // 2^-halvings of the accepted step
};

struct FitResult {
  std::vector<std::string> names;
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd covariance;   // M_p(theta_hat)^-1
  Eigen::MatrixXd information;  // M(theta_hat)
  Eigen::MatrixXd penalty;      // J(lambda)
  double loglik = 0.0;
  double penalised_loglik = 0.0;
  double df = 0.0;
  std::vector<double> block_df;
  double aic = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<TraceEntry> trace;
  std::vector<double> lambda;  // natural scale, one per spline block
  GridPolicy policy;

  Eigen::VectorXd standard_errors() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

// Accepted steps never lower l_p by more than this.
inline double roundoff_slack(double penalised_loglik) { return 1e-12 * (1.0 + std::abs(penalised_loglik)); }

// Penalised Fisher scoring from theta0 with step-halving.
FitResult fit(const Model& model, const PanelDataset& data, const PenaltySpec& penalty,
              const Eigen::VectorXd& theta0, const FitOptions& options = {});

// tr[M (M + J)^-1]. J == 0 gives exactly q.
double degrees_of_freedom(const Eigen::MatrixXd& M, const Eigen::MatrixXd& J);
// Diagonal of M (M + J)^-1; its sum is the total df.
Eigen::VectorXd df_contributions(const Eigen::MatrixXd& M, const Eigen::MatrixXd& J);
// Per spline block sums of df_contributions over the block's parameters.
std::vector<double> block_degrees_of_freedom(const ParameterLayout& layout, const Eigen::VectorXd& contributions);

double aic(double penalised_loglik, double df);
inline double aic(const FitResult& f) { return aic(f.penalised_loglik, f.df); }

struct SearchPoint {
  std::vector<double> log10_lambda;
  bool ok = false;
  bool converged = false;
  double loglik = 0.0;
  double penalised_loglik = 0.0;
  double df = 0.0;
  double aic = 0.0;
  int iterations = 0;
  std::string error;
};

struct SearchResult {
  std::vector<SearchPoint> surface;  // Cartesian product, last block varies fastest
  int best = -1;
  FitResult best_fit;
  // Per block: AIC flat at the top of the grid and near the slice minimum.
  std::vector<bool> plateau;
  std::vector<std::optional<double>> recommended_log10_lambda;
};

inline constexpr double kPlateauAicChange = 0.05;
inline constexpr double kPlateauAicMargin = 1.0;
inline constexpr double kPinnedLog10Lambda = 7.0;

// Exhaustive search over the Cartesian product of per-block log10 lambda
// grids, each fit warm-started from the previous successful grid point.
SearchResult lambda_search(const Model& model, const PanelDataset& data,
                           const std::vector<std::vector<double>>& log10_grid, const Eigen::VectorXd& theta0,
                           const FitOptions& options = {});

}  // namespace flexmsm

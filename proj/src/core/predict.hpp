#pragma once

#include "core/markov.hpp"
#include "core/model.hpp"
#include "core/panel.hpp"
#include "core/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace flexmsm {

// Draws from N(mean, cov) as mean + L z. L is the Cholesky factor when cov
// is positive definite, otherwise V diag(sqrt(lambda)) from an eigen
// decomposition (covers singular PSD matrices such as cov = 0). Matrices
// with clearly negative eigenvalues are rejected unless clip_negative is set.
class MvnSampler {
 public:
  MvnSampler(Eigen::VectorXd mean, const Eigen::MatrixXd& cov, bool clip_negative = false);

  // Draw number `index` of the stream identified by `seed`; independent of
  // the order in which draws are requested.
  Eigen::VectorXd draw(std::uint64_t seed, std::uint64_t index) const;
  const Eigen::MatrixXd& factor() const { return L_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd L_;
};

struct PredictOptions {
  double h = 0.5;
  int B = 1000;
  std::uint64_t seed = 1;
  double lower_quantile = 0.025;
  double upper_quantile = 0.975;
  bool clip_eigenvalues = false;
  int threads = 1;
};

struct PredictionResult {
  double t1 = 0.0;
  double t2 = 0.0;
  Eigen::MatrixXd point;
  Eigen::MatrixXd mc_mean;
  Eigen::MatrixXd mc_se;
  Eigen::MatrixXd lower;
  Eigen::MatrixXd upper;
  int B = 0;
  std::uint64_t seed = 0;
};

// P(t1, t2) on the grid u_j = t1 + (j-1) h with Monte Carlo summaries over B
// parameter draws. `x` follows the model's covariate order.
PredictionResult predict_matrix(const Model& model, const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& cov,
                                double t1, double t2, const Eigen::VectorXd& x, const PredictOptions& options = {});

// Same draws evaluated at every grid point t1 + h, t1 + 2h, ..., t2 (the last
// possibly closer than h).
std::vector<PredictionResult> predict_path(const Model& model, const Eigen::VectorXd& theta_hat,
                                           const Eigen::MatrixXd& cov, double t1, double t2,
                                           const Eigen::VectorXd& x, const PredictOptions& options = {});

// P(t1, t) for each grid time returned in `times`.
std::vector<Eigen::MatrixXd> transition_path(const Model& model, const Eigen::VectorXd& theta, double t1, double t2,
                                             const Eigen::VectorXd& x, double h, std::vector<double>* times = nullptr);

struct KaplanMeier {
  std::vector<double> times;  // distinct event times
  std::vector<double> survival;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<int> at_risk;
  std::vector<int> events;

  // Step function value (survival, lower, upper) at time t.
  double survival_at(double t) const;
  double lower_at(double t) const;
  double upper_at(double t) const;
};

// Product-limit estimate with Greenwood 95% bands S +- 1.96 S sqrt(sum d/(n(n-d))),
// clipped to [0, 1].
KaplanMeier kaplan_meier(const std::vector<double>& times, const std::vector<bool>& events);

struct SurvivalCurves {
  int baseline_state = 0;
  std::vector<double> times;  // time since each subject's first observation
  std::vector<std::string> subject_ids;
  Eigen::MatrixXd subject_survival;  // subjects x times
  std::vector<double> mean;
  KaplanMeier km;
};

// Model-based survival from each subject first observed in `baseline_state`,
// using the subject's own start time and baseline covariates, and the
// Kaplan-Meier estimate from the same subjects' follow-up.
SurvivalCurves survival_curves(const Model& model, const Eigen::VectorXd& theta, const PanelDataset& data,
                               int baseline_state, double horizon, double h, int threads = 1);

}  // namespace flexmsm

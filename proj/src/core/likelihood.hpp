#pragma once

#include "core/markov.hpp"
#include "core/model.hpp"
#include "core/panel.hpp"

#include <Eigen/Dense>

#include <vector>

namespace flexmsm {

// Contribution of one subject: log L_i = sum over intervals of log L_ij.
struct SubjectContribution {
  double loglik = 0.0;
  Eigen::VectorXd gradient;           // d log L_i / d theta
  std::vector<double> term_logliks;   // log L_ij, j = 2..n
  Eigen::MatrixXd term_scores;        // q x (n-1), column j-2 = d log L_ij / d theta
};

// `subject` must use the model's covariate order (see bind_panel).
SubjectContribution subject_loglik(const Model& model, const Eigen::VectorXd& theta, const Subject& subject,
                                   const GridPolicy& policy, bool with_derivatives = true);

struct LikelihoodReport {
  double loglik = 0.0;
  double penalised_loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::VectorXd penalised_score;
  Eigen::MatrixXd information;            // M: sum of per-interval score outer products
  Eigen::MatrixXd penalised_information;  // M + J
  std::vector<double> subject_logliks;
};

struct EvalOptions {
  int threads = 1;
  bool with_derivatives = true;
};

// Penalised log-likelihood, score and estimated information over a dataset
// bound to the model. Reduction is in subject order, so results do not
// depend on the thread count.
LikelihoodReport dataset_report(const Model& model, const Eigen::VectorXd& theta, const PanelDataset& data,
                                const PenaltySpec& penalty, const GridPolicy& policy,
                                const EvalOptions& options = {});

}  // namespace flexmsm

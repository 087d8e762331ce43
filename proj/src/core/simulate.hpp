#pragma once

#include "core/model.hpp"
#include "core/panel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace flexmsm {

struct CovariateGenerator {
  enum class Kind { Bernoulli, Normal, Uniform, Constant };
  std::string name;
  Kind kind = Kind::Bernoulli;
  double a = 0.5;  // Bernoulli p, Normal mean, Uniform lower, Constant value
  double b = 0.0;  // Normal sd, Uniform upper
};

struct StudyDesign {
  int n_subjects = 1000;
  // Probabilities over the living states in index order; empty puts every
  // subject in the first state.
  std::vector<double> baseline_state_probs;
  double baseline_min = 50.0;  // baseline age ~ U[baseline_min, baseline_max]
  double baseline_max = 89.0;
  double time_shift = 49.0;    // subtracted from age to give model time
  double visit_gap = 2.0;      // inter-visit gap ~ U[gap - jitter, gap + jitter]
  double visit_jitter = 0.25;
  double follow_up = 12.0;     // administrative censoring after baseline
  double step = 0.01;          // latent simulation grid
  // Probability that a subject's vital status is tracked to the end of
  // follow-up: deaths are recorded wherever they fall and survivors end with
  // a right-censored row. Untracked subjects leave at their last visit.
  double vital_status_prob = 1.0;
  std::vector<CovariateGenerator> covariates;

  static StudyDesign defaults();  // includes sex ~ B(0.456), educ ~ B(0.442)
  void validate(int n_living_states) const;
};

struct LatentPath {
  std::string id;
  std::vector<double> times;  // entry times, first = baseline
  std::vector<int> states;
};

struct SimulationResult {
  PanelDataset data;
  std::vector<LatentPath> paths;
};

// Competing-risks simulation on the design's fine grid with piecewise-constant
// rates, observed at the visit schedule. Deterministic for a fixed seed.
SimulationResult simulate_panel(const Model& model, const Eigen::VectorXd& theta, const StudyDesign& design,
                                std::uint64_t seed, int threads = 1);

// State occupied at time t by a latent path.
int state_at(const LatentPath& path, double t);

struct StateTable {
  std::vector<int> row_states;  // living states, 0-based
  Eigen::MatrixXi counts;       // living states x all states
};

// Counts of successive observed state pairs; right-censored rows contribute
// nothing.
StateTable state_table(const PanelDataset& data, const StateSpace& states);

}  // namespace flexmsm

#pragma once

#include "core/hazards.hpp"
#include "core/model_spec.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flexmsm {

// A validated ModelSpec bound to its parameter layout and spline bases.
// Immutable after construction.
class Model {
 public:
  // `observed_range` supplies [min, max] observed time for the spline knot
  // domain when the ModelSpec does not pin `time_domain`.
  explicit Model(ModelSpec spec,
                 std::optional<std::pair<double, double>> observed_range = std::nullopt);

  const ModelSpec& spec() const { return spec_; }
  const ParameterLayout& layout() const { return layout_; }
  const std::vector<TransitionTerm>& terms() const { return terms_; }
  const std::vector<std::string>& covariates() const { return covariates_; }

  int num_states() const { return spec_.states.n_states; }
  int num_params() const { return layout_.num_free(); }
  int num_covariates() const { return static_cast<int>(covariates_.size()); }
  bool is_absorbing(int s) const { return spec_.states.is_absorbing(s); }
  std::optional<std::pair<double, double>> spline_domain() const { return domain_; }

  // Spec with `time_domain` pinned to the domain actually used, so the model
  // can be rebuilt exactly from serialised output.
  ModelSpec bound_spec() const;

  std::span<const double> transition_coefs(const Eigen::VectorXd& eta, int transition) const {
    return {eta.data() + layout_.transition_offset(transition),
            static_cast<std::size_t>(layout_.transition_size(transition))};
  }

  // Hazard of transition `transition` given the expanded coefficient vector.
  double transition_hazard(const Eigen::VectorXd& eta, int transition, double t,
                           std::span<const double> x) const;

  // Index of transition from -> to, or -1.
  int transition_index(int from, int to) const;

  // True when `to` can be reached from `from` along the declared edges
  // (including from == to).
  bool reachable(int from, int to) const { return reach_[from * num_states() + to]; }

  Eigen::VectorXd start_values() const { return default_start(spec_, layout_); }
  Eigen::MatrixXd penalty(const PenaltySpec& p) const { return penalty_matrix(p, layout_); }

 private:
  ModelSpec spec_;
  ParameterLayout layout_;
  std::vector<TransitionTerm> terms_;
  std::vector<std::string> covariates_;
  std::optional<std::pair<double, double>> domain_;
  std::vector<bool> reach_;
};

}  // namespace flexmsm

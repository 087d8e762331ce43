#include "core/model.hpp"

#include "core/errors.hpp"

#include <algorithm>

namespace flexmsm {

Model::Model(ModelSpec spec, std::optional<std::pair<double, double>> observed_range)
    : spec_(std::move(spec)), layout_(ParameterLayout::build(spec_)), covariates_(spec_.covariate_names()) {
  const int D = spec_.states.n_states;
  if (spec_.num_spline_blocks() > 0) {
    if (spec_.time_domain) {
      domain_ = spec_.time_domain;
    } else if (observed_range) {
      // Domain widened by one knot spacing of the first spline transition;
      // all spline transitions share it.
      for (const auto& tr : spec_.transitions) {
        if (tr.baseline != Baseline::PSpline) continue;
        const auto b = SplineBasis::for_observed_range(observed_range->first, observed_range->second,
                                                       tr.spline.K, tr.spline.degree);
        domain_ = std::make_pair(b.lower(), b.upper());
        break;
      }
    } else {
      throw SpecError("model has P-spline transitions but no time domain: set 'time_domain' "
                      "or bind the model to data");
    }
  }

  for (const auto& tr : spec_.transitions) {
    TransitionTerm term;
    term.from = tr.from;
    term.to = tr.to;
    term.baseline = tr.baseline;
    if (tr.baseline == Baseline::PSpline)
      term.basis.emplace(domain_->first, domain_->second, tr.spline.K, tr.spline.degree);
    for (const auto& c : tr.covariates) {
      auto it = std::find(covariates_.begin(), covariates_.end(), c);
      term.covariate_index.push_back(static_cast<int>(it - covariates_.begin()));
    }
    terms_.push_back(std::move(term));
  }

  reach_.assign(static_cast<std::size_t>(D) * D, false);
  for (int s = 0; s < D; ++s) {
    std::vector<int> stack{s};
    reach_[s * D + s] = true;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (const auto& tr : spec_.transitions) {
        if (tr.from != u || reach_[s * D + tr.to]) continue;
        reach_[s * D + tr.to] = true;
        stack.push_back(tr.to);
      }
    }
  }
}

ModelSpec Model::bound_spec() const {
  ModelSpec s = spec_;
  if (domain_) s.time_domain = domain_;
  return s;
}

double Model::transition_hazard(const Eigen::VectorXd& eta, int transition, double t,
                                std::span<const double> x) const {
  return hazard(terms_[transition], transition_coefs(eta, transition), t, x);
}

int Model::transition_index(int from, int to) const { return spec_.find_transition(from, to); }

}  // namespace flexmsm

#include "core/likelihood.hpp"

#include "core/errors.hpp"
#include "core/format.hpp"
#include "core/parallel.hpp"

#include <cmath>
#include <string>

namespace flexmsm {

namespace {

constexpr double kMinProbability = 1e-300;

std::string interval_label(const Subject& s, int j) {
  return "subject " + s.id + ", interval (" + format_double(s.times[j - 1]) + ", " + format_double(s.times[j]) +
         "]";
}

}  // namespace

SubjectContribution subject_loglik(const Model& model, const Eigen::VectorXd& theta, const Subject& subject,
                                   const GridPolicy& policy, bool with_derivatives) {
  const auto& layout = model.layout();
  const int q = model.num_params();
  const int D = model.num_states();
  const int n = subject.size();
  const Eigen::VectorXd eta = layout.expand(theta);
  const auto& theta_of_eta = layout.theta_of_eta();

  SubjectContribution out;
  out.term_logliks.reserve(n - 1);
  if (with_derivatives) {
    out.gradient = Eigen::VectorXd::Zero(q);
    out.term_scores.resize(q, n - 1);
  }
  std::vector<double> x(static_cast<std::size_t>(model.num_covariates()));
  std::vector<double> grad_local;

  for (int j = 1; j < n; ++j) {
    for (std::size_t c = 0; c < x.size(); ++c) x[c] = subject.covariates(j - 1, static_cast<Eigen::Index>(c));
    const int from = subject.states[j - 1];
    const int to = subject.states[j];
    const bool last = j + 1 == n;
    const RowChain rc = chain_row(model, eta, from, subject.times[j - 1], subject.times[j], x, policy,
                                  with_derivatives);

    double L = 0.0;
    Eigen::VectorXd dL;
    if (with_derivatives) dL = Eigen::VectorXd::Zero(q);

    if (to == kRightCensored) {
      for (int s = 0; s < D; ++s) {
        if (model.is_absorbing(s)) continue;
        L += rc.p[s];
        if (with_derivatives) dL += rc.dp.col(s);
      }
    } else if (last && subject.exact_death) {
      for (int s = 0; s < D; ++s) {
        if (model.is_absorbing(s)) continue;
        const int tr = model.transition_index(s, to);
        if (tr < 0) continue;
        const auto& term = model.terms()[tr];
        const auto coefs = model.transition_coefs(eta, tr);
        if (!with_derivatives) {
          L += rc.p[s] * hazard(term, coefs, rc.last_q_time, x);
          continue;
        }
        grad_local.assign(coefs.size(), 0.0);
        const double h = hazard_gradient(term, coefs, rc.last_q_time, x, grad_local);
        L += rc.p[s] * h;
        dL += h * rc.dp.col(s);
        const int off = layout.transition_offset(tr);
        for (std::size_t c = 0; c < grad_local.size(); ++c) {
          const int k = theta_of_eta[off + static_cast<int>(c)];
          if (k >= 0) dL[k] += rc.p[s] * grad_local[c];
        }
      }
    } else {
      L = rc.p[to];
      if (with_derivatives) dL = rc.dp.col(to);
    }

    if (!std::isfinite(L) || L < kMinProbability)
      throw NumericalError(interval_label(subject, j) + ": observation has probability " + format_double(L) +
                               " under the current parameters",
                           "{\"subject\":\"" + subject.id + "\",\"interval\":" + std::to_string(j) + "}");
    const double ll = std::log(L);
    out.loglik += ll;
    out.term_logliks.push_back(ll);
    if (with_derivatives) {
      out.term_scores.col(j - 1) = dL / L;
      out.gradient += out.term_scores.col(j - 1);
    }
  }
  return out;
}

LikelihoodReport dataset_report(const Model& model, const Eigen::VectorXd& theta, const PanelDataset& data,
                                const PenaltySpec& penalty, const GridPolicy& policy, const EvalOptions& options) {
  const int q = model.num_params();
  if (theta.size() != q)
    throw DomainError("parameter vector has length " + std::to_string(theta.size()) + ", model expects " +
                      std::to_string(q));
  if (!theta.allFinite()) throw DomainError("parameter vector contains non-finite values");
  if (static_cast<int>(data.covariate_names.size()) != model.num_covariates() ||
      data.covariate_names != model.covariates())
    throw DataError("dataset is not bound to the model's covariates");

  const Eigen::MatrixXd J = model.penalty(penalty);
  std::vector<SubjectContribution> parts(data.subjects.size());
  parallel_for(data.subjects.size(), options.threads, [&](std::size_t i) {
    parts[i] = subject_loglik(model, theta, data.subjects[i], policy, options.with_derivatives);
  });

  LikelihoodReport r;
  r.subject_logliks.reserve(parts.size());
  if (options.with_derivatives) {
    r.score = Eigen::VectorXd::Zero(q);
    r.information = Eigen::MatrixXd::Zero(q, q);
  }
  double sum = 0.0;
  double comp = 0.0;  // Neumaier compensation
  for (const auto& p : parts) {
    const double t = sum + p.loglik;
    comp += std::abs(sum) >= std::abs(p.loglik) ? (sum - t) + p.loglik : (p.loglik - t) + sum;
    sum = t;
    r.subject_logliks.push_back(p.loglik);
    if (options.with_derivatives) {
      r.score += p.gradient;
      r.information.selfadjointView<Eigen::Lower>().rankUpdate(p.term_scores);
    }
  }
  r.loglik = sum + comp;
  r.penalised_loglik = r.loglik - 0.5 * penalty_value(penalty, model.layout(), theta);
  if (options.with_derivatives) {
    r.information = r.information.selfadjointView<Eigen::Lower>();
    r.penalised_score = r.score - J * theta;
    r.penalised_information = r.information + J;
  }
  return r;
}

}  // namespace flexmsm

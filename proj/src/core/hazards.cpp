#include "core/hazards.hpp"

#include "core/errors.hpp"

#include <cmath>
#include <sstream>

namespace flexmsm {

int TransitionTerm::num_baseline_coefs() const {
  switch (baseline) {
    case Baseline::Exponential: return 1;
    case Baseline::Gompertz: return 2;
    case Baseline::Weibull: return 2;
    case Baseline::PSpline: return basis ? basis->size() : 0;
  }
  return 0;
}

namespace {

constexpr int kMaxBasis = 256;

void check_inputs(const TransitionTerm& term, std::span<const double> coefs, double t,
                  std::span<const double> x) {
  if (static_cast<int>(coefs.size()) != term.num_coefs())
    throw DomainError("coefficient vector has the wrong length for transition " +
                      std::to_string(term.from + 1) + "-" + std::to_string(term.to + 1));
  for (int idx : term.covariate_index)
    if (idx < 0 || idx >= static_cast<int>(x.size()))
      throw DomainError("covariate vector is shorter than the model's covariate list");
  if (!std::isfinite(t)) throw DomainError("hazard evaluated at a non-finite time");
  if (term.baseline == Baseline::Weibull && !(t > 0.0)) {
    std::ostringstream msg;
    msg << "Weibull hazard for transition " << term.from + 1 << "-" << term.to + 1
        << " requires t > 0 (got " << t << ")";
    throw DomainError(msg.str());
  }
  if (term.baseline == Baseline::PSpline && (!term.basis || term.basis->size() > kMaxBasis))
    throw DomainError("P-spline transition without a usable basis");
}

double covariate_part(const TransitionTerm& term, std::span<const double> coefs,
                      std::span<const double> x) {
  const int nb = term.num_baseline_coefs();
  double lp = 0.0;
  for (std::size_t c = 0; c < term.covariate_index.size(); ++c)
    lp += coefs[nb + c] * x[term.covariate_index[c]];
  return lp;
}

}  // namespace

double log_hazard(const TransitionTerm& term, std::span<const double> coefs, double t,
                  std::span<const double> x) {
  check_inputs(term, coefs, t, x);
  double lp = covariate_part(term, coefs, x);
  switch (term.baseline) {
    case Baseline::Exponential:
      lp += coefs[0];
      break;
    case Baseline::Gompertz:
      lp += coefs[0] + coefs[1] * t;
      break;
    case Baseline::Weibull: {
      const double shape = std::exp(coefs[1]);
      lp += coefs[0] + coefs[1] + (shape - 1.0) * std::log(t);
      break;
    }
    case Baseline::PSpline: {
      double B[kMaxBasis];
      const int K = term.basis->size();
      const int first = term.basis->eval(t, std::span<double>(B, K));
      const int last = std::min(K, first + term.basis->degree() + 1);
      for (int k = first; k < last; ++k) lp += coefs[k] * B[k];
      break;
    }
  }
  return lp;
}

double hazard(const TransitionTerm& term, std::span<const double> coefs, double t,
              std::span<const double> x) {
  return std::exp(log_hazard(term, coefs, t, x));
}

double hazard_gradient(const TransitionTerm& term, std::span<const double> coefs, double t,
                       std::span<const double> x, std::span<double> grad) {
  check_inputs(term, coefs, t, x);
  if (grad.size() != coefs.size()) throw DomainError("gradient buffer has the wrong length");
  const int nb = term.num_baseline_coefs();
  double lp = covariate_part(term, coefs, x);
  double B[kMaxBasis];
  double weibull_shape = 0.0;
  switch (term.baseline) {
    case Baseline::Exponential:
      lp += coefs[0];
      break;
    case Baseline::Gompertz:
      lp += coefs[0] + coefs[1] * t;
      break;
    case Baseline::Weibull:
      weibull_shape = std::exp(coefs[1]);
      lp += coefs[0] + coefs[1] + (weibull_shape - 1.0) * std::log(t);
      break;
    case Baseline::PSpline: {
      const int K = term.basis->size();
      term.basis->eval(t, std::span<double>(B, K));
      for (int k = 0; k < K; ++k) lp += coefs[k] * B[k];
      break;
    }
  }
  const double q = std::exp(lp);
  switch (term.baseline) {
    case Baseline::Exponential:
      grad[0] = q;
      break;
    case Baseline::Gompertz:
      grad[0] = q;
      grad[1] = q * t;
      break;
    case Baseline::Weibull:
      grad[0] = q;
      grad[1] = q * (1.0 + weibull_shape * std::log(t));
      break;
    case Baseline::PSpline:
      for (int k = 0; k < nb; ++k) grad[k] = q * B[k];
      break;
  }
  for (std::size_t c = 0; c < term.covariate_index.size(); ++c)
    grad[nb + c] = q * x[term.covariate_index[c]];
  return q;
}

}  // namespace flexmsm

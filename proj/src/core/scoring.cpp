#include "core/scoring.hpp"

#include "core/diagnostics.hpp"
#include "core/errors.hpp"
#include "core/format.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace flexmsm {

namespace {

using nlohmann::json;

constexpr double kSingularRelTol = 1e-12;

double top_eigenvalue(const Eigen::MatrixXd& S) {
  if (S.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
  return es.info() == Eigen::Success ? std::abs(es.eigenvalues().maxCoeff()) : 0.0;
}

// Smallest eigenvalue of M + J that still counts as information: relative to
// the data information M, but never below what the eigensolver resolves when
// a large penalty dominates M + J.
double singular_threshold(const Eigen::MatrixXd& M, double top_Mp) {
  return std::max(kSingularRelTol * top_eigenvalue(M), 100.0 * std::numeric_limits<double>::epsilon() * top_Mp);
}
constexpr double kRoundoffGain = 1e-12;

json trace_json(const std::vector<TraceEntry>& trace) {
  json out = json::array();
  for (const auto& t : trace)
    out.push_back({{"iteration", t.iteration},
                   {"penalised_loglik", t.penalised_loglik},
                   {"score_max_abs", t.score_norm},
                   {"step_scale", t.step_scale},
                   {"theta", std::vector<double>(t.theta.data(), t.theta.data() + t.theta.size())}});
  return out;
}

// Throws NumericalError naming the weakest direction when Mp is not safely
// positive definite.
void check_information(const Eigen::MatrixXd& Mp, const Eigen::MatrixXd& M, const std::vector<std::string>& names,
                       const std::vector<TraceEntry>& trace) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Mp);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double top = std::max(std::abs(ev.maxCoeff()), 1e-300);
  if (es.info() == Eigen::Success && ev.allFinite() && ev.minCoeff() > singular_threshold(M, top)) return;

  Eigen::VectorXd v = es.eigenvectors().col(0);
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return std::abs(v[a]) > std::abs(v[b]); });
  json direction = json::object();
  std::ostringstream msg;
  msg << "penalised information matrix is singular (smallest eigenvalue " << format_double(ev.minCoeff())
      << "); parameters not identified along";
  int shown = 0;
  for (int k : idx) {
    if (std::abs(v[k]) < 0.1 && shown > 0) break;
    direction[names[k]] = v[k];
    msg << (shown ? ", " : " ") << names[k] << " (" << format_double(std::round(v[k] * 1000) / 1000) << ")";
    ++shown;
  }
  json details{{"smallest_eigenvalue", ev.minCoeff()}, {"null_direction", direction}, {"trace", trace_json(trace)}};
  throw NumericalError(msg.str(), details.dump());
}

TraceEntry make_entry(int it, const Eigen::VectorXd& theta, const LikelihoodReport& r, double scale) {
  return {it, theta, r.penalised_loglik, r.penalised_score.cwiseAbs().maxCoeff(), scale};
}

}  // namespace

double aic(double penalised_loglik, double df) { return -2.0 * penalised_loglik + 2.0 * df; }

Eigen::VectorXd df_contributions(const Eigen::MatrixXd& M, const Eigen::MatrixXd& J) {
  const Eigen::Index q = M.rows();
  if (M.cols() != q || J.rows() != q || J.cols() != q) throw DomainError("df: dimension mismatch");
  if (J.isZero(0.0)) return Eigen::VectorXd::Ones(q);
  // Work in the eigenbasis of J, where a large penalty sits on the diagonal,
  // and rescale to unit diagonal before solving. Eigenvalues of J at
  // round-off level belong to its exact null space.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> pen(J);
  if (pen.info() != Eigen::Success) throw NumericalError("df: penalty eigendecomposition failed");
  const Eigen::MatrixXd& U = pen.eigenvectors();
  Eigen::VectorXd lam = pen.eigenvalues();
  const double lam_top = lam.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < q; ++i)
    if (lam[i] <= 1e3 * std::numeric_limits<double>::epsilon() * lam_top) lam[i] = 0.0;
  const Eigen::MatrixXd Mr = U.transpose() * M * U;
  Eigen::VectorXd scale(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    const double d = Mr(i, i) + lam[i];
    scale[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 1.0;
  }
  const Eigen::MatrixXd B = scale.asDiagonal() * Mr * scale.asDiagonal();
  Eigen::MatrixXd A = B;
  A.diagonal() += lam.cwiseProduct(scale.cwiseAbs2());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  const double top = std::max(std::abs(es.eigenvalues().maxCoeff()), 1e-300);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= kSingularRelTol * top)
    throw NumericalError("df: M + J is singular");
  // M (M+J)^-1 = U S^-1 B A^-1 S U^T; its diagonal in the original basis.
  const Eigen::MatrixXd BAinv =
      B * es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  const Eigen::MatrixXd Xr = scale.cwiseInverse().asDiagonal() * BAinv * scale.asDiagonal();
  return (U * Xr * U.transpose()).diagonal();
}

double degrees_of_freedom(const Eigen::MatrixXd& M, const Eigen::MatrixXd& J) {
  if (J.isZero(0.0)) return static_cast<double>(M.rows());
  return df_contributions(M, J).sum();
}

std::vector<double> block_degrees_of_freedom(const ParameterLayout& layout, const Eigen::VectorXd& contributions) {
  std::vector<double> out;
  const auto& m = layout.theta_of_eta();
  for (const auto& b : layout.spline_blocks()) {
    std::set<int> ks;
    for (int i = 0; i < b.K; ++i)
      if (m[b.eta_offset + i] >= 0) ks.insert(m[b.eta_offset + i]);
    double s = 0.0;
    for (int k : ks) s += contributions[k];
    out.push_back(s);
  }
  return out;
}

FitResult fit(const Model& model, const PanelDataset& data, const PenaltySpec& penalty,
              const Eigen::VectorXd& theta0, const FitOptions& options) {
  const int q = model.num_params();
  if (theta0.size() != q)
    throw DomainError("starting vector has length " + std::to_string(theta0.size()) + ", model has " +
                      std::to_string(q) + " parameters");
  if (!theta0.allFinite()) throw DomainError("starting vector contains non-finite values");
  if (options.max_iter < 1) throw DomainError("max_iter must be at least 1");
  if (!(options.tol > 0.0)) throw DomainError("tolerance must be positive");

  FitResult res;
  res.names = model.layout().theta_names();
  res.lambda = penalty.lambdas;
  res.policy = options.policy;
  res.penalty = model.penalty(penalty);
  const Eigen::MatrixXd& J = res.penalty;
  const EvalOptions eval{options.threads, true};

  Eigen::VectorXd theta = theta0;
  LikelihoodReport cur;
  try {
    cur = dataset_report(model, theta, data, penalty, options.policy, eval);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("log-likelihood is not finite at the starting values: ") + e.what(),
                         e.details());
  }
  if (!std::isfinite(cur.penalised_loglik))
    throw NumericalError("penalised log-likelihood is not finite at the starting values");
  res.trace.push_back(make_entry(0, theta, cur, 1.0));

  int it = 0;
  for (it = 1; it <= options.max_iter; ++it) {
    check_information(cur.penalised_information, cur.information, res.names, res.trace);
    const Eigen::VectorXd delta = cur.penalised_information.ldlt().solve(cur.penalised_score);
    if (!delta.allFinite()) {
      json details{{"trace", trace_json(res.trace)}};
      throw NumericalError("scoring step is not finite", details.dump());
    }

    double scale = 1.0;
    bool accepted = false;
    LikelihoodReport trial;
    Eigen::VectorXd theta_new;
    for (int h = 0; h <= options.max_halvings; ++h, scale *= 0.5) {
      theta_new = theta + scale * delta;
      try {
        trial = dataset_report(model, theta_new, data, penalty, options.policy, eval);
      } catch (const NumericalError&) {
        continue;
      } catch (const DomainError&) {
        continue;
      }
      if (std::isfinite(trial.penalised_loglik) && trial.penalised_loglik >= cur.penalised_loglik) {
        accepted = true;
        break;
      }
    }

    if (!accepted && delta.dot(cur.penalised_score) < kRoundoffGain * (1.0 + std::abs(cur.penalised_loglik))) {
      // The predicted gain is below what l_p can resolve: take the full step
      // if l_p is unchanged up to round-off.
      theta_new = theta + delta;
      scale = 1.0;
      try {
        trial = dataset_report(model, theta_new, data, penalty, options.policy, eval);
        accepted = std::isfinite(trial.penalised_loglik) &&
                   trial.penalised_loglik >= cur.penalised_loglik - roundoff_slack(cur.penalised_loglik);
      } catch (const NumericalError&) {
      } catch (const DomainError&) {
      }
    }

    if (!accepted) {
      // No step increases l_p: theta is a numerical maximum if the proposed
      // step is below tolerance or its predicted gain is lost in round-off.
      const double gain = delta.dot(cur.penalised_score);
      res.converged = cur.penalised_score.cwiseAbs().maxCoeff() <= options.score_tol &&
                      (delta.cwiseAbs().sum() < options.tol ||
                       gain < kRoundoffGain * (1.0 + std::abs(cur.penalised_loglik)));
      if (!res.converged)
        record_warning("step_halving_exhausted", "step-halving failed to increase the penalised log-likelihood after " +
                                                     std::to_string(options.max_halvings) + " halvings");
      break;
    }
    const double change = (theta_new - theta).cwiseAbs().sum();
    theta = theta_new;
    cur = std::move(trial);
    res.trace.push_back(make_entry(it, theta, cur, scale));
    if (change < options.tol && cur.penalised_score.cwiseAbs().maxCoeff() <= options.score_tol) {
      res.converged = true;
      break;
    }
  }
  res.iterations = std::min(it, options.max_iter);
  if (!res.converged && it > options.max_iter)
    record_warning("not_converged", "scoring reached the iteration cap of " + std::to_string(options.max_iter));

  check_information(cur.penalised_information, cur.information, res.names, res.trace);
  res.theta_hat = theta;
  res.loglik = cur.loglik;
  res.penalised_loglik = cur.penalised_loglik;
  res.information = cur.information;
  Eigen::MatrixXd cov = cur.penalised_information.ldlt().solve(Eigen::MatrixXd::Identity(q, q));
  res.covariance = 0.5 * (cov + cov.transpose());
  const Eigen::VectorXd contrib = df_contributions(cur.information, J);
  res.df = J.isZero(0.0) ? static_cast<double>(q) : contrib.sum();
  res.block_df = block_degrees_of_freedom(model.layout(), contrib);
  res.aic = aic(res.penalised_loglik, res.df);
  return res;
}

SearchResult lambda_search(const Model& model, const PanelDataset& data,
                           const std::vector<std::vector<double>>& log10_grid, const Eigen::VectorXd& theta0,
                           const FitOptions& options) {
  const std::size_t nb = model.layout().spline_blocks().size();
  if (log10_grid.size() != nb)
    throw DomainError("lambda grid has " + std::to_string(log10_grid.size()) + " blocks, model has " +
                      std::to_string(nb) + " spline blocks");
  for (const auto& g : log10_grid) {
    if (g.empty()) throw DomainError("lambda grid for a spline block is empty");
    for (double v : g)
      if (!std::isfinite(v)) throw DomainError("lambda grid values must be finite log10 values");
  }

  std::size_t total = 1;
  for (const auto& g : log10_grid) total *= g.size();

  SearchResult out;
  out.surface.reserve(total);
  std::vector<std::size_t> pos(nb, 0);
  Eigen::VectorXd warm = theta0;
  std::vector<std::string> errors;
  for (std::size_t n = 0; n < total; ++n) {
    SearchPoint pt;
    for (std::size_t b = 0; b < nb; ++b) pt.log10_lambda.push_back(log10_grid[b][pos[b]]);
    try {
      FitResult f = fit(model, data, PenaltySpec::from_log10(pt.log10_lambda), warm, options);
      pt.ok = true;
      pt.converged = f.converged;
      pt.loglik = f.loglik;
      pt.penalised_loglik = f.penalised_loglik;
      pt.df = f.df;
      pt.aic = f.aic;
      pt.iterations = f.iterations;
      warm = f.theta_hat;
      if (out.best < 0 || f.aic < out.surface[out.best].aic) {
        out.best = static_cast<int>(n);
        out.best_fit = std::move(f);
      }
    } catch (const NumericalError& e) {
      pt.error = e.what();
      errors.push_back(pt.error);
    }
    out.surface.push_back(std::move(pt));
    for (std::size_t b = nb; b-- > 0;) {
      if (++pos[b] < log10_grid[b].size()) break;
      pos[b] = 0;
    }
  }
  if (out.best < 0) {
    json details{{"errors", errors}};
    throw NumericalError("every lambda grid point failed (" + std::to_string(total) + " points; first: " +
                             (errors.empty() ? std::string("none") : errors.front()) + ")",
                         details.dump());
  }

  const auto& best_lambda = out.surface[out.best].log10_lambda;
  out.plateau.assign(nb, false);
  out.recommended_log10_lambda.assign(nb, std::nullopt);
  for (std::size_t b = 0; b < nb; ++b) {
    std::vector<const SearchPoint*> slice;
    for (const auto& p : out.surface) {
      bool same = p.ok;
      for (std::size_t c = 0; c < nb && same; ++c)
        if (c != b && p.log10_lambda[c] != best_lambda[c]) same = false;
      if (same) slice.push_back(&p);
    }
    if (slice.size() < 2) continue;
    std::sort(slice.begin(), slice.end(),
              [b](const SearchPoint* x, const SearchPoint* y) { return x->log10_lambda[b] < y->log10_lambda[b]; });
    double slice_min = slice.front()->aic;
    for (const auto* p : slice) slice_min = std::min(slice_min, p->aic);
    const SearchPoint& top = *slice.back();
    const SearchPoint& next = *slice[slice.size() - 2];
    if (std::abs(top.aic - next.aic) < kPlateauAicChange && top.aic <= slice_min + kPlateauAicMargin) {
      out.plateau[b] = true;
      out.recommended_log10_lambda[b] = kPinnedLog10Lambda;
    }
  }
  return out;
}

}  // namespace flexmsm

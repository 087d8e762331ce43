#include "core/predict.hpp"

#include "core/errors.hpp"
#include "core/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace flexmsm {

namespace {

constexpr double kPsdTolerance = 1e-10;
constexpr double kZ975 = 1.959963984540054;

// Linear interpolation between order statistics.
double quantile_sorted(const std::vector<double>& v, double p) {
  if (v.size() == 1) return v.front();
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return v[lo] + w * (v[hi] - v[lo]);
}

double step_lookup(const std::vector<double>& times, const std::vector<double>& values, double t) {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

PredictionResult summarise(double t1, double t2, const Eigen::MatrixXd& point,
                           const std::vector<const Eigen::MatrixXd*>& draws, const PredictOptions& o) {
  const Eigen::Index D = point.rows();
  const std::size_t B = draws.size();
  PredictionResult r;
  r.t1 = t1;
  r.t2 = t2;
  r.point = point;
  r.B = static_cast<int>(B);
  r.seed = o.seed;
  r.mc_mean.resize(D, D);
  r.mc_se.resize(D, D);
  r.lower.resize(D, D);
  r.upper.resize(D, D);
  std::vector<double> v(B);
  for (Eigen::Index i = 0; i < D; ++i) {
    for (Eigen::Index j = 0; j < D; ++j) {
      for (std::size_t b = 0; b < B; ++b) v[b] = (*draws[b])(i, j);
      // Shifted sums: identical draws give a mean equal to the draw exactly.
      const double shift = v.front();
      double s = 0.0;
      double ss = 0.0;
      for (double x : v) {
        s += x - shift;
        ss += (x - shift) * (x - shift);
      }
      const double n = static_cast<double>(B);
      r.mc_mean(i, j) = shift + s / n;
      r.mc_se(i, j) = B > 1 ? std::sqrt(std::max(0.0, (ss - s * s / n) / (n - 1.0))) : 0.0;
      std::sort(v.begin(), v.end());
      r.lower(i, j) = std::clamp(quantile_sorted(v, o.lower_quantile), 0.0, 1.0);
      r.upper(i, j) = std::clamp(quantile_sorted(v, o.upper_quantile), 0.0, 1.0);
    }
  }
  return r;
}

void check_options(const PredictOptions& o) {
  if (o.B < 1) throw DomainError("number of draws B must be at least 1");
  if (!(o.h > 0.0) || !std::isfinite(o.h)) throw DomainError("grid step h must be positive");
  if (!(o.lower_quantile >= 0.0 && o.lower_quantile < o.upper_quantile && o.upper_quantile <= 1.0))
    throw DomainError("band quantiles must satisfy 0 <= lower < upper <= 1");
}

}  // namespace

MvnSampler::MvnSampler(Eigen::VectorXd mean, const Eigen::MatrixXd& cov, bool clip_negative)
    : mean_(std::move(mean)) {
  const Eigen::Index q = mean_.size();
  if (cov.rows() != q || cov.cols() != q) throw DomainError("covariance dimension does not match the mean");
  if (!cov.allFinite()) throw DomainError("covariance contains non-finite values");
  const Eigen::MatrixXd S = 0.5 * (cov + cov.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() == Eigen::Success) {
    L_ = llt.matrixL();
    return;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.info() != Eigen::Success) throw NumericalError("eigen decomposition of the covariance failed");
  Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -kPsdTolerance * scale && !clip_negative)
    throw NumericalError("covariance matrix is not positive semi-definite (smallest eigenvalue " +
                         std::to_string(ev.minCoeff()) + "); enable eigenvalue clipping to sample anyway");
  ev = ev.cwiseMax(0.0);
  L_ = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

Eigen::VectorXd MvnSampler::draw(std::uint64_t seed, std::uint64_t index) const {
  std::mt19937_64 rng(derive_seed(seed, index));
  std::normal_distribution<double> n01;
  Eigen::VectorXd z(mean_.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = n01(rng);
  return mean_ + L_ * z;
}

std::vector<Eigen::MatrixXd> transition_path(const Model& model, const Eigen::VectorXd& theta, double t1, double t2,
                                             const Eigen::VectorXd& x, double h, std::vector<double>* times) {
  if (!(t2 >= t1)) throw DomainError("prediction requires t2 >= t1");
  if (x.size() != model.num_covariates())
    throw DomainError("expected " + std::to_string(model.num_covariates()) + " covariate values, got " +
                      std::to_string(x.size()));
  std::vector<Eigen::MatrixXd> out;
  if (times) times->clear();
  if (t2 == t1) return out;
  const Eigen::VectorXd eta = model.layout().expand(theta);
  const auto grid = anchored_grid(t1, t2, h).breakpoints;
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(model.num_states(), model.num_states());
  const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    const auto bundle = build_generator_eta(model, eta, grid[j], xs, false);
    P = (P * transition_matrix(bundle, grid[j + 1] - grid[j])).eval();
    out.push_back(P);
    if (times) times->push_back(grid[j + 1]);
  }
  return out;
}

std::vector<PredictionResult> predict_path(const Model& model, const Eigen::VectorXd& theta_hat,
                                           const Eigen::MatrixXd& cov, double t1, double t2,
                                           const Eigen::VectorXd& x, const PredictOptions& options) {
  check_options(options);
  if (theta_hat.size() != model.num_params()) throw DomainError("parameter vector length does not match the model");
  std::vector<double> times;
  const auto point = transition_path(model, theta_hat, t1, t2, x, options.h, &times);
  const MvnSampler sampler(theta_hat, cov, options.clip_eigenvalues);

  std::vector<std::vector<Eigen::MatrixXd>> draws(static_cast<std::size_t>(options.B));
  parallel_for(draws.size(), options.threads, [&](std::size_t b) {
    draws[b] = transition_path(model, sampler.draw(options.seed, b), t1, t2, x, options.h);
  });

  std::vector<PredictionResult> out;
  std::vector<const Eigen::MatrixXd*> slice(draws.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    for (std::size_t b = 0; b < draws.size(); ++b) slice[b] = &draws[b][k];
    out.push_back(summarise(t1, times[k], point[k], slice, options));
  }
  return out;
}

PredictionResult predict_matrix(const Model& model, const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& cov,
                                double t1, double t2, const Eigen::VectorXd& x, const PredictOptions& options) {
  check_options(options);
  if (!(t2 >= t1)) throw DomainError("prediction requires t2 >= t1");
  if (t2 == t1) {
    const Eigen::Index D = model.num_states();
    PredictionResult r;
    r.t1 = t1;
    r.t2 = t2;
    r.point = r.mc_mean = r.lower = r.upper = Eigen::MatrixXd::Identity(D, D);
    r.mc_se = Eigen::MatrixXd::Zero(D, D);
    r.B = options.B;
    r.seed = options.seed;
    return r;
  }
  return predict_path(model, theta_hat, cov, t1, t2, x, options).back();
}

double KaplanMeier::survival_at(double t) const { return step_lookup(times, survival, t); }
double KaplanMeier::lower_at(double t) const { return step_lookup(times, lower, t); }
double KaplanMeier::upper_at(double t) const { return step_lookup(times, upper, t); }

KaplanMeier kaplan_meier(const std::vector<double>& times, const std::vector<bool>& events) {
  if (times.empty()) throw DomainError("Kaplan-Meier needs at least one observation");
  if (times.size() != events.size()) throw DomainError("times and events differ in length");
  std::map<double, std::pair<int, int>> table;  // time -> (events, removed)
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] >= 0.0) || !std::isfinite(times[i])) throw DomainError("Kaplan-Meier times must be finite and >= 0");
    auto& cell = table[times[i]];
    cell.first += events[i] ? 1 : 0;
    cell.second += 1;
  }
  KaplanMeier km;
  int n = static_cast<int>(times.size());
  double S = 1.0;
  double greenwood = 0.0;
  for (const auto& [t, cell] : table) {
    const int d = cell.first;
    if (d > 0) {
      S *= 1.0 - static_cast<double>(d) / n;
      if (n > d) greenwood += static_cast<double>(d) / (static_cast<double>(n) * (n - d));
      const double half = kZ975 * S * std::sqrt(greenwood);
      km.times.push_back(t);
      km.survival.push_back(S);
      km.lower.push_back(std::clamp(S - half, 0.0, 1.0));
      km.upper.push_back(std::clamp(S + half, 0.0, 1.0));
      km.at_risk.push_back(n);
      km.events.push_back(d);
    }
    n -= cell.second;
  }
  return km;
}

SurvivalCurves survival_curves(const Model& model, const Eigen::VectorXd& theta, const PanelDataset& data,
                               int baseline_state, double horizon, double h, int threads) {
  if (baseline_state < 0 || baseline_state >= model.num_states() || model.is_absorbing(baseline_state))
    throw DomainError("baseline state must be a living state");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw DomainError("survival horizon must be positive");
  std::vector<const Subject*> group;
  for (const auto& s : data.subjects)
    if (s.states.front() == baseline_state) group.push_back(&s);
  if (group.empty())
    throw DataError("no subjects are first observed in state " + std::to_string(baseline_state + 1));

  SurvivalCurves out;
  out.baseline_state = baseline_state;
  out.times = anchored_grid(0.0, horizon, h).breakpoints;
  const auto nt = static_cast<Eigen::Index>(out.times.size());
  out.subject_survival.resize(static_cast<Eigen::Index>(group.size()), nt);
  std::vector<int> dead;
  for (int s = 0; s < model.num_states(); ++s)
    if (model.is_absorbing(s)) dead.push_back(s);

  parallel_for(group.size(), threads, [&](std::size_t i) {
    const Subject& s = *group[i];
    const double t0 = s.times.front();
    const Eigen::VectorXd x = s.covariate_row(0);
    const auto path = transition_path(model, theta, t0, t0 + horizon, x, h);
    const auto row = static_cast<Eigen::Index>(i);
    out.subject_survival(row, 0) = 1.0;
    for (Eigen::Index k = 1; k < nt; ++k) {
      const auto& P = path[std::min<std::size_t>(static_cast<std::size_t>(k - 1), path.size() - 1)];
      double pd = 0.0;
      for (int d : dead) pd += P(baseline_state, d);
      out.subject_survival(row, k) = std::clamp(1.0 - pd, 0.0, 1.0);
    }
  });

  out.mean.resize(static_cast<std::size_t>(nt));
  for (Eigen::Index k = 0; k < nt; ++k) out.mean[static_cast<std::size_t>(k)] = out.subject_survival.col(k).mean();

  std::vector<double> follow;
  std::vector<bool> event;
  for (const auto* s : group) {
    out.subject_ids.push_back(s->id);
    follow.push_back(s->times.back() - s->times.front());
    event.push_back(s->exact_death);
  }
  out.km = kaplan_meier(follow, event);
  return out;
}

}  // namespace flexmsm

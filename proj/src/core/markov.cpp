#include "core/markov.hpp"

#include "core/diagnostics.hpp"
#include "core/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <complex>
#include <sstream>

namespace flexmsm {

namespace {

constexpr double kImagTolerance = 1e-10;
constexpr double kImagDerivTolerance = 1e-8;
constexpr double kNegativeClamp = 1e-12;
constexpr double kComplexStep = 1e-20;

using cplx = std::complex<double>;

std::string matrix_json(const Eigen::MatrixXd& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(row);
  }
  return nlohmann::json{{"Q", rows}}.dump();
}

bool row_is_zero(const Eigen::MatrixXd& Q, Eigen::Index i) {
  return (Q.row(i).array() == 0.0).all();
}

template <class Mat>
Mat expm_taylor(const Mat& A) {
  const Eigen::Index n = A.rows();
  const double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Mat X = A / std::ldexp(1.0, squarings);
  Mat term = Mat::Identity(n, n);
  Mat sum = Mat::Identity(n, n);
  for (int k = 1; k <= 60; ++k) {
    term = (term * X) / static_cast<double>(k);
    sum += term;
    if (term.cwiseAbs().maxCoeff() <= 1e-18 * sum.cwiseAbs().maxCoeff()) break;
  }
  for (int s = 0; s < squarings; ++s) sum = (sum * sum).eval();
  return sum;
}

// E(l, m) = (exp(b_l t) - exp(b_m t)) / (b_l - b_m), with the limit
// t exp(b t) for (near-)equal eigenvalues.
Eigen::MatrixXcd divided_differences(const Eigen::VectorXcd& b, double t) {
  const Eigen::Index D = b.size();
  Eigen::VectorXcd eb(D);
  for (Eigen::Index l = 0; l < D; ++l) eb[l] = std::exp(b[l] * t);
  Eigen::MatrixXcd E(D, D);
  for (Eigen::Index l = 0; l < D; ++l) {
    for (Eigen::Index m = 0; m < D; ++m) {
      const cplx gap = b[l] - b[m];
      if (l == m) {
        E(l, m) = t * eb[l];
      } else if (std::abs(gap) < kEigenTieTolerance * std::max(1.0, std::abs(b[l]))) {
        E(l, m) = t * std::exp(0.5 * (b[l] + b[m]) * t);
      } else {
        E(l, m) = (eb[l] - eb[m]) / gap;
      }
    }
  }
  return E;
}

// Clamp round-off negatives and restore exact identity rows for absorbing
// states. Returns false on a violation larger than the clamp tolerance.
bool finalize_stochastic(Eigen::MatrixXd& P, const Eigen::MatrixXd& Q) {
  const Eigen::Index D = P.rows();
  for (Eigen::Index i = 0; i < D; ++i) {
    if (row_is_zero(Q, i)) {
      P.row(i).setZero();
      P(i, i) = 1.0;
      continue;
    }
    bool clamped = false;
    for (Eigen::Index j = 0; j < D; ++j) {
      if (!std::isfinite(P(i, j))) return false;
      if (P(i, j) < 0.0) {
        if (P(i, j) < -kNegativeClamp) return false;
        P(i, j) = 0.0;
        clamped = true;
      }
    }
    if (clamped) P.row(i) /= P.row(i).sum();
  }
  return true;
}

Eigen::MatrixXd series_transition(const GeneratorBundle& b, double dt) {
  Eigen::MatrixXd P = expm_series(Eigen::MatrixXd(b.Q * dt));
  if (!finalize_stochastic(P, b.Q))
    throw NumericalError("transition matrix is not stochastic (series route)", matrix_json(b.Q));
  return P;
}

std::vector<Eigen::MatrixXd> complex_step_edges(const GeneratorBundle& b, double dt) {
  const Eigen::Index D = b.Q.rows();
  std::vector<Eigen::MatrixXd> out;
  out.reserve(b.edges.size());
  const Eigen::MatrixXcd base = b.Q.cast<cplx>() * dt;
  for (const auto& [r, s] : b.edges) {
    Eigen::MatrixXcd Qc = base;
    Qc(r, s) += cplx(0.0, kComplexStep * dt);
    Qc(r, r) -= cplx(0.0, kComplexStep * dt);
    Eigen::MatrixXd W = expm_series(Qc).imag() / kComplexStep;
    for (Eigen::Index i = 0; i < D; ++i)
      if (row_is_zero(b.Q, i)) W.row(i).setZero();
    out.push_back(std::move(W));
  }
  return out;
}

void warn_fallback(const char* why) {
  record_warning("series_fallback", std::string("eigendecomposition route abandoned: ") + why);
}

}  // namespace

Eigen::MatrixXd GeneratorBundle::dQ(int k) const {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(Q.rows(), Q.cols());
  for (const auto& e : dQ_entries) {
    if (e.theta != k) continue;
    const auto [r, s] = edges[e.edge];
    M(r, s) += e.value;
    M(r, r) -= e.value;
  }
  return M;
}

Eigen::MatrixXd GeneratorBundle::edge_direction(int edge) const {
  Eigen::MatrixXd U = Eigen::MatrixXd::Zero(Q.rows(), Q.cols());
  const auto [r, s] = edges[edge];
  U(r, s) = 1.0;
  U(r, r) = -1.0;
  return U;
}

Eigen::MatrixXd expm_series(const Eigen::MatrixXd& A) { return expm_taylor(A); }
Eigen::MatrixXcd expm_series(const Eigen::MatrixXcd& A) { return expm_taylor(A); }

GeneratorBundle make_bundle(Eigen::MatrixXd Q, std::vector<std::pair<int, int>> edges,
                            std::vector<GeneratorDerivEntry> entries, int num_params) {
  if (Q.rows() != Q.cols() || Q.rows() < 1) throw DomainError("generator must be square");
  if (!Q.allFinite()) throw DomainError("generator has non-finite entries");
  GeneratorBundle b;
  b.Q = std::move(Q);
  b.edges = std::move(edges);
  b.dQ_entries = std::move(entries);
  b.num_params = num_params;

  Eigen::EigenSolver<Eigen::MatrixXd> es(b.Q, true);
  if (es.info() != Eigen::Success) {
    b.fallback = true;
    warn_fallback("eigensolver did not converge");
    return b;
  }
  b.eigenvalues = es.eigenvalues();
  b.A = es.eigenvectors();
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(b.A);
  const double rcond = lu.rcond();
  b.condition = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
  if (!std::isfinite(b.condition) || b.condition > kFallbackCondition) {
    b.fallback = true;
    warn_fallback("near-defective eigenvector matrix");
    return b;
  }
  b.A_inv = lu.inverse();
  return b;
}

GeneratorBundle build_generator_eta(const Model& model, const Eigen::VectorXd& eta, double t,
                                    std::span<const double> x, bool with_derivatives) {
  const int D = model.num_states();
  const auto& terms = model.terms();
  const auto& layout = model.layout();
  const auto& theta_of_eta = layout.theta_of_eta();
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(D, D);
  std::vector<std::pair<int, int>> edges;
  std::vector<GeneratorDerivEntry> entries;
  edges.reserve(terms.size());
  double grad[512];
  for (std::size_t e = 0; e < terms.size(); ++e) {
    const auto& term = terms[e];
    const auto coefs = model.transition_coefs(eta, static_cast<int>(e));
    double q;
    if (with_derivatives) {
      if (coefs.size() > 512) throw DomainError("too many coefficients for one transition");
      q = hazard_gradient(term, coefs, t, x, std::span<double>(grad, coefs.size()));
    } else {
      q = hazard(term, coefs, t, x);
    }
    if (!std::isfinite(q)) {
      std::ostringstream msg;
      msg << "non-finite hazard for transition " << term.from + 1 << "-" << term.to + 1 << " at t=" << t;
      throw DomainError(msg.str());
    }
    Q(term.from, term.to) += q;
    Q(term.from, term.from) -= q;
    edges.emplace_back(term.from, term.to);
    if (!with_derivatives) continue;
    const int offset = layout.transition_offset(static_cast<int>(e));
    for (std::size_t i = 0; i < coefs.size(); ++i) {
      const int k = theta_of_eta[offset + i];
      if (k >= 0 && grad[i] != 0.0) entries.push_back({k, static_cast<int>(e), grad[i]});
    }
  }
  return make_bundle(std::move(Q), std::move(edges), std::move(entries), layout.num_free());
}

GeneratorBundle build_generator(const Model& model, const Eigen::VectorXd& theta, double t,
                                std::span<const double> x, bool with_derivatives) {
  return build_generator_eta(model, model.layout().expand(theta), t, x, with_derivatives);
}

Eigen::MatrixXd transition_matrix(const GeneratorBundle& b, double dt) {
  if (!(dt >= 0.0) || !std::isfinite(dt)) throw DomainError("elapsed time must be finite and >= 0");
  const Eigen::Index D = b.Q.rows();
  if (dt == 0.0) return Eigen::MatrixXd::Identity(D, D);
  if (b.fallback) return series_transition(b, dt);

  Eigen::VectorXcd eb(D);
  for (Eigen::Index l = 0; l < D; ++l) eb[l] = std::exp(b.eigenvalues[l] * dt);
  const Eigen::MatrixXcd Pc = b.A * eb.asDiagonal() * b.A_inv;
  if (Pc.imag().cwiseAbs().maxCoeff() > kImagTolerance) {
    warn_fallback("imaginary residue above tolerance");
    return series_transition(b, dt);
  }
  Eigen::MatrixXd P = Pc.real();
  if (!finalize_stochastic(P, b.Q)) {
    warn_fallback("negative transition probability beyond round-off");
    return series_transition(b, dt);
  }
  return P;
}

std::vector<Eigen::MatrixXd> edge_derivs(const GeneratorBundle& b, double dt) {
  if (!(dt >= 0.0) || !std::isfinite(dt)) throw DomainError("elapsed time must be finite and >= 0");
  const Eigen::Index D = b.Q.rows();
  if (dt == 0.0) return std::vector<Eigen::MatrixXd>(b.edges.size(), Eigen::MatrixXd::Zero(D, D));
  if (b.derivative_fallback()) return complex_step_edges(b, dt);

  const Eigen::MatrixXcd E = divided_differences(b.eigenvalues, dt);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(b.edges.size());
  for (const auto& [r, s] : b.edges) {
    const Eigen::VectorXcd u = b.A_inv.col(r);
    const Eigen::RowVectorXcd v = b.A.row(s) - b.A.row(r);
    // G = A^-1 U A = u v for the rank-one edge direction U.
    const Eigen::MatrixXcd V = (u * v).cwiseProduct(E);
    const Eigen::MatrixXcd W = b.A * V * b.A_inv;
    if (W.imag().cwiseAbs().maxCoeff() > kImagDerivTolerance) {
      warn_fallback("imaginary residue in derivative above tolerance");
      return complex_step_edges(b, dt);
    }
    Eigen::MatrixXd Wr = W.real();
    for (Eigen::Index i = 0; i < D; ++i)
      if (row_is_zero(b.Q, i)) Wr.row(i).setZero();
    out.push_back(std::move(Wr));
  }
  return out;
}

std::vector<Eigen::MatrixXd> transition_matrix_derivs(const GeneratorBundle& b, double dt) {
  const Eigen::Index D = b.Q.rows();
  std::vector<Eigen::MatrixXd> dP(b.num_params, Eigen::MatrixXd::Zero(D, D));
  if (b.dQ_entries.empty() || dt == 0.0) return dP;
  const auto W = edge_derivs(b, dt);
  for (const auto& e : b.dQ_entries) dP[e.theta] += e.value * W[e.edge];
  return dP;
}

RowStep propagate_row(const GeneratorBundle& b, double dt, const Eigen::RowVectorXd& r,
                      bool with_derivatives) {
  const Eigen::Index D = b.Q.rows();
  const Eigen::Index n_edges = static_cast<Eigen::Index>(b.edges.size());
  RowStep out;
  if (dt == 0.0) {
    out.rP = r;
    out.rW = Eigen::MatrixXd::Zero(n_edges, D);
    return out;
  }

  // Mass in absorbing states passes through unchanged.
  Eigen::RowVectorXd live = r;
  Eigen::RowVectorXd stuck = Eigen::RowVectorXd::Zero(D);
  for (Eigen::Index i = 0; i < D; ++i) {
    if (row_is_zero(b.Q, i)) {
      stuck[i] = r[i];
      live[i] = 0.0;
    }
  }

  auto full_route = [&]() {
    const Eigen::MatrixXd P = transition_matrix(b, dt);
    out.rP = r * P;
    out.rW.resize(n_edges, D);
    if (with_derivatives) {
      const auto W = edge_derivs(b, dt);
      for (Eigen::Index e = 0; e < n_edges; ++e) out.rW.row(e) = live * W[e];
    }
    return out;
  };
  if (b.fallback || (with_derivatives && b.derivative_fallback())) return full_route();

  Eigen::VectorXcd eb(D);
  for (Eigen::Index l = 0; l < D; ++l) eb[l] = std::exp(b.eigenvalues[l] * dt);
  const Eigen::RowVectorXcd a = live.cast<cplx>() * b.A;
  const Eigen::RowVectorXcd pc = a.cwiseProduct(eb.transpose()) * b.A_inv;
  if (pc.imag().cwiseAbs().maxCoeff() > kImagTolerance) {
    warn_fallback("imaginary residue above tolerance");
    return full_route();
  }
  out.rP = pc.real() + stuck;
  for (Eigen::Index j = 0; j < D; ++j) {
    if (out.rP[j] < 0.0) {
      if (out.rP[j] < -kNegativeClamp) {
        warn_fallback("negative transition probability beyond round-off");
        return full_route();
      }
      out.rP[j] = 0.0;
    }
  }
  out.rW = Eigen::MatrixXd::Zero(n_edges, D);
  if (!with_derivatives) return out;

  const Eigen::MatrixXcd E = divided_differences(b.eigenvalues, dt);
  for (Eigen::Index e = 0; e < n_edges; ++e) {
    const auto [rr, ss] = b.edges[e];
    const Eigen::RowVectorXcd au = a.cwiseProduct(b.A_inv.col(rr).transpose());
    if (au.cwiseAbs().maxCoeff() == 0.0) continue;
    const Eigen::RowVectorXcd v = b.A.row(ss) - b.A.row(rr);
    const Eigen::RowVectorXcd w = (au * E).cwiseProduct(v);
    const Eigen::RowVectorXcd rw = w * b.A_inv;
    if (rw.imag().cwiseAbs().maxCoeff() > kImagDerivTolerance) {
      warn_fallback("imaginary residue in derivative above tolerance");
      return full_route();
    }
    out.rW.row(e) = rw.real();
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Cell> interval_cells(double t1, double t2, const GridPolicy& policy) {
  if (!std::isfinite(t1) || !std::isfinite(t2) || t2 < t1)
    throw DomainError("interval must satisfy t1 <= t2");
  std::vector<Cell> cells;
  if (t2 == t1) return cells;
  if (policy.kind == GridPolicy::Kind::DataDriven) {
    cells.push_back({t1, t2, t1});
    return cells;
  }
  const double h = policy.h;
  if (!(h > 0.0) || !std::isfinite(h)) throw DomainError("grid step h must be positive");
  const double eps = 1e-9 * h;
  auto m = static_cast<long long>(std::floor((t1 - policy.origin) / h));
  double cur = t1;
  while (cur < t2 - eps) {
    const double u = policy.origin + static_cast<double>(m) * h;
    const double u_next = policy.origin + static_cast<double>(m + 1) * h;
    if (u_next <= cur + eps) {
      ++m;
      continue;
    }
    double end = std::min(u_next, t2);
    if (t2 - end < eps) end = t2;
    cells.push_back({cur, end, u});
    cur = end;
    ++m;
  }
  if (cells.empty()) cells.push_back({t1, t2, t1});
  cells.back().end = t2;
  return cells;
}

IntervalGrid anchored_grid(double t1, double t2, double h) {
  if (!(h > 0.0)) throw DomainError("grid step h must be positive");
  if (!(t2 >= t1)) throw DomainError("grid requires t2 >= t1");
  IntervalGrid g;
  const double eps = 1e-9 * h;
  for (long long m = 0;; ++m) {
    const double u = t1 + static_cast<double>(m) * h;
    if (u >= t2 - eps) break;
    g.breakpoints.push_back(u);
  }
  g.breakpoints.push_back(t2);
  return g;
}

ChainResult chain_interval(const Model& model, const Eigen::VectorXd& theta, double t1, double t2,
                           const CovariatePath& x_path, const GridPolicy& policy, bool with_derivatives) {
  const int D = model.num_states();
  const int q = model.num_params();
  const Eigen::VectorXd eta = model.layout().expand(theta);
  ChainResult out;
  out.P = Eigen::MatrixXd::Identity(D, D);
  out.last_q_time = t1;
  if (with_derivatives) out.dP.assign(q, Eigen::MatrixXd::Zero(D, D));
  for (const auto& cell : interval_cells(t1, t2, policy)) {
    const Eigen::VectorXd x = x_path(cell.q_time);
    const auto bundle =
        build_generator_eta(model, eta, cell.q_time, std::span<const double>(x.data(), x.size()), with_derivatives);
    const double dt = cell.end - cell.start;
    const Eigen::MatrixXd Pc = transition_matrix(bundle, dt);
    if (with_derivatives) {
      const auto dPc = transition_matrix_derivs(bundle, dt);
      for (int k = 0; k < q; ++k) out.dP[k] = (out.dP[k] * Pc + out.P * dPc[k]).eval();
    }
    out.P = (out.P * Pc).eval();
    out.last_q_time = cell.q_time;
  }
  return out;
}

ChainResult chain_interval(const Model& model, const Eigen::VectorXd& theta, double t1, double t2,
                           const Eigen::VectorXd& x, const GridPolicy& policy, bool with_derivatives) {
  return chain_interval(model, theta, t1, t2, [&x](double) { return x; }, policy, with_derivatives);
}

RowChain chain_row(const Model& model, const Eigen::VectorXd& eta, int from, double t1, double t2,
                   std::span<const double> x, const GridPolicy& policy, bool with_derivatives) {
  const int D = model.num_states();
  const int q = model.num_params();
  RowChain out;
  out.p = Eigen::RowVectorXd::Zero(D);
  out.p[from] = 1.0;
  out.last_q_time = t1;
  if (with_derivatives) out.dp = Eigen::MatrixXd::Zero(q, D);
  bool first = true;
  for (const auto& cell : interval_cells(t1, t2, policy)) {
    const auto bundle = build_generator_eta(model, eta, cell.q_time, x, with_derivatives);
    const double dt = cell.end - cell.start;
    const RowStep step = propagate_row(bundle, dt, out.p, with_derivatives);
    if (with_derivatives) {
      if (!first) out.dp = (out.dp * transition_matrix(bundle, dt)).eval();
      for (const auto& e : bundle.dQ_entries) out.dp.row(e.theta) += e.value * step.rW.row(e.edge);
    }
    out.p = step.rP;
    out.last_q_time = cell.q_time;
    first = false;
  }
  return out;
}

}  // namespace flexmsm

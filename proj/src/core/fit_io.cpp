#include "core/fit_io.hpp"

#include "core/errors.hpp"
#include "core/format.hpp"
#include "core/spec_json.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>

namespace flexmsm {

using nlohmann::json;

namespace {

json matrix_to_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(M.cols()));
    for (Eigen::Index j = 0; j < M.cols(); ++j) r[static_cast<std::size_t>(j)] = M(i, j);
    rows.push_back(r);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index n, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
    throw SpecError(what + " must be a " + std::to_string(n) + "x" + std::to_string(n) + " array");
  Eigen::MatrixXd M(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
      throw SpecError(what + " row " + std::to_string(i + 1) + " has the wrong length");
    for (Eigen::Index k = 0; k < n; ++k) M(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return M;
}

std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

CovariateGenerator::Kind parse_kind(const std::string& s) {
  if (s == "bernoulli") return CovariateGenerator::Kind::Bernoulli;
  if (s == "normal") return CovariateGenerator::Kind::Normal;
  if (s == "uniform") return CovariateGenerator::Kind::Uniform;
  if (s == "constant") return CovariateGenerator::Kind::Constant;
  throw SpecError("design: unknown covariate distribution '" + s + "' (expected bernoulli|normal|uniform|constant)");
}

const char* kind_name(CovariateGenerator::Kind k) {
  switch (k) {
    case CovariateGenerator::Kind::Bernoulli: return "bernoulli";
    case CovariateGenerator::Kind::Normal: return "normal";
    case CovariateGenerator::Kind::Uniform: return "uniform";
    case CovariateGenerator::Kind::Constant: return "constant";
  }
  return "constant";
}

}  // namespace

json grid_policy_to_json(const GridPolicy& p) {
  json j;
  j["kind"] = p.kind == GridPolicy::Kind::DataDriven ? "data" : "imposed";
  j["h"] = p.h;
  j["origin"] = p.origin;
  return j;
}

GridPolicy grid_policy_from_json(const json& j) {
  GridPolicy p;
  const std::string kind = j.value("kind", std::string("data"));
  if (kind == "data") p.kind = GridPolicy::Kind::DataDriven;
  else if (kind == "imposed") p.kind = GridPolicy::Kind::Imposed;
  else throw SpecError("grid policy kind must be 'data' or 'imposed'");
  p.h = j.value("h", 0.5);
  p.origin = j.value("origin", 0.0);
  return p;
}

json fit_to_json(const Model& model, const FitResult& fit) {
  json j;
  j["model"] = spec_to_json(model.bound_spec());
  const Eigen::VectorXd se = fit.standard_errors();
  json params = json::array();
  for (std::size_t k = 0; k < fit.names.size(); ++k)
    params.push_back({{"name", fit.names[k]},
                      {"estimate", fit.theta_hat[static_cast<Eigen::Index>(k)]},
                      {"se", se[static_cast<Eigen::Index>(k)]}});
  j["parameters"] = params;
  j["covariance"] = matrix_to_json(fit.covariance);
  j["loglik"] = fit.loglik;
  j["penalised_loglik"] = fit.penalised_loglik;
  j["minus2_loglik"] = -2.0 * fit.loglik;
  j["minus2_penalised_loglik"] = -2.0 * fit.penalised_loglik;
  j["df"] = fit.df;
  j["block_df"] = fit.block_df;
  j["aic"] = fit.aic;
  j["num_parameters"] = fit.names.size();
  j["lambda"] = fit.lambda;
  std::vector<double> l10;
  for (double l : fit.lambda) l10.push_back(l > 0.0 ? std::log10(l) : -std::numeric_limits<double>::infinity());
  json jl10 = json::array();
  for (double v : l10) jl10.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  j["log10_lambda"] = jl10;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["grid_policy"] = grid_policy_to_json(fit.policy);
  json trace = json::array();
  for (const auto& t : fit.trace)
    trace.push_back({{"iteration", t.iteration},
                     {"penalised_loglik", t.penalised_loglik},
                     {"score_max_abs", t.score_norm},
                     {"step_scale", t.step_scale},
                     {"theta", vec(t.theta)}});
  j["trace"] = trace;
  json splines = json::array();
  const auto& blocks = model.layout().spline_blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& term = model.terms()[blocks[b].transition];
    const auto& basis = *term.basis;
    splines.push_back({{"transition", model.spec().transitions[blocks[b].transition].label()},
                       {"K", basis.size()},
                       {"degree", basis.degree()},
                       {"penalty_order", blocks[b].penalty_order},
                       {"domain", {basis.lower(), basis.upper()}},
                       {"knots", basis.knots()},
                       {"df", b < fit.block_df.size() ? fit.block_df[b] : 0.0}});
  }
  j["splines"] = splines;
  return j;
}

LoadedFit fit_from_json(const json& j) {
  if (!j.is_object() || !j.contains("model") || !j.contains("parameters"))
    throw SpecError("fit file must contain 'model' and 'parameters'");
  LoadedFit out;
  out.spec = spec_from_json(j["model"]);
  FitResult& f = out.fit;
  const auto& params = j["parameters"];
  const auto q = static_cast<Eigen::Index>(params.size());
  f.theta_hat.resize(q);
  for (Eigen::Index k = 0; k < q; ++k) {
    const auto& p = params[static_cast<std::size_t>(k)];
    f.names.push_back(p.at("name").get<std::string>());
    f.theta_hat[k] = p.at("estimate").get<double>();
  }
  f.covariance = matrix_from_json(j.at("covariance"), q, "covariance");
  f.loglik = j.value("loglik", 0.0);
  f.penalised_loglik = j.value("penalised_loglik", 0.0);
  f.df = j.value("df", 0.0);
  f.aic = j.value("aic", 0.0);
  f.iterations = j.value("iterations", 0);
  f.converged = j.value("converged", false);
  if (j.contains("lambda")) f.lambda = j["lambda"].get<std::vector<double>>();
  if (j.contains("block_df")) f.block_df = j["block_df"].get<std::vector<double>>();
  if (j.contains("grid_policy")) f.policy = grid_policy_from_json(j["grid_policy"]);
  return out;
}

LoadedFit load_fit_file(const std::string& path) {
  try {
    return fit_from_json(load_json_file(path));
  } catch (const json::exception& e) {
    throw SpecError("'" + path + "': malformed fit file: " + e.what());
  } catch (const SpecError& e) {
    throw SpecError("'" + path + "': " + e.what());
  }
}

Eigen::VectorXd theta_from_json(const json& jin, const ParameterLayout& layout) {
  const json& j = jin.is_object() && jin.contains("theta") ? jin["theta"] : jin;
  const int q = layout.num_free();
  Eigen::VectorXd theta(q);
  if (j.is_array()) {
    if (static_cast<int>(j.size()) != q)
      throw SpecError("theta array has " + std::to_string(j.size()) + " values, model has " + std::to_string(q));
    for (int k = 0; k < q; ++k) {
      if (!j[k].is_number()) throw SpecError("theta values must be numbers");
      theta[k] = j[k].get<double>();
    }
    return theta;
  }
  if (!j.is_object()) throw SpecError("theta must be an object of name: value pairs or an array");
  std::set<int> seen;
  for (auto it = j.begin(); it != j.end(); ++it) {
    int k = layout.find_theta(it.key());
    if (k < 0) {
      const int c = layout.find_coefficient(it.key());
      if (c >= 0) k = layout.theta_of_eta()[c];
    }
    if (k < 0) throw SpecError("theta: unknown parameter '" + it.key() + "'");
    if (!it.value().is_number()) throw SpecError("theta: value for '" + it.key() + "' is not a number");
    if (!seen.insert(k).second) throw SpecError("theta: parameter '" + layout.theta_names()[k] + "' given twice");
    theta[k] = it.value().get<double>();
  }
  if (static_cast<int>(seen.size()) != q) {
    for (int k = 0; k < q; ++k)
      if (!seen.count(k)) throw SpecError("theta: missing value for parameter '" + layout.theta_names()[k] + "'");
  }
  return theta;
}

json theta_to_json(const ParameterLayout& layout, const Eigen::VectorXd& theta) {
  json t = json::object();
  for (int k = 0; k < layout.num_free(); ++k) t[layout.theta_names()[k]] = theta[k];
  return json{{"theta", t}};
}

StudyDesign design_from_json(const json& j) {
  if (!j.is_object()) throw SpecError("design must be a JSON object");
  StudyDesign d = StudyDesign::defaults();
  try {
    d.n_subjects = j.value("n_subjects", d.n_subjects);
    if (j.contains("baseline_state_probs"))
      d.baseline_state_probs = j["baseline_state_probs"].get<std::vector<double>>();
    if (j.contains("baseline_age")) {
      const auto r = j["baseline_age"].get<std::vector<double>>();
      if (r.size() != 2) throw SpecError("design: baseline_age must be [min, max]");
      d.baseline_min = r[0];
      d.baseline_max = r[1];
    }
    d.time_shift = j.value("time_shift", d.time_shift);
    d.visit_gap = j.value("visit_gap", d.visit_gap);
    d.visit_jitter = j.value("visit_jitter", d.visit_jitter);
    d.follow_up = j.value("follow_up", d.follow_up);
    d.step = j.value("step", d.step);
    d.vital_status_prob = j.value("vital_status_prob", d.vital_status_prob);
    if (j.contains("covariates")) {
      d.covariates.clear();
      for (const auto& c : j["covariates"]) {
        CovariateGenerator g;
        g.name = c.at("name").get<std::string>();
        g.kind = parse_kind(c.value("distribution", std::string("bernoulli")));
        switch (g.kind) {
          case CovariateGenerator::Kind::Bernoulli: g.a = c.at("p").get<double>(); break;
          case CovariateGenerator::Kind::Normal:
            g.a = c.value("mean", 0.0);
            g.b = c.value("sd", 1.0);
            break;
          case CovariateGenerator::Kind::Uniform:
            g.a = c.at("lower").get<double>();
            g.b = c.at("upper").get<double>();
            break;
          case CovariateGenerator::Kind::Constant: g.a = c.at("value").get<double>(); break;
        }
        d.covariates.push_back(g);
      }
    }
  } catch (const json::exception& e) {
    throw SpecError(std::string("design: ") + e.what());
  }
  return d;
}

json design_to_json(const StudyDesign& d) {
  json j;
  j["n_subjects"] = d.n_subjects;
  j["baseline_state_probs"] = d.baseline_state_probs;
  j["baseline_age"] = {d.baseline_min, d.baseline_max};
  j["time_shift"] = d.time_shift;
  j["visit_gap"] = d.visit_gap;
  j["visit_jitter"] = d.visit_jitter;
  j["follow_up"] = d.follow_up;
  j["step"] = d.step;
  j["vital_status_prob"] = d.vital_status_prob;
  json cs = json::array();
  for (const auto& g : d.covariates) {
    json c{{"name", g.name}, {"distribution", kind_name(g.kind)}};
    switch (g.kind) {
      case CovariateGenerator::Kind::Bernoulli: c["p"] = g.a; break;
      case CovariateGenerator::Kind::Normal:
        c["mean"] = g.a;
        c["sd"] = g.b;
        break;
      case CovariateGenerator::Kind::Uniform:
        c["lower"] = g.a;
        c["upper"] = g.b;
        break;
      case CovariateGenerator::Kind::Constant: c["value"] = g.a; break;
    }
    cs.push_back(c);
  }
  j["covariates"] = cs;
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

void write_surface_csv(std::ostream& out, const SearchResult& search, const std::vector<std::string>& block_labels) {
  for (const auto& l : block_labels) out << "log10_lambda_" << l << ',';
  out << "loglik,penalised_loglik,df,aic,iterations,converged,best,error\n";
  for (std::size_t i = 0; i < search.surface.size(); ++i) {
    const auto& p = search.surface[i];
    for (double v : p.log10_lambda) out << format_double(v) << ',';
    if (p.ok)
      out << format_double(p.loglik) << ',' << format_double(p.penalised_loglik) << ',' << format_double(p.df) << ','
          << format_double(p.aic) << ',' << p.iterations << ',' << (p.converged ? 1 : 0);
    else
      out << ",,,,,0";
    out << ',' << (static_cast<int>(i) == search.best ? 1 : 0) << ',';
    std::string err = p.error;
    for (char& c : err)
      if (c == ',' || c == '\n' || c == '"') c = ' ';
    out << err << '\n';
  }
}

void write_prediction_csv(std::ostream& out, const std::vector<PredictionResult>& results) {
  out << "t1,t2,from,to,point,mean,se,lower,upper\n";
  for (const auto& r : results)
    for (Eigen::Index i = 0; i < r.point.rows(); ++i)
      for (Eigen::Index k = 0; k < r.point.cols(); ++k)
        out << format_double(r.t1) << ',' << format_double(r.t2) << ',' << i + 1 << ',' << k + 1 << ','
            << format_double(r.point(i, k)) << ',' << format_double(r.mc_mean(i, k)) << ','
            << format_double(r.mc_se(i, k)) << ',' << format_double(r.lower(i, k)) << ','
            << format_double(r.upper(i, k)) << '\n';
}

void write_survival_csv(std::ostream& out, const SurvivalCurves& c) {
  out << "baseline_state,series,id,time,survival,lower,upper\n";
  const int bs = c.baseline_state + 1;
  for (std::size_t k = 0; k < c.times.size(); ++k)
    out << bs << ",model_mean,," << format_double(c.times[k]) << ',' << format_double(c.mean[k]) << ",,\n";
  out << bs << ",km,,0,1,1,1\n";
  for (std::size_t k = 0; k < c.km.times.size(); ++k)
    out << bs << ",km,," << format_double(c.km.times[k]) << ',' << format_double(c.km.survival[k]) << ','
        << format_double(c.km.lower[k]) << ',' << format_double(c.km.upper[k]) << '\n';
  for (Eigen::Index i = 0; i < c.subject_survival.rows(); ++i)
    for (std::size_t k = 0; k < c.times.size(); ++k)
      out << bs << ",model_subject," << c.subject_ids[static_cast<std::size_t>(i)] << ','
          << format_double(c.times[k]) << ',' << format_double(c.subject_survival(i, static_cast<Eigen::Index>(k)))
          << ",,\n";
}

void write_state_table_csv(std::ostream& out, const StateTable& t, int n_states) {
  out << "from";
  for (int s = 0; s < n_states; ++s) out << ',' << s + 1;
  out << '\n';
  for (std::size_t r = 0; r < t.row_states.size(); ++r) {
    out << t.row_states[r] + 1;
    for (int s = 0; s < n_states; ++s) out << ',' << t.counts(static_cast<Eigen::Index>(r), s);
    out << '\n';
  }
}

}  // namespace flexmsm

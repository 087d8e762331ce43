#include "flexmsm.h"

#include "core/diagnostics.hpp"
#include "core/errors.hpp"
#include "core/fit_io.hpp"
#include "core/format.hpp"
#include "core/likelihood.hpp"
#include "core/model.hpp"
#include "core/panel.hpp"
#include "core/parallel.hpp"
#include "core/predict.hpp"
#include "core/scoring.hpp"
#include "core/simulate.hpp"
#include "core/spec_json.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;
using namespace flexmsm;

struct fmsm_model {
  ModelSpec spec;
  ParameterLayout layout;
  std::vector<std::string> spline_labels;
};

struct fmsm_dataset {
  StateSpace states;
  PanelDataset data;
};

struct fmsm_fit {
  std::unique_ptr<Model> model;
  FitResult result;
};

struct fmsm_search {
  std::unique_ptr<Model> model;
  SearchResult result;
  std::vector<std::string> labels;
};

struct fmsm_prediction {
  int n_states = 0;
  std::vector<PredictionResult> results;
};

struct fmsm_validation {
  std::vector<SurvivalCurves> groups;
  std::vector<double> coverage;
};

namespace {

thread_local std::string g_error_message;
thread_local std::string g_error_details = "{}";
thread_local std::string g_warnings;

fmsm_status fail(fmsm_status code, const char* kind, const std::string& msg, const std::string& details = "{}") {
  g_error_message = msg;
  json d;
  d["kind"] = kind;
  d["message"] = msg;
  json extra = json::parse(details, nullptr, false);
  d["details"] = extra.is_discarded() ? json::object() : extra;
  g_error_details = d.dump();
  return code;
}

template <class Fn>
fmsm_status guarded(Fn&& fn) {
  try {
    fn();
    return FMSM_OK;
  } catch (const NumericalError& e) {
    return fail(FMSM_ERR_NUMERIC, "numerical", e.what(), e.details());
  } catch (const SpecError& e) {
    return fail(FMSM_ERR_DATA, "config", e.what());
  } catch (const DataError& e) {
    return fail(FMSM_ERR_DATA, "data", e.what());
  } catch (const IoError& e) {
    return fail(FMSM_ERR_IO, "io", e.what());
  } catch (const DomainError& e) {
    return fail(FMSM_ERR_USAGE, "argument", e.what());
  } catch (const json::exception& e) {
    return fail(FMSM_ERR_DATA, "config", std::string("JSON error: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(FMSM_ERR_INTERNAL, "internal", "out of memory");
  } catch (const std::exception& e) {
    return fail(FMSM_ERR_INTERNAL, "internal", e.what());
  } catch (...) {
    return fail(FMSM_ERR_INTERNAL, "internal", "unknown error");
  }
}

void require(bool cond, const char* msg) {
  if (!cond) throw DomainError(msg);
}

fmsm_model* make_model(ModelSpec spec) {
  auto m = std::make_unique<fmsm_model>();
  m->layout = ParameterLayout::build(spec);
  for (const auto& b : m->layout.spline_blocks()) m->spline_labels.push_back(spec.transitions[b.transition].label());
  m->spec = std::move(spec);
  return m.release();
}

std::unique_ptr<Model> bind_model(const fmsm_model* model, const PanelDataset& data) {
  return std::make_unique<Model>(model->spec, std::make_pair(data.min_time(), data.max_time()));
}

FitOptions to_options(const fmsm_fit_options* o, const PanelDataset& data) {
  fmsm_fit_options d;
  fmsm_fit_options_default(&d);
  if (!o) o = &d;
  FitOptions f;
  f.max_iter = o->max_iter;
  f.tol = o->tol;
  f.policy.kind = o->imposed_grid ? GridPolicy::Kind::Imposed : GridPolicy::Kind::DataDriven;
  f.policy.h = o->h;
  f.policy.origin = o->has_grid_origin ? o->grid_origin : data.min_time();
  f.threads = resolve_threads(o->threads);
  if (f.policy.kind == GridPolicy::Kind::Imposed && !(f.policy.h > 0.0)) throw DomainError("grid step h must be positive");
  return f;
}

Eigen::VectorXd start_vector(const Model& model, const double* theta0, size_t n) {
  if (!theta0) return model.start_values();
  if (n != static_cast<size_t>(model.num_params()))
    throw DomainError("starting vector has " + std::to_string(n) + " values, model has " +
                      std::to_string(model.num_params()) + " parameters");
  return Eigen::Map<const Eigen::VectorXd>(theta0, static_cast<Eigen::Index>(n));
}

std::ofstream open_out(const char* path) {
  require(path != nullptr, "output path is NULL");
  std::ofstream out(path);
  if (!out) throw IoError(std::string("cannot write '") + path + "'");
  return out;
}

void finish(std::ofstream& out, const char* path) {
  out.flush();
  if (!out) throw IoError(std::string("write failed for '") + path + "'");
}

double coverage_of(const SurvivalCurves& c) {
  if (c.km.times.empty()) return 1.0;
  const double horizon = c.times.back();
  int inside = 0;
  int total = 0;
  for (std::size_t k = 0; k < c.km.times.size(); ++k) {
    const double t = c.km.times[k];
    if (t > horizon) break;
    const auto it = std::lower_bound(c.times.begin(), c.times.end(), t);
    double s;
    if (it == c.times.end()) {
      s = c.mean.back();
    } else {
      const std::size_t j = static_cast<std::size_t>(it - c.times.begin());
      if (j == 0 || *it == t) {
        s = c.mean[j];
      } else {
        const double w = (t - c.times[j - 1]) / (c.times[j] - c.times[j - 1]);
        s = (1.0 - w) * c.mean[j - 1] + w * c.mean[j];
      }
    }
    ++total;
    if (s >= c.km.lower[k] && s <= c.km.upper[k]) ++inside;
  }
  return total ? static_cast<double>(inside) / total : 1.0;
}

}  // namespace

extern "C" {

const char* fmsm_version(void) { return FLEXMSM_VERSION; }
const char* fmsm_last_error_message(void) { return g_error_message.c_str(); }
const char* fmsm_last_error_details(void) { return g_error_details.c_str(); }

const char* fmsm_warnings_json(void) {
  json j = json::object();
  for (const auto& [k, w] : warnings_snapshot()) j[k] = {{"message", w.first_message}, {"count", w.count}};
  g_warnings = j.dump();
  return g_warnings.c_str();
}

void fmsm_clear_warnings(void) { clear_warnings(); }

fmsm_status fmsm_model_load(const char* path, fmsm_model** out) {
  return guarded([&] {
    require(path && out, "NULL argument");
    *out = make_model(load_spec_file(path));
  });
}

fmsm_status fmsm_model_parse(const char* json_text, fmsm_model** out) {
  return guarded([&] {
    require(json_text && out, "NULL argument");
    json j;
    try {
      j = json::parse(json_text);
    } catch (const json::parse_error& e) {
      throw SpecError(std::string("model JSON parse error: ") + e.what());
    }
    *out = make_model(spec_from_json(j));
  });
}

void fmsm_model_free(fmsm_model* model) { delete model; }

size_t fmsm_model_num_params(const fmsm_model* m) { return m ? static_cast<size_t>(m->layout.num_free()) : 0; }
size_t fmsm_model_num_states(const fmsm_model* m) { return m ? static_cast<size_t>(m->spec.states.n_states) : 0; }
size_t fmsm_model_num_spline_blocks(const fmsm_model* m) { return m ? m->layout.spline_blocks().size() : 0; }

const char* fmsm_model_param_name(const fmsm_model* m, size_t i) {
  if (!m || i >= m->layout.theta_names().size()) return nullptr;
  return m->layout.theta_names()[i].c_str();
}

const char* fmsm_model_spline_label(const fmsm_model* m, size_t b) {
  if (!m || b >= m->spline_labels.size()) return nullptr;
  return m->spline_labels[b].c_str();
}

fmsm_status fmsm_model_lambda_grid(const fmsm_model* m, double* values, size_t* sizes, size_t* n_values) {
  return guarded([&] {
    require(m && n_values, "NULL argument");
    size_t total = 0;
    for (const auto& g : m->spec.lambda_grid) total += g.size();
    *n_values = total;
    if (!values || !sizes) return;
    size_t k = 0;
    for (size_t b = 0; b < m->spec.lambda_grid.size(); ++b) {
      sizes[b] = m->spec.lambda_grid[b].size();
      for (double v : m->spec.lambda_grid[b]) values[k++] = v;
    }
  });
}

fmsm_status fmsm_model_default_start(const fmsm_model* m, double* theta, size_t n) {
  return guarded([&] {
    require(m && theta, "NULL argument");
    const Eigen::VectorXd s = default_start(m->spec, m->layout);
    require(n == static_cast<size_t>(s.size()), "output length does not match the parameter count");
    for (Eigen::Index k = 0; k < s.size(); ++k) theta[k] = s[k];
  });
}

fmsm_status fmsm_model_load_theta(const fmsm_model* m, const char* path, double* theta, size_t n) {
  return guarded([&] {
    require(m && path && theta, "NULL argument");
    Eigen::VectorXd t;
    try {
      t = theta_from_json(load_json_file(path), m->layout);
    } catch (const SpecError& e) {
      throw SpecError(std::string("'") + path + "': " + e.what());
    }
    require(n == static_cast<size_t>(t.size()), "output length does not match the parameter count");
    for (Eigen::Index k = 0; k < t.size(); ++k) theta[k] = t[k];
  });
}

fmsm_status fmsm_dataset_load(const fmsm_model* m, const char* path, fmsm_dataset** out) {
  return guarded([&] {
    require(m && path && out, "NULL argument");
    auto d = std::make_unique<fmsm_dataset>();
    d->states = m->spec.states;
    d->data = read_panel_csv(path, m->spec.states);
    *out = d.release();
  });
}

void fmsm_dataset_free(fmsm_dataset* d) { delete d; }
size_t fmsm_dataset_num_subjects(const fmsm_dataset* d) { return d ? d->data.subjects.size() : 0; }
size_t fmsm_dataset_num_observations(const fmsm_dataset* d) { return d ? d->data.num_observations() : 0; }
size_t fmsm_dataset_num_deaths(const fmsm_dataset* d) {
  return d ? static_cast<size_t>(d->data.num_deaths()) : 0;
}

fmsm_status fmsm_dataset_write_csv(const fmsm_dataset* d, const char* path) {
  return guarded([&] {
    require(d, "NULL argument");
    auto out = open_out(path);
    write_panel_csv(d->data, out);
    finish(out, path);
  });
}

fmsm_status fmsm_dataset_state_table(const fmsm_dataset* d, long* counts, size_t capacity, size_t* rows,
                                     size_t* cols) {
  return guarded([&] {
    require(d && rows && cols, "NULL argument");
    const StateTable t = state_table(d->data, d->states);
    *rows = static_cast<size_t>(t.counts.rows());
    *cols = static_cast<size_t>(t.counts.cols());
    if (!counts) return;
    require(capacity >= *rows * *cols, "state table buffer too small");
    for (Eigen::Index r = 0; r < t.counts.rows(); ++r)
      for (Eigen::Index c = 0; c < t.counts.cols(); ++c) counts[r * t.counts.cols() + c] = t.counts(r, c);
  });
}

fmsm_status fmsm_dataset_write_state_table(const fmsm_dataset* d, const char* path) {
  return guarded([&] {
    require(d, "NULL argument");
    auto out = open_out(path);
    write_state_table_csv(out, state_table(d->data, d->states), d->states.n_states);
    finish(out, path);
  });
}

void fmsm_fit_options_default(fmsm_fit_options* o) {
  if (!o) return;
  o->max_iter = 100;
  o->tol = 1e-6;
  o->imposed_grid = 0;
  o->h = 0.5;
  o->has_grid_origin = 0;
  o->grid_origin = 0.0;
  o->threads = 0;
}

fmsm_status fmsm_fit_run_lambda(const fmsm_model* m, const fmsm_dataset* d, const double* lambda, size_t n_lambda,
                                const double* theta0, size_t n_theta0, const fmsm_fit_options* options,
                                fmsm_fit** out) {
  return guarded([&] {
    require(m && d && out, "NULL argument");
    require(lambda || n_lambda == 0, "lambda is NULL");
    auto f = std::make_unique<fmsm_fit>();
    f->model = bind_model(m, d->data);
    const PanelDataset bound = bind_panel(d->data, *f->model);
    PenaltySpec pen;
    pen.lambdas.assign(lambda, lambda + n_lambda);
    f->result = fit(*f->model, bound, pen, start_vector(*f->model, theta0, n_theta0), to_options(options, d->data));
    *out = f.release();
  });
}

fmsm_status fmsm_fit_run(const fmsm_model* m, const fmsm_dataset* d, const double* log10_lambda, size_t n_lambda,
                         const double* theta0, size_t n_theta0, const fmsm_fit_options* options, fmsm_fit** out) {
  std::vector<double> lambda;
  for (size_t b = 0; b < n_lambda && log10_lambda; ++b) lambda.push_back(std::pow(10.0, log10_lambda[b]));
  if (n_lambda && !log10_lambda) return fail(FMSM_ERR_USAGE, "argument", "log10_lambda is NULL");
  return fmsm_fit_run_lambda(m, d, lambda.data(), lambda.size(), theta0, n_theta0, options, out);
}

fmsm_status fmsm_fit_load(const char* path, fmsm_fit** out) {
  return guarded([&] {
    require(path && out, "NULL argument");
    LoadedFit lf = load_fit_file(path);
    auto f = std::make_unique<fmsm_fit>();
    f->model = std::make_unique<Model>(lf.spec);
    if (lf.fit.names != f->model->layout().theta_names())
      throw SpecError(std::string("'") + path + "': parameter names do not match the embedded model");
    f->result = std::move(lf.fit);
    *out = f.release();
  });
}

fmsm_status fmsm_fit_write_json(const fmsm_fit* f, const char* path) {
  return guarded([&] {
    require(f && path, "NULL argument");
    write_json_file(path, fit_to_json(*f->model, f->result));
  });
}

void fmsm_fit_free(fmsm_fit* f) { delete f; }

fmsm_status fmsm_fit_get_summary(const fmsm_fit* f, fmsm_fit_summary* out) {
  return guarded([&] {
    require(f && out, "NULL argument");
    out->loglik = f->result.loglik;
    out->penalised_loglik = f->result.penalised_loglik;
    out->df = f->result.df;
    out->aic = f->result.aic;
    out->iterations = f->result.iterations;
    out->converged = f->result.converged ? 1 : 0;
    out->num_params = static_cast<size_t>(f->result.theta_hat.size());
  });
}

const char* fmsm_fit_param_name(const fmsm_fit* f, size_t i) {
  if (!f || i >= f->result.names.size()) return nullptr;
  return f->result.names[i].c_str();
}

fmsm_status fmsm_fit_estimates(const fmsm_fit* f, double* theta, size_t n) {
  return guarded([&] {
    require(f && theta, "NULL argument");
    require(n == static_cast<size_t>(f->result.theta_hat.size()), "output length does not match the parameter count");
    for (size_t k = 0; k < n; ++k) theta[k] = f->result.theta_hat[static_cast<Eigen::Index>(k)];
  });
}

fmsm_status fmsm_fit_standard_errors(const fmsm_fit* f, double* se, size_t n) {
  return guarded([&] {
    require(f && se, "NULL argument");
    const Eigen::VectorXd s = f->result.standard_errors();
    require(n == static_cast<size_t>(s.size()), "output length does not match the parameter count");
    for (size_t k = 0; k < n; ++k) se[k] = s[static_cast<Eigen::Index>(k)];
  });
}

fmsm_status fmsm_fit_covariance(const fmsm_fit* f, double* cov, size_t n) {
  return guarded([&] {
    require(f && cov, "NULL argument");
    const auto& C = f->result.covariance;
    require(n == static_cast<size_t>(C.rows()), "output dimension does not match the parameter count");
    for (Eigen::Index i = 0; i < C.rows(); ++i)
      for (Eigen::Index j = 0; j < C.cols(); ++j) cov[i * C.cols() + j] = C(i, j);
  });
}

size_t fmsm_fit_num_covariates(const fmsm_fit* f) { return f ? f->model->covariates().size() : 0; }

const char* fmsm_fit_covariate_name(const fmsm_fit* f, size_t i) {
  if (!f || i >= f->model->covariates().size()) return nullptr;
  return f->model->covariates()[i].c_str();
}

fmsm_status fmsm_search_run(const fmsm_model* m, const fmsm_dataset* d, const double* grid_values,
                            const size_t* grid_sizes, size_t n_blocks, const double* theta0, size_t n_theta0,
                            const fmsm_fit_options* options, fmsm_search** out) {
  return guarded([&] {
    require(m && d && out, "NULL argument");
    require(n_blocks == 0 || (grid_values && grid_sizes), "grid is NULL");
    std::vector<std::vector<double>> grid(n_blocks);
    size_t k = 0;
    for (size_t b = 0; b < n_blocks; ++b)
      for (size_t i = 0; i < grid_sizes[b]; ++i) grid[b].push_back(grid_values[k++]);
    auto s = std::make_unique<fmsm_search>();
    s->model = bind_model(m, d->data);
    s->labels = m->spline_labels;
    const PanelDataset bound = bind_panel(d->data, *s->model);
    s->result = lambda_search(*s->model, bound, grid, start_vector(*s->model, theta0, n_theta0),
                              to_options(options, d->data));
    *out = s.release();
  });
}

void fmsm_search_free(fmsm_search* s) { delete s; }
size_t fmsm_search_num_points(const fmsm_search* s) { return s ? s->result.surface.size() : 0; }

double fmsm_search_aic(const fmsm_search* s, size_t i) {
  if (!s || i >= s->result.surface.size() || !s->result.surface[i].ok) return std::numeric_limits<double>::quiet_NaN();
  return s->result.surface[i].aic;
}

size_t fmsm_search_best_index(const fmsm_search* s) { return s ? static_cast<size_t>(s->result.best) : 0; }

int fmsm_search_plateau(const fmsm_search* s, size_t block, double* recommended) {
  if (!s || block >= s->result.plateau.size() || !s->result.plateau[block]) return 0;
  if (recommended) *recommended = *s->result.recommended_log10_lambda[block];
  return 1;
}

fmsm_status fmsm_search_best_fit(const fmsm_search* s, fmsm_fit** out) {
  return guarded([&] {
    require(s && out, "NULL argument");
    auto f = std::make_unique<fmsm_fit>();
    f->model = std::make_unique<Model>(s->model->bound_spec());
    f->result = s->result.best_fit;
    *out = f.release();
  });
}

fmsm_status fmsm_search_write_surface_csv(const fmsm_search* s, const char* path) {
  return guarded([&] {
    require(s, "NULL argument");
    auto out = open_out(path);
    write_surface_csv(out, s->result, s->labels);
    finish(out, path);
  });
}

fmsm_status fmsm_search_write_json(const fmsm_search* s, const char* path) {
  return guarded([&] {
    require(s && path, "NULL argument");
    const auto& r = s->result;
    json j;
    j["spline_blocks"] = s->labels;
    j["num_points"] = r.surface.size();
    j["best_index"] = r.best;
    j["best_log10_lambda"] = r.surface[static_cast<std::size_t>(r.best)].log10_lambda;
    j["best_aic"] = r.best_fit.aic;
    json plateau = json::array();
    for (std::size_t b = 0; b < r.plateau.size(); ++b)
      plateau.push_back({{"block", s->labels[b]},
                         {"plateau", static_cast<bool>(r.plateau[b])},
                         {"recommended_log10_lambda", r.recommended_log10_lambda[b]
                                                          ? json(*r.recommended_log10_lambda[b])
                                                          : json(nullptr)}});
    j["plateau"] = plateau;
    int failed = 0;
    for (const auto& p : r.surface) failed += p.ok ? 0 : 1;
    j["failed_points"] = failed;
    write_json_file(path, j);
  });
}

void fmsm_predict_options_default(fmsm_predict_options* o) {
  if (!o) return;
  o->h = 0.5;
  o->B = 1000;
  o->seed = 1;
  o->lower_quantile = 0.025;
  o->upper_quantile = 0.975;
  o->clip_eigenvalues = 0;
  o->threads = 0;
}

fmsm_status fmsm_predict_run(const fmsm_fit* f, double t1, double t2, const char* const* cov_names,
                             const double* cov_values, size_t n_cov, const fmsm_predict_options* options,
                             fmsm_prediction** out) {
  return guarded([&] {
    require(f && out, "NULL argument");
    require(n_cov == 0 || (cov_names && cov_values), "covariate arrays are NULL");
    fmsm_predict_options d;
    fmsm_predict_options_default(&d);
    if (!options) options = &d;
    const auto& names = f->model->covariates();
    Eigen::VectorXd x(static_cast<Eigen::Index>(names.size()));
    std::vector<bool> given(names.size(), false);
    for (size_t i = 0; i < n_cov; ++i) {
      require(cov_names[i] != nullptr, "covariate name is NULL");
      const auto it = std::find(names.begin(), names.end(), cov_names[i]);
      if (it == names.end()) throw DomainError(std::string("model has no covariate '") + cov_names[i] + "'");
      const auto k = static_cast<std::size_t>(it - names.begin());
      if (given[k]) throw DomainError(std::string("covariate '") + cov_names[i] + "' given twice");
      given[k] = true;
      x[static_cast<Eigen::Index>(k)] = cov_values[i];
    }
    for (std::size_t k = 0; k < names.size(); ++k)
      if (!given[k]) throw DomainError("missing value for covariate '" + names[k] + "'");
    PredictOptions po;
    po.h = options->h;
    po.B = options->B;
    po.seed = options->seed;
    po.lower_quantile = options->lower_quantile;
    po.upper_quantile = options->upper_quantile;
    po.clip_eigenvalues = options->clip_eigenvalues != 0;
    po.threads = resolve_threads(options->threads);
    require(t2 > t1, "prediction requires t2 > t1");
    auto p = std::make_unique<fmsm_prediction>();
    p->n_states = f->model->num_states();
    p->results = predict_path(*f->model, f->result.theta_hat, f->result.covariance, t1, t2, x, po);
    *out = p.release();
  });
}

void fmsm_prediction_free(fmsm_prediction* p) { delete p; }
size_t fmsm_prediction_num_times(const fmsm_prediction* p) { return p ? p->results.size() : 0; }

double fmsm_prediction_time(const fmsm_prediction* p, size_t k) {
  if (!p || k >= p->results.size()) return std::numeric_limits<double>::quiet_NaN();
  return p->results[k].t2;
}

fmsm_status fmsm_prediction_matrix(const fmsm_prediction* p, size_t k, fmsm_prediction_field field, double* out,
                                   size_t n) {
  return guarded([&] {
    require(p && out, "NULL argument");
    require(k < p->results.size(), "time index out of range");
    const auto D = static_cast<size_t>(p->n_states);
    require(n == D * D, "output length must be D*D");
    const auto& r = p->results[k];
    const Eigen::MatrixXd* M = nullptr;
    switch (field) {
      case FMSM_PRED_POINT: M = &r.point; break;
      case FMSM_PRED_MEAN: M = &r.mc_mean; break;
      case FMSM_PRED_SE: M = &r.mc_se; break;
      case FMSM_PRED_LOWER: M = &r.lower; break;
      case FMSM_PRED_UPPER: M = &r.upper; break;
      default: throw DomainError("unknown prediction field");
    }
    for (size_t i = 0; i < D; ++i)
      for (size_t j = 0; j < D; ++j)
        out[i * D + j] = (*M)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  });
}

fmsm_status fmsm_prediction_write_csv(const fmsm_prediction* p, const char* path) {
  return guarded([&] {
    require(p, "NULL argument");
    auto out = open_out(path);
    write_prediction_csv(out, p->results);
    finish(out, path);
  });
}

fmsm_status fmsm_simulate_run(const fmsm_model* m, const double* theta, size_t n_theta, const char* design_path,
                              uint64_t seed, int threads, const char* latent_csv_path, fmsm_dataset** out) {
  return guarded([&] {
    require(m && theta && out, "NULL argument");
    const StudyDesign design = design_path ? design_from_json(load_json_file(design_path)) : StudyDesign::defaults();
    const double lo = design.baseline_min - design.time_shift;
    const double hi = design.baseline_max - design.time_shift + design.follow_up;
    const Model model(m->spec, std::make_pair(lo, hi));
    require(n_theta == static_cast<size_t>(model.num_params()), "theta length does not match the parameter count");
    const Eigen::VectorXd th = Eigen::Map<const Eigen::VectorXd>(theta, static_cast<Eigen::Index>(n_theta));
    SimulationResult sim = simulate_panel(model, th, design, seed, resolve_threads(threads));
    if (latent_csv_path) {
      auto lat = open_out(latent_csv_path);
      lat << "id,time,state\n";
      for (const auto& p : sim.paths)
        for (std::size_t i = 0; i < p.times.size(); ++i)
          lat << p.id << ',' << format_double(p.times[i]) << ',' << p.states[i] + 1 << '\n';
      finish(lat, latent_csv_path);
    }
    auto d = std::make_unique<fmsm_dataset>();
    d->states = m->spec.states;
    d->data = std::move(sim.data);
    *out = d.release();
  });
}

fmsm_status fmsm_validate_run(const fmsm_fit* f, const fmsm_dataset* d, double horizon, double h, int threads,
                              fmsm_validation** out) {
  return guarded([&] {
    require(f && d && out, "NULL argument");
    const PanelDataset bound = bind_panel(d->data, *f->model);
    auto v = std::make_unique<fmsm_validation>();
    for (int s : f->model->spec().states.living_states()) {
      bool any = false;
      for (const auto& subj : bound.subjects) any = any || subj.states.front() == s;
      if (!any) continue;
      v->groups.push_back(
          survival_curves(*f->model, f->result.theta_hat, bound, s, horizon, h, resolve_threads(threads)));
      v->coverage.push_back(coverage_of(v->groups.back()));
    }
    if (v->groups.empty()) throw DataError("no subject starts in a living state");
    *out = v.release();
  });
}

void fmsm_validation_free(fmsm_validation* v) { delete v; }
size_t fmsm_validation_num_groups(const fmsm_validation* v) { return v ? v->groups.size() : 0; }

int fmsm_validation_baseline_state(const fmsm_validation* v, size_t g) {
  return v && g < v->groups.size() ? v->groups[g].baseline_state + 1 : 0;
}

size_t fmsm_validation_num_subjects(const fmsm_validation* v, size_t g) {
  return v && g < v->groups.size() ? v->groups[g].subject_ids.size() : 0;
}

double fmsm_validation_band_coverage(const fmsm_validation* v, size_t g) {
  return v && g < v->coverage.size() ? v->coverage[g] : std::numeric_limits<double>::quiet_NaN();
}

fmsm_status fmsm_validation_write_csv(const fmsm_validation* v, const char* path) {
  return guarded([&] {
    require(v, "NULL argument");
    auto out = open_out(path);
    for (std::size_t g = 0; g < v->groups.size(); ++g) {
      std::ostringstream part;
      write_survival_csv(part, v->groups[g]);
      std::string s = part.str();
      if (g > 0) s.erase(0, s.find('\n') + 1);
      out << s;
    }
    finish(out, path);
  });
}

}  // extern "C"

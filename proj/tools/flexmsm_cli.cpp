#include "flexmsm.h"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Failure carrying the process exit code and a JSON report for stderr.
struct CliError {
  int exit_code;
  json report;
};

int exit_code_for(fmsm_status s) {
  switch (s) {
    case FMSM_OK: return 0;
    case FMSM_ERR_USAGE: return 2;
    case FMSM_ERR_DATA: return 3;
    case FMSM_ERR_IO: return 3;
    case FMSM_ERR_NUMERIC: return 4;
    default: return 1;
  }
}

void check(fmsm_status s, const std::string& step) {
  if (s == FMSM_OK) return;
  json details = json::parse(fmsm_last_error_details(), nullptr, false);
  json report{{"error", fmsm_last_error_message()}, {"step", step}, {"status", static_cast<int>(s)}};
  if (!details.is_discarded()) {
    report["kind"] = details.value("kind", "unknown");
    report["details"] = details.value("details", json::object());
  }
  throw CliError{exit_code_for(s), report};
}

[[noreturn]] void usage_error(const std::string& msg) {
  throw CliError{2, json{{"error", msg}, {"kind", "usage"}}};
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { if (p) Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};

using ModelH = Handle<fmsm_model, fmsm_model_free>;
using DataH = Handle<fmsm_dataset, fmsm_dataset_free>;
using FitH = Handle<fmsm_fit, fmsm_fit_free>;
using SearchH = Handle<fmsm_search, fmsm_search_free>;
using PredH = Handle<fmsm_prediction, fmsm_prediction_free>;
using ValH = Handle<fmsm_validation, fmsm_validation_free>;

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{3, json{{"error", "cannot read '" + path + "' for hashing"}, {"kind", "io"}}};
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Collects inputs and outputs of one command and writes manifest.json.
class Run {
 public:
  Run(std::string command, std::string out_dir) : command_(std::move(command)), dir_(std::move(out_dir)) {
    started_ = utc_now();
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_))
      throw CliError{3, json{{"error", "cannot create output directory '" + dir_ + "'"}, {"kind", "io"}}};
  }

  std::string path(const std::string& name) const { return (fs::path(dir_) / name).string(); }
  void input(const std::string& role, const std::string& file) {
    inputs_[role] = {{"path", file}, {"sha256", sha256_file(file)}};
  }
  void output(const std::string& name) { outputs_.push_back(name); }
  void param(const std::string& key, json v) { params_[key] = std::move(v); }
  void set_seed(std::uint64_t s) { seed_ = s; }

  void finish() {
    json outs = json::array();
    for (const auto& o : outputs_) outs.push_back({{"file", o}, {"sha256", sha256_file(path(o))}});
    json m{{"command", command_},
           {"tool", "flexmsm"},
           {"version", fmsm_version()},
           {"inputs", inputs_},
           {"parameters", params_},
           {"seed", seed_ ? json(*seed_) : json(nullptr)},
           {"outputs", outs},
           {"warnings", json::parse(fmsm_warnings_json())},
           {"started_at", started_},
           {"finished_at", utc_now()}};
    std::ofstream f(path("manifest.json"));
    f << m.dump(2) << '\n';
    if (!f) throw CliError{3, json{{"error", "cannot write manifest"}, {"kind", "io"}}};
  }

 private:
  std::string command_;
  std::string dir_;
  std::string started_;
  json inputs_ = json::object();
  json params_ = json::object();
  std::vector<std::string> outputs_;
  std::optional<std::uint64_t> seed_;
};

// "a,b,c" or "lo:hi[:step]" per block, blocks separated by ';'.
std::vector<std::vector<double>> parse_grid(const std::string& text) {
  std::vector<std::vector<double>> grid;
  std::stringstream blocks(text);
  std::string block;
  while (std::getline(blocks, block, ';')) {
    std::vector<double> vals;
    auto num = [&](const std::string& s) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        usage_error("invalid lambda grid value '" + s + "'");
      }
    };
    if (block.find(':') != std::string::npos) {
      std::vector<std::string> parts;
      std::stringstream ps(block);
      std::string p;
      while (std::getline(ps, p, ':')) parts.push_back(p);
      if (parts.size() < 2 || parts.size() > 3) usage_error("lambda range must be lo:hi[:step]");
      const double lo = num(parts[0]);
      const double hi = num(parts[1]);
      const double step = parts.size() == 3 ? num(parts[2]) : 1.0;
      if (!(step > 0.0) || hi < lo) usage_error("lambda range needs lo <= hi and a positive step");
      for (int k = 0;; ++k) {
        const double v = lo + k * step;
        if (v > hi + 1e-9 * step) break;
        vals.push_back(v);
      }
    } else {
      std::stringstream vs(block);
      std::string v;
      while (std::getline(vs, v, ',')) vals.push_back(num(v));
    }
    if (vals.empty()) usage_error("empty lambda grid block");
    grid.push_back(vals);
  }
  return grid;
}

std::vector<std::vector<double>> model_grid(const fmsm_model* m) {
  size_t n = 0;
  check(fmsm_model_lambda_grid(m, nullptr, nullptr, &n), "model");
  std::vector<double> vals(n);
  std::vector<size_t> sizes(fmsm_model_num_spline_blocks(m));
  check(fmsm_model_lambda_grid(m, vals.data(), sizes.data(), &n), "model");
  std::vector<std::vector<double>> grid;
  size_t k = 0;
  for (size_t s : sizes) {
    grid.emplace_back(vals.begin() + static_cast<long>(k), vals.begin() + static_cast<long>(k + s));
    k += s;
  }
  return grid;
}

struct FitFlags {
  std::string model, data, start, lambda_grid, grid_policy = "data", out;
  double h = 0.5;
  double grid_origin = std::nan("");
  int max_iter = 100;
  double tol = 1e-6;
};

fmsm_fit_options fit_options(const FitFlags& f, int threads) {
  fmsm_fit_options o;
  fmsm_fit_options_default(&o);
  o.max_iter = f.max_iter;
  o.tol = f.tol;
  o.imposed_grid = f.grid_policy == "imposed";
  o.h = f.h;
  if (!std::isnan(f.grid_origin)) {
    o.has_grid_origin = 1;
    o.grid_origin = f.grid_origin;
  }
  o.threads = threads;
  return o;
}

void add_fit_flags(CLI::App* sub, FitFlags& f) {
  sub->add_option("--model", f.model, "model specification (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--data", f.data, "panel data (CSV)")->required()->check(CLI::ExistingFile);
  sub->add_option("--lambda-grid", f.lambda_grid,
                  "log10 smoothing parameters: per block 'a,b,c' or 'lo:hi[:step]', blocks separated by ';'");
  sub->add_option("--grid-policy", f.grid_policy, "data | imposed")->check(CLI::IsMember({"data", "imposed"}));
  sub->add_option("--h", f.h, "imposed grid step");
  sub->add_option("--grid-origin", f.grid_origin, "first imposed grid point (default: earliest observed time)");
  sub->add_option("--max-iter", f.max_iter, "scoring iteration cap");
  sub->add_option("--tol", f.tol, "convergence tolerance on sum |delta theta|");
  sub->add_option("--start", f.start, "starting values (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--out", f.out, "output directory")->required();
}

std::vector<double> start_values(const fmsm_model* m, const FitFlags& f, Run& run) {
  std::vector<double> theta(fmsm_model_num_params(m));
  if (f.start.empty()) {
    check(fmsm_model_default_start(m, theta.data(), theta.size()), "start");
  } else {
    check(fmsm_model_load_theta(m, f.start.c_str(), theta.data(), theta.size()), "start");
    run.input("start", f.start);
  }
  return theta;
}

json fit_summary(const fmsm_fit* fit) {
  fmsm_fit_summary s;
  check(fmsm_fit_get_summary(fit, &s), "summary");
  return {{"loglik", s.loglik}, {"penalised_loglik", s.penalised_loglik}, {"df", s.df}, {"aic", s.aic},
          {"iterations", s.iterations}, {"converged", s.converged != 0}, {"num_parameters", s.num_params}};
}

// Runs a search over the grid and writes surface.csv, search.json and the
// best fit.
void run_search(const FitFlags& f, const std::vector<std::vector<double>>& grid, const fmsm_model* model,
                const fmsm_dataset* data, const std::vector<double>& theta0, int threads, Run& run) {
  std::vector<double> values;
  std::vector<size_t> sizes;
  for (const auto& g : grid) {
    sizes.push_back(g.size());
    values.insert(values.end(), g.begin(), g.end());
  }
  const fmsm_fit_options o = fit_options(f, threads);
  SearchH search;
  check(fmsm_search_run(model, data, values.data(), sizes.data(), sizes.size(), theta0.data(), theta0.size(), &o,
                        search.out()),
        "search");
  check(fmsm_search_write_surface_csv(search.get(), run.path("surface.csv").c_str()), "write");
  run.output("surface.csv");
  check(fmsm_search_write_json(search.get(), run.path("search.json").c_str()), "write");
  run.output("search.json");
  FitH best;
  check(fmsm_search_best_fit(search.get(), best.out()), "search");
  check(fmsm_fit_write_json(best.get(), run.path("fit.json").c_str()), "write");
  run.output("fit.json");
  json summary = fit_summary(best.get());
  summary["grid_points"] = fmsm_search_num_points(search.get());
  for (size_t b = 0; b < grid.size(); ++b) {
    double rec = 0.0;
    if (fmsm_search_plateau(search.get(), b, &rec))
      summary["plateau"][fmsm_model_spline_label(model, b)] = {{"recommended_log10_lambda", rec}};
  }
  std::cout << summary.dump(2) << '\n';
}

int cmd_fit(const FitFlags& f, int threads, bool force_search) {
  Run run(force_search ? "search" : "fit", f.out);
  ModelH model;
  check(fmsm_model_load(f.model.c_str(), model.out()), "model");
  run.input("model", f.model);
  DataH data;
  check(fmsm_dataset_load(model.get(), f.data.c_str(), data.out()), "data");
  run.input("data", f.data);
  const std::vector<double> theta0 = start_values(model.get(), f, run);

  const size_t nb = fmsm_model_num_spline_blocks(model.get());
  auto grid = f.lambda_grid.empty() ? model_grid(model.get()) : parse_grid(f.lambda_grid);
  if (grid.size() != nb)
    usage_error("model has " + std::to_string(nb) + " spline blocks but the lambda grid gives " +
                std::to_string(grid.size()));
  for (const auto& g : grid)
    if (g.empty()) usage_error("no smoothing parameters given: pass --lambda-grid or set lambda_grid in the model");
  run.param("lambda_grid", grid);
  run.param("grid_policy", f.grid_policy);
  run.param("h", f.h);
  run.param("max_iter", f.max_iter);
  run.param("tol", f.tol);

  size_t points = 1;
  for (const auto& g : grid) points *= g.size();
  if (force_search || points > 1) {
    run_search(f, grid, model.get(), data.get(), theta0, threads, run);
  } else {
    std::vector<double> l10;
    for (const auto& g : grid) l10.push_back(g.front());
    const fmsm_fit_options o = fit_options(f, threads);
    FitH fit;
    check(fmsm_fit_run(model.get(), data.get(), l10.data(), l10.size(), theta0.data(), theta0.size(), &o, fit.out()),
          "fit");
    check(fmsm_fit_write_json(fit.get(), run.path("fit.json").c_str()), "write");
    run.output("fit.json");
    std::cout << fit_summary(fit.get()).dump(2) << '\n';
  }
  run.finish();
  return 0;
}

struct PredictFlags {
  std::string fit, covariates, out;
  double from_age = 0.0;
  double horizon = 0.0;
  double time_shift = 0.0;
  double h = 0.5;
  int B = 1000;
  std::uint64_t seed = 1;
  bool clip = false;
};

int cmd_predict(const PredictFlags& p, int threads) {
  Run run("predict", p.out);
  FitH fit;
  check(fmsm_fit_load(p.fit.c_str(), fit.out()), "fit");
  run.input("fit", p.fit);
  std::vector<std::string> names;
  std::vector<double> values;
  if (!p.covariates.empty()) {
    std::stringstream ss(p.covariates);
    std::string kv;
    while (std::getline(ss, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) usage_error("covariates must be name=value pairs, got '" + kv + "'");
      names.push_back(kv.substr(0, eq));
      try {
        std::size_t pos = 0;
        const std::string v = kv.substr(eq + 1);
        values.push_back(std::stod(v, &pos));
        if (pos != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        usage_error("covariate '" + names.back() + "' has a non-numeric value");
      }
    }
  }
  std::vector<const char*> cnames;
  for (const auto& n : names) cnames.push_back(n.c_str());
  fmsm_predict_options o;
  fmsm_predict_options_default(&o);
  o.h = p.h;
  o.B = p.B;
  o.seed = p.seed;
  o.clip_eigenvalues = p.clip ? 1 : 0;
  o.threads = threads;
  const double t1 = p.from_age - p.time_shift;
  if (!(p.horizon > 0.0)) usage_error("--horizon must be positive");
  PredH pred;
  check(fmsm_predict_run(fit.get(), t1, t1 + p.horizon, cnames.data(), values.data(), values.size(), &o, pred.out()),
        "predict");
  check(fmsm_prediction_write_csv(pred.get(), run.path("prediction.csv").c_str()), "write");
  run.output("prediction.csv");
  run.set_seed(p.seed);
  json cov = json::object();
  for (std::size_t i = 0; i < names.size(); ++i) cov[names[i]] = values[i];
  run.param("t1", t1);
  run.param("t2", t1 + p.horizon);
  run.param("time_shift", p.time_shift);
  run.param("h", p.h);
  run.param("B", p.B);
  run.param("covariates", cov);
  run.finish();
  std::cout << json{{"t1", t1}, {"t2", t1 + p.horizon}, {"grid_times", fmsm_prediction_num_times(pred.get())},
                    {"B", p.B}}
                   .dump(2)
            << '\n';
  return 0;
}

struct SimulateFlags {
  std::string model, theta, design, out;
  std::uint64_t seed = 1;
  bool latent = false;
};

int cmd_simulate(const SimulateFlags& s, int threads) {
  Run run("simulate", s.out);
  ModelH model;
  check(fmsm_model_load(s.model.c_str(), model.out()), "model");
  run.input("model", s.model);
  std::vector<double> theta(fmsm_model_num_params(model.get()));
  check(fmsm_model_load_theta(model.get(), s.theta.c_str(), theta.data(), theta.size()), "theta");
  run.input("theta", s.theta);
  if (!s.design.empty()) run.input("design", s.design);
  const std::string latent = run.path("latent.csv");
  DataH data;
  check(fmsm_simulate_run(model.get(), theta.data(), theta.size(), s.design.empty() ? nullptr : s.design.c_str(),
                          s.seed, threads, s.latent ? latent.c_str() : nullptr, data.out()),
        "simulate");
  check(fmsm_dataset_write_csv(data.get(), run.path("panel.csv").c_str()), "write");
  run.output("panel.csv");
  if (s.latent) run.output("latent.csv");
  run.set_seed(s.seed);
  run.finish();
  std::cout << json{{"subjects", fmsm_dataset_num_subjects(data.get())},
                    {"observations", fmsm_dataset_num_observations(data.get())},
                    {"deaths", fmsm_dataset_num_deaths(data.get())}}
                   .dump(2)
            << '\n';
  return 0;
}

struct ValidateFlags {
  std::string fit, data, out;
  double horizon = 12.0;
  double h = 0.5;
};

int cmd_validate(const ValidateFlags& v, int threads) {
  Run run("validate", v.out);
  FitH fit;
  check(fmsm_fit_load(v.fit.c_str(), fit.out()), "fit");
  run.input("fit", v.fit);
  // The dataset is parsed against the fitted model's state space.
  ModelH model;
  {
    std::ifstream in(v.fit);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("model")) usage_error("fit file has no embedded model");
    check(fmsm_model_parse(j["model"].dump().c_str(), model.out()), "fit");
  }
  DataH data;
  check(fmsm_dataset_load(model.get(), v.data.c_str(), data.out()), "data");
  run.input("data", v.data);
  ValH val;
  check(fmsm_validate_run(fit.get(), data.get(), v.horizon, v.h, threads, val.out()), "validate");
  check(fmsm_validation_write_csv(val.get(), run.path("survival.csv").c_str()), "write");
  run.output("survival.csv");
  json groups = json::array();
  for (size_t g = 0; g < fmsm_validation_num_groups(val.get()); ++g)
    groups.push_back({{"baseline_state", fmsm_validation_baseline_state(val.get(), g)},
                      {"subjects", fmsm_validation_num_subjects(val.get(), g)},
                      {"km_band_coverage", fmsm_validation_band_coverage(val.get(), g)}});
  json summary{{"horizon", v.horizon}, {"h", v.h}, {"groups", groups}};
  {
    std::ofstream f(run.path("validation.json"));
    f << summary.dump(2) << '\n';
  }
  run.output("validation.json");
  run.param("horizon", v.horizon);
  run.param("h", v.h);
  run.finish();
  std::cout << summary.dump(2) << '\n';
  return 0;
}

struct TableFlags {
  std::string model, data, out;
};

int cmd_statetable(const TableFlags& t) {
  Run run("statetable", t.out);
  ModelH model;
  check(fmsm_model_load(t.model.c_str(), model.out()), "model");
  run.input("model", t.model);
  DataH data;
  check(fmsm_dataset_load(model.get(), t.data.c_str(), data.out()), "data");
  run.input("data", t.data);
  check(fmsm_dataset_write_state_table(data.get(), run.path("state_table.csv").c_str()), "write");
  run.output("state_table.csv");
  run.finish();
  std::ifstream in(run.path("state_table.csv"));
  std::cout << in.rdbuf();
  return 0;
}

int report(const CliError& e) {
  json r = e.report;
  r["exit_code"] = e.exit_code;
  std::cerr << r.dump() << '\n';
  return e.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flexible multi-state models for interval-censored panel data", "flexmsm"};
  app.set_help_flag("--help", "print this help and exit");
  app.set_version_flag("--version", std::string(fmsm_version()));
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: FLEXMSM_THREADS or all cores)");

  FitFlags fitf;
  auto* fit = app.add_subcommand("fit", "fit a model by penalised Fisher scoring");
  add_fit_flags(fit, fitf);
  FitFlags searchf;
  auto* search = app.add_subcommand("search", "grid search over smoothing parameters by AIC");
  add_fit_flags(search, searchf);

  PredictFlags pf;
  auto* predict = app.add_subcommand("predict", "transition probabilities with simulation bands");
  predict->add_option("--fit", pf.fit, "fit.json")->required()->check(CLI::ExistingFile);
  predict->add_option("--from-age", pf.from_age, "start of the prediction interval")->required();
  predict->add_option("--horizon", pf.horizon, "length of the prediction interval")->required();
  predict->add_option("--time-shift", pf.time_shift, "subtracted from --from-age to give model time");
  predict->add_option("--covariates", pf.covariates, "name=value,...");
  predict->add_option("--h", pf.h, "grid step");
  predict->add_option("--B", pf.B, "number of parameter draws");
  predict->add_option("--seed", pf.seed, "random seed");
  predict->add_flag("--clip-eigenvalues", pf.clip, "clip negative covariance eigenvalues before sampling");
  predict->add_option("--out", pf.out, "output directory")->required();

  SimulateFlags sf;
  auto* simulate = app.add_subcommand("simulate", "simulate a panel dataset from a model");
  simulate->add_option("--model", sf.model, "model specification (JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--theta", sf.theta, "true parameter values (JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--design", sf.design, "study design (JSON)")->check(CLI::ExistingFile);
  simulate->add_option("--seed", sf.seed, "random seed");
  simulate->add_flag("--latent", sf.latent, "also write the latent paths");
  simulate->add_option("--out", sf.out, "output directory")->required();

  ValidateFlags vf;
  auto* validate = app.add_subcommand("validate", "model-based survival against Kaplan-Meier");
  validate->add_option("--fit", vf.fit, "fit.json")->required()->check(CLI::ExistingFile);
  validate->add_option("--data", vf.data, "panel data (CSV)")->required()->check(CLI::ExistingFile);
  validate->add_option("--horizon", vf.horizon, "follow-up horizon");
  validate->add_option("--h", vf.h, "grid step");
  validate->add_option("--out", vf.out, "output directory")->required();

  TableFlags tf;
  auto* table = app.add_subcommand("statetable", "counts of successive observed state pairs");
  table->add_option("--model", tf.model, "model specification (JSON)")->required()->check(CLI::ExistingFile);
  table->add_option("--data", tf.data, "panel data (CSV)")->required()->check(CLI::ExistingFile);
  table->add_option("--out", tf.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(CliError{2, json{{"error", e.what()}, {"kind", "usage"}}});
  }

  try {
    fmsm_clear_warnings();
    if (*fit) return cmd_fit(fitf, threads, false);
    if (*search) return cmd_fit(searchf, threads, true);
    if (*predict) return cmd_predict(pf, threads);
    if (*simulate) return cmd_simulate(sf, threads);
    if (*validate) return cmd_validate(vf, threads);
    if (*table) return cmd_statetable(tf);
  } catch (const CliError& e) {
    return report(e);
  } catch (const std::exception& e) {
    return report(CliError{1, json{{"error", e.what()}, {"kind", "internal"}}});
  }
  return 2;
}

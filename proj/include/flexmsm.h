#ifndef FLEXMSM_H
#define FLEXMSM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(FLEXMSM_BUILDING_LIBRARY)
#    define FMSM_API __declspec(dllexport)
#  else
#    define FMSM_API __declspec(dllimport)
#  endif
#else
#  define FMSM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Values match the command-line exit codes where they overlap. */
typedef enum fmsm_status {
  FMSM_OK = 0,
  FMSM_ERR_USAGE = 2,    /* invalid argument or option value */
  FMSM_ERR_DATA = 3,     /* malformed model, design or panel data */
  FMSM_ERR_NUMERIC = 4,  /* numerical failure (singular information, zero likelihood, ...) */
  FMSM_ERR_IO = 5,       /* file cannot be read or written */
  FMSM_ERR_INTERNAL = 6
} fmsm_status;

typedef struct fmsm_model fmsm_model;
typedef struct fmsm_dataset fmsm_dataset;
typedef struct fmsm_fit fmsm_fit;
typedef struct fmsm_search fmsm_search;
typedef struct fmsm_prediction fmsm_prediction;
typedef struct fmsm_validation fmsm_validation;

FMSM_API const char* fmsm_version(void);

/* Message and JSON details of the last failed call on this thread. The
 * pointers stay valid until the next failing call on the same thread. */
FMSM_API const char* fmsm_last_error_message(void);
FMSM_API const char* fmsm_last_error_details(void);

/* Warnings collected since the last clear, as a JSON object
 * {category: {"message": first message, "count": n}}. Thread-local buffer. */
FMSM_API const char* fmsm_warnings_json(void);
FMSM_API void fmsm_clear_warnings(void);

/* ---- Model specification ---------------------------------------------- */

FMSM_API fmsm_status fmsm_model_load(const char* path, fmsm_model** out);
FMSM_API fmsm_status fmsm_model_parse(const char* json_text, fmsm_model** out);
FMSM_API void fmsm_model_free(fmsm_model* model);
FMSM_API size_t fmsm_model_num_params(const fmsm_model* model);
FMSM_API size_t fmsm_model_num_states(const fmsm_model* model);
FMSM_API size_t fmsm_model_num_spline_blocks(const fmsm_model* model);
/* Name of free parameter i, or NULL when out of range. */
FMSM_API const char* fmsm_model_param_name(const fmsm_model* model, size_t i);
/* Label ("3-4") of the transition owning spline block b, or NULL. */
FMSM_API const char* fmsm_model_spline_label(const fmsm_model* model, size_t b);
/* Per-block log10 lambda grid declared in the model file; sizes[b] receives
 * the length of block b's grid, values are concatenated. Either output may be
 * NULL to query the total count via *n_values. */
FMSM_API fmsm_status fmsm_model_lambda_grid(const fmsm_model* model, double* values, size_t* sizes,
                                            size_t* n_values);
FMSM_API fmsm_status fmsm_model_default_start(const fmsm_model* model, double* theta, size_t n);
/* Reads a parameter file ({"theta": {name: value}} or an array) into theta. */
FMSM_API fmsm_status fmsm_model_load_theta(const fmsm_model* model, const char* path, double* theta, size_t n);

/* ---- Panel data -------------------------------------------------------- */

/* Long-format CSV id,time,state,death,<covariates>; parsed against the
 * model's state space. */
FMSM_API fmsm_status fmsm_dataset_load(const fmsm_model* model, const char* path, fmsm_dataset** out);
FMSM_API void fmsm_dataset_free(fmsm_dataset* data);
FMSM_API size_t fmsm_dataset_num_subjects(const fmsm_dataset* data);
FMSM_API size_t fmsm_dataset_num_observations(const fmsm_dataset* data);
FMSM_API size_t fmsm_dataset_num_deaths(const fmsm_dataset* data);
FMSM_API fmsm_status fmsm_dataset_write_csv(const fmsm_dataset* data, const char* path);
/* Successive-pair counts: living states x all states, row-major. */
FMSM_API fmsm_status fmsm_dataset_state_table(const fmsm_dataset* data, long* counts, size_t capacity,
                                              size_t* rows, size_t* cols);
FMSM_API fmsm_status fmsm_dataset_write_state_table(const fmsm_dataset* data, const char* path);

/* ---- Fitting ------------------------------------------------------------ */

typedef struct fmsm_fit_options {
  int max_iter;           /* default 100 */
  double tol;             /* default 1e-6, on the L1 change in theta */
  int imposed_grid;       /* 0: one generator per observation interval; 1: fixed grid */
  double h;               /* imposed grid step, default 0.5 */
  int has_grid_origin;    /* 0: grid starts at the earliest observed time */
  double grid_origin;
  int threads;            /* 0: FLEXMSM_THREADS or hardware concurrency */
} fmsm_fit_options;

FMSM_API void fmsm_fit_options_default(fmsm_fit_options* options);

/* Penalised Fisher scoring. log10_lambda holds one value per spline block
 * (n_lambda must equal the block count). theta0 may be NULL for the default
 * starting values. */
FMSM_API fmsm_status fmsm_fit_run(const fmsm_model* model, const fmsm_dataset* data, const double* log10_lambda,
                                  size_t n_lambda, const double* theta0, size_t n_theta0,
                                  const fmsm_fit_options* options, fmsm_fit** out);
/* As fmsm_fit_run with natural-scale smoothing parameters (lambda = 0 allowed). */
FMSM_API fmsm_status fmsm_fit_run_lambda(const fmsm_model* model, const fmsm_dataset* data, const double* lambda,
                                         size_t n_lambda, const double* theta0, size_t n_theta0,
                                         const fmsm_fit_options* options, fmsm_fit** out);
FMSM_API fmsm_status fmsm_fit_load(const char* path, fmsm_fit** out);
FMSM_API fmsm_status fmsm_fit_write_json(const fmsm_fit* fit, const char* path);
FMSM_API void fmsm_fit_free(fmsm_fit* fit);

typedef struct fmsm_fit_summary {
  double loglik;
  double penalised_loglik;
  double df;
  double aic;
  int iterations;
  int converged;
  size_t num_params;
} fmsm_fit_summary;

FMSM_API fmsm_status fmsm_fit_get_summary(const fmsm_fit* fit, fmsm_fit_summary* out);
FMSM_API const char* fmsm_fit_param_name(const fmsm_fit* fit, size_t i);
FMSM_API fmsm_status fmsm_fit_estimates(const fmsm_fit* fit, double* theta, size_t n);
FMSM_API fmsm_status fmsm_fit_standard_errors(const fmsm_fit* fit, double* se, size_t n);
/* Row-major n x n. */
FMSM_API fmsm_status fmsm_fit_covariance(const fmsm_fit* fit, double* cov, size_t n);
/* Number of covariates and the name of covariate i in the fitted model. */
FMSM_API size_t fmsm_fit_num_covariates(const fmsm_fit* fit);
FMSM_API const char* fmsm_fit_covariate_name(const fmsm_fit* fit, size_t i);

/* ---- Smoothing-parameter search ---------------------------------------- */

/* Exhaustive search over the Cartesian product of per-block log10 grids.
 * grid_values holds the grids concatenated; grid_sizes[b] the length of
 * block b's grid. */
FMSM_API fmsm_status fmsm_search_run(const fmsm_model* model, const fmsm_dataset* data, const double* grid_values,
                                     const size_t* grid_sizes, size_t n_blocks, const double* theta0,
                                     size_t n_theta0, const fmsm_fit_options* options, fmsm_search** out);
FMSM_API void fmsm_search_free(fmsm_search* search);
FMSM_API size_t fmsm_search_num_points(const fmsm_search* search);
/* AIC at grid point i; NaN for failed points. */
FMSM_API double fmsm_search_aic(const fmsm_search* search, size_t i);
FMSM_API size_t fmsm_search_best_index(const fmsm_search* search);
/* 1 if block b shows the large-lambda AIC plateau; *recommended receives the
 * suggested pinned log10 lambda. */
FMSM_API int fmsm_search_plateau(const fmsm_search* search, size_t block, double* recommended);
/* Copy of the best fit; free with fmsm_fit_free. */
FMSM_API fmsm_status fmsm_search_best_fit(const fmsm_search* search, fmsm_fit** out);
FMSM_API fmsm_status fmsm_search_write_surface_csv(const fmsm_search* search, const char* path);
FMSM_API fmsm_status fmsm_search_write_json(const fmsm_search* search, const char* path);

/* ---- Prediction --------------------------------------------------------- */

typedef struct fmsm_predict_options {
  double h;               /* default 0.5 */
  int B;                  /* default 1000 */
  uint64_t seed;          /* default 1 */
  double lower_quantile;  /* default 0.025 */
  double upper_quantile;  /* default 0.975 */
  int clip_eigenvalues;   /* sample from a non-PSD covariance by clipping */
  int threads;
} fmsm_predict_options;

FMSM_API void fmsm_predict_options_default(fmsm_predict_options* options);

/* P(t1, t) at t = t1 + h, t1 + 2h, ..., t2 with Monte Carlo summaries.
 * Covariates are given by name; every model covariate must be supplied. */
FMSM_API fmsm_status fmsm_predict_run(const fmsm_fit* fit, double t1, double t2, const char* const* cov_names,
                                      const double* cov_values, size_t n_cov, const fmsm_predict_options* options,
                                      fmsm_prediction** out);
FMSM_API void fmsm_prediction_free(fmsm_prediction* pred);
FMSM_API size_t fmsm_prediction_num_times(const fmsm_prediction* pred);
FMSM_API double fmsm_prediction_time(const fmsm_prediction* pred, size_t k);

typedef enum fmsm_prediction_field {
  FMSM_PRED_POINT = 0,
  FMSM_PRED_MEAN = 1,
  FMSM_PRED_SE = 2,
  FMSM_PRED_LOWER = 3,
  FMSM_PRED_UPPER = 4
} fmsm_prediction_field;

/* D x D row-major matrix for grid time k. */
FMSM_API fmsm_status fmsm_prediction_matrix(const fmsm_prediction* pred, size_t k, fmsm_prediction_field field,
                                            double* out, size_t n);
FMSM_API fmsm_status fmsm_prediction_write_csv(const fmsm_prediction* pred, const char* path);

/* ---- Simulation ---------------------------------------------------------- */

/* Simulates a panel from the model at theta. design_path may be NULL for the
 * default design. latent_csv_path, when not NULL, receives the latent paths. */
FMSM_API fmsm_status fmsm_simulate_run(const fmsm_model* model, const double* theta, size_t n_theta,
                                       const char* design_path, uint64_t seed, int threads,
                                       const char* latent_csv_path, fmsm_dataset** out);

/* ---- Survival validation ------------------------------------------------- */

/* Model-based survival against Kaplan-Meier for every living baseline state
 * with at least one subject, up to `horizon` time units after entry. */
FMSM_API fmsm_status fmsm_validate_run(const fmsm_fit* fit, const fmsm_dataset* data, double horizon, double h,
                                       int threads, fmsm_validation** out);
FMSM_API void fmsm_validation_free(fmsm_validation* v);
FMSM_API size_t fmsm_validation_num_groups(const fmsm_validation* v);
/* 1-based baseline state and subject count of group g. */
FMSM_API int fmsm_validation_baseline_state(const fmsm_validation* v, size_t g);
FMSM_API size_t fmsm_validation_num_subjects(const fmsm_validation* v, size_t g);
/* Fraction of Kaplan-Meier event times at which the mean model survival lies
 * inside the 95% band. */
FMSM_API double fmsm_validation_band_coverage(const fmsm_validation* v, size_t g);
FMSM_API fmsm_status fmsm_validation_write_csv(const fmsm_validation* v, const char* path);

#ifdef __cplusplus
}
#endif

#endif

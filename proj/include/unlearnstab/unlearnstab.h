#ifndef UNLEARNSTAB_H
#define UNLEARNSTAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define US_API __declspec(dllexport)
#else
#define US_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum us_status {
    US_OK = 0,
    US_ERR_INVALID_ARGUMENT = 1,
    US_ERR_INVALID_MATRIX = 2,
    US_ERR_NOT_PSD = 3,
    US_ERR_SHAPE = 4,
    US_ERR_NO_STOCHASTICITY = 5,
    US_ERR_EMPTY_RETAIN_SET = 6,
    US_ERR_EMPTY_FORGET_SET = 7,
    US_ERR_DEGENERATE_ENSEMBLE = 8,
    US_ERR_TOO_MANY_PAIRS = 9,
    US_ERR_UNDEFINED_THRESHOLD = 10,
    US_ERR_BOUND_INAPPLICABLE = 11,
    US_ERR_INFEASIBLE_SPEC = 12,
    US_ERR_INVALID_BATCH = 13,
    US_ERR_TRAINING_DIVERGED = 14,
    US_ERR_PARSE = 15,
    US_ERR_IO = 16,
    US_ERR_CONFIG = 17,
    US_ERR_INTERNAL = 100
} us_status;

/* message of the last failing call on this thread; "" after success */
US_API const char* us_last_error(void);
US_API const char* us_status_name(us_status s);

/* strings returned through char** are owned by the caller */
US_API void us_string_free(char* s);

/* ---- experiment configs ---- */

typedef struct us_config us_config;

US_API us_status us_config_new(us_config** out);
US_API void us_config_free(us_config* cfg);
/* '_' in keys is treated as '-'; later calls override earlier ones */
US_API us_status us_config_set(us_config* cfg, const char* key, const char* value);
US_API int us_config_has(const us_config* cfg, const char* key);
/* flat "key = value" text, '#' comments */
US_API us_status us_config_parse(us_config* cfg, const char* text);
US_API us_status us_config_load(us_config* cfg, const char* path);
/* effective config (defaults filled) as '#' lines */
US_API us_status us_config_echo(const us_config* cfg, char** out);

US_API int us_mode_count(void);
US_API const char* us_mode_name(int i);
/* mode == NULL selects the keys shared by every mode */
US_API int us_param_count(const char* mode);
US_API us_status us_param_info(const char* mode, int i, const char** key, const char** default_value,
                               const char** help);
US_API us_status us_help(char** out);

/* Runs the configured mode; writes the output file (or stdout) and plot files.
   *verify_passed is 0 when a verify run had a failing criterion. */
US_API us_status us_run(const us_config* cfg, int* verify_passed);
/* Same run, result returned instead of written. */
US_API us_status us_run_to_string(const us_config* cfg, char** out, int* verify_passed);

/* Acceptance suite; criteria == NULL or n_criteria == 0 runs all. */
US_API us_status us_verify(int full, uint64_t seed, int workers, const int* criteria, int n_criteria,
                           int* all_passed, char** report);

/* ---- Hessian ensembles ---- */

typedef struct us_ensemble us_ensemble;

US_API us_status us_ensemble_parse(const char* text, us_ensemble** out);
US_API us_status us_ensemble_load(const char* path, us_ensemble** out);
/* row-major d*d blocks, n_retain retain matrices then n_forget forget matrices */
US_API us_status us_ensemble_from_dense(int d, int n_retain, int n_forget, const double* blocks, us_ensemble** out);
/* weight_i * v_i v_i^T; vectors row-major (n_retain + n_forget) x d */
US_API us_status us_ensemble_from_factors(int d, int n_retain, int n_forget, const double* weights,
                                          const double* vectors, us_ensemble** out);
/* dim <= 0 picks the default */
US_API us_status us_ensemble_q_construction(int n_retain, int n_forget, int q, int dim, us_ensemble** out);
US_API void us_ensemble_free(us_ensemble* ens);
US_API int us_ensemble_dim(const us_ensemble* ens);
US_API int us_ensemble_n_retain(const us_ensemble* ens);
US_API int us_ensemble_n_forget(const us_ensemble* ens);
US_API us_status us_ensemble_format(const us_ensemble* ens, char** out);
US_API us_status us_ensemble_save(const us_ensemble* ens, const char* path);

typedef struct us_unlearn_params {
    double eta;
    double alpha;
    int batch;
} us_unlearn_params;

typedef struct us_coherence_result {
    double lambda_max_D;
    double lambda_max_S;
    double max_pair_lambda;
    double sigma;
} us_coherence_result;

US_API us_status us_coherence(const us_ensemble* ens, const us_unlearn_params* p, us_coherence_result* out);

typedef enum us_form { US_FORM_STATEMENT = 0, US_FORM_PROOF = 1 } us_form;
typedef enum us_classification {
    US_PREDICT_DIVERGE = 0,
    US_CONVERGENCE_POSSIBLE = 1,
    US_INDETERMINATE = 2
} us_classification;

typedef struct us_stability_report {
    double lambda_max_D;
    double sigma;
    double thr_div;
    double thr_conv_statement;
    double thr_conv_proof;
    us_classification classification;
} us_stability_report;

US_API us_status us_stability(const us_ensemble* ens, const us_unlearn_params* p, us_form form,
                              us_stability_report* out);

/* out receives k_max + 1 traces Tr(V_0..V_k_max) */
US_API us_status us_exact_second_moment(const us_ensemble* ens, const us_unlearn_params* p, int k_max,
                                        double* out);

/* norms receives steps + 1 values ||w_0||..||w_steps|| */
US_API us_status us_run_trajectory(const us_ensemble* ens, const us_unlearn_params* p, int steps,
                                   double divergence_ratio, uint64_t seed, double* norms, int* diverged);

#ifdef __cplusplus
}
#endif

#endif

#ifndef MODELRISK_H
#define MODELRISK_H

/* Generated with cbindgen:0.27.0 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which side of the break-even prevalence favours the challenger.
 */
typedef enum MrRegime {
  MR_REGIME_CHALLENGER_ABOVE = 0,
  MR_REGIME_CHALLENGER_BELOW = 1,
  MR_REGIME_CHALLENGER_ALWAYS = 2,
  MR_REGIME_BASELINE_ALWAYS = 3,
  MR_REGIME_IDENTICAL = 4,
} MrRegime;

/**
 * Result code of every fallible call.
 */
typedef enum MrStatus {
  MR_STATUS_OK = 0,
  MR_STATUS_NULL_POINTER = 1,
  MR_STATUS_INVALID_ARGUMENT = 2,
  MR_STATUS_PARSE_ERROR = 3,
  MR_STATUS_IO_ERROR = 4,
  MR_STATUS_NUMERICAL_ERROR = 5,
  MR_STATUS_PANIC = 6,
} MrStatus;

/**
 * Cost configuration.
 */
typedef struct MrCosts MrCosts;

/**
 * Dirichlet posterior over a classifier's confusion matrix.
 */
typedef struct MrPosterior MrPosterior;

/**
 * Expected cost per scenario and strategy.
 */
typedef struct MrRiskTable MrRiskTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mr_version(void);

/**
 * Message describing the last failed call on this thread, or an empty
 * string. Valid until the next `mr_*` call on the same thread.
 */
const char *mr_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 */
void mr_string_free(char *s);

/**
 * Fits a posterior from confusion-matrix CSV text with the same symmetric
 * prior concentration `prior` in every cell.
 */
enum MrStatus mr_posterior_from_csv(const char *csv_text, double prior, struct MrPosterior **out);

/**
 * Fits a posterior from `k` labels and a row-major `k × k` count matrix
 * (rows are true classes). `prior_alpha` holds `k` concentrations, or is
 * null for a uniform prior.
 */
enum MrStatus mr_posterior_from_counts(const char *const *labels,
                                       size_t k,
                                       const uint64_t *counts,
                                       const double *prior_alpha,
                                       struct MrPosterior **out);

/**
 * Adds a further row-major `k × k` block of counts to the posterior in place.
 */
enum MrStatus mr_posterior_update(struct MrPosterior *posterior, const uint64_t *counts);

/**
 * Number of classes, or 0 for a null handle.
 */
size_t mr_posterior_num_classes(const struct MrPosterior *posterior);

/**
 * Label of class `i` as a newly allocated string.
 */
enum MrStatus mr_posterior_class_label(const struct MrPosterior *posterior, size_t i, char **out);

/**
 * Copies the row-major posterior concentrations into `out[0..k*k]`.
 */
enum MrStatus mr_posterior_alpha(const struct MrPosterior *posterior, double *out, size_t len);

/**
 * Copies the row-major posterior mean of θ into `out[0..k*k]`.
 */
enum MrStatus mr_posterior_mean(const struct MrPosterior *posterior, double *out, size_t len);

/**
 * Quantile `q` of the Beta marginal of cell `(i, j)`.
 */
enum MrStatus mr_posterior_marginal_quantile(const struct MrPosterior *posterior,
                                             size_t i,
                                             size_t j,
                                             double q,
                                             double *out);

/**
 * Serialises the posterior as JSON.
 */
enum MrStatus mr_posterior_to_json(const struct MrPosterior *posterior, char **out);

void mr_posterior_free(struct MrPosterior *posterior);

/**
 * Built-in cost configuration.
 */
enum MrStatus mr_costs_default(struct MrCosts **out);

/**
 * Cost configuration from TOML text.
 */
enum MrStatus mr_costs_from_toml(const char *toml_text, struct MrCosts **out);

/**
 * Analytic mean of the failure-cost mixture.
 */
enum MrStatus mr_costs_expected_failure_cost(const struct MrCosts *costs, double *out);

void mr_costs_free(struct MrCosts *costs);

/**
 * Monte Carlo risk table for the manual, automated and hybrid strategies.
 * `escalate` is a comma-separated list of outputs the hybrid strategy sends
 * to manual evaluation, or null for the default set.
 */
enum MrStatus mr_risk_table_new(const struct MrPosterior *posterior,
                                const struct MrCosts *costs,
                                const char *escalate,
                                uint64_t n,
                                uint64_t seed,
                                struct MrRiskTable **out);

/**
 * Expected cost and its standard error for one scenario and strategy
 * (`manual`, `automated` or `hybrid`). `std_error` may be null.
 */
enum MrStatus mr_risk_table_cell(const struct MrRiskTable *table,
                                 const char *scenario,
                                 const char *strategy,
                                 double *mean,
                                 double *std_error);

/**
 * Serialises the table as JSON.
 */
enum MrStatus mr_risk_table_to_json(const struct MrRiskTable *table, char **out);

/**
 * Break-even no-anomaly prevalence between two strategies. `profile` is
 * `uniform`, a single anomaly label, or `label=weight,...`. `threshold` is
 * set to NaN when the two strategies cost the same everywhere.
 */
enum MrStatus mr_break_even(const struct MrRiskTable *table,
                            const char *challenger,
                            const char *baseline,
                            const char *profile,
                            double *threshold,
                            enum MrRegime *regime);

void mr_risk_table_free(struct MrRiskTable *table);

/**
 * Expected value of perfect information about θ in one scenario, per
 * inspected item. With `expected_failure_cost` non-zero the failure cost is
 * fixed at its mean inside each draw instead of being sampled. Any of the
 * output pointers except `vopi_out` may be null.
 */
enum MrStatus mr_vopi(const struct MrPosterior *posterior,
                      const struct MrCosts *costs,
                      const char *escalate,
                      const char *scenario,
                      uint64_t n,
                      uint64_t seed,
                      int32_t expected_failure_cost,
                      double *vopi_out,
                      double *std_error,
                      double *prior_cost,
                      double *preposterior_cost);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODELRISK_H */

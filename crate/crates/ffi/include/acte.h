#ifndef ACTE_H
#define ACTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ActeBase {
  ACTE_BASE_OLS = 0,
  ACTE_BASE_RF = 1,
} ActeBase;

typedef enum ActeCurve {
  ACTE_CURVE_EFFECT = 0,
  ACTE_CURVE_CONTROL_MEAN = 1,
  ACTE_CURVE_TREATED_MEAN = 2,
} ActeCurve;

typedef enum ActeLearner {
  ACTE_LEARNER_S = 0,
  ACTE_LEARNER_T = 1,
  ACTE_LEARNER_X = 2,
} ActeLearner;

typedef enum ActeStatus {
  ACTE_STATUS_OK = 0,
  ACTE_STATUS_NULL_ARGUMENT = 1,
  ACTE_STATUS_INVALID_UTF8 = 2,
  ACTE_STATUS_INPUT = 3,
  ACTE_STATUS_CONFIG = 4,
  ACTE_STATUS_DOMAIN = 5,
  ACTE_STATUS_DEGENERATE_ARM = 6,
  ACTE_STATUS_BUFFER_TOO_SMALL = 7,
  ACTE_STATUS_SERIALIZATION = 8,
  ACTE_STATUS_IO = 9,
  ACTE_STATUS_PANIC = 10,
} ActeStatus;

/**
 * Opaque handle to a validated panel.
 */
typedef struct ActeDataset ActeDataset;

/**
 * Opaque handle to a fitted meta-learner.
 */
typedef struct ActeModel ActeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *acte_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *acte_version(void);

/**
 * Reads and preprocesses a box-score CSV.
 *
 * `covariates` is a `name:kind` list such as `"team:categorical"` and may be
 * NULL. A negative `min_prev_minutes` selects the default of 25.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be writable.
 */
enum ActeStatus acte_dataset_read_csv(const char *path,
                                      const char *covariates,
                                      const char *outcome,
                                      double min_prev_minutes,
                                      int32_t age_min,
                                      int32_t age_max,
                                      struct ActeDataset **out);

/**
 * Generates one simulated panel for `scenario` (1, 2 or 3).
 *
 * # Safety
 * `out` must be writable.
 */
enum ActeStatus acte_dataset_simulate(uint8_t scenario,
                                      size_t n_players,
                                      uint64_t seed,
                                      struct ActeDataset **out);

/**
 * # Safety
 * `ds` must be a live handle; `out_rows` must be writable.
 */
enum ActeStatus acte_dataset_rows(const struct ActeDataset *ds, size_t *out_rows);

/**
 * # Safety
 * `ds` must be NULL or a handle not yet freed.
 */
void acte_dataset_free(struct ActeDataset *ds);

/**
 * Fits a meta-learner. `n_trees` and `seed` only affect the forest base.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum ActeStatus acte_model_fit(const struct ActeDataset *ds,
                               enum ActeLearner learner,
                               enum ActeBase base,
                               size_t n_trees,
                               uint64_t seed,
                               struct ActeModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void acte_model_free(struct ActeModel *model);

/**
 * Writes the requested curve at ages `age_min..=age_max` into `values`,
 * which must hold at least `age_max - age_min + 1` doubles.
 *
 * # Safety
 * Handles must be live; `values` must point to `len` writable doubles.
 */
enum ActeStatus acte_model_curve(const struct ActeModel *model,
                                 const struct ActeDataset *ds,
                                 enum ActeCurve curve,
                                 int32_t age_min,
                                 int32_t age_max,
                                 double *values,
                                 size_t len);

/**
 * Effect curve with percentile bootstrap bands at level `1 - alpha`.
 *
 * # Safety
 * Handles must be live; each buffer must point to `len` writable doubles.
 */
enum ActeStatus acte_model_bootstrap(const struct ActeModel *model,
                                     const struct ActeDataset *ds,
                                     int32_t age_min,
                                     int32_t age_max,
                                     size_t replicates,
                                     double alpha,
                                     uint64_t seed,
                                     double *values,
                                     double *lower,
                                     double *upper,
                                     size_t len);

/**
 * Serializes a model to JSON. Release the string with [`acte_string_free`].
 *
 * # Safety
 * `model` must be live; `out` must be writable.
 */
enum ActeStatus acte_model_to_json(const struct ActeModel *model, char **out);

/**
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum ActeStatus acte_model_from_json(const char *json, struct ActeModel **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void acte_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACTE_H */

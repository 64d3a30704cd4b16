#ifndef HETCP_H
#define HETCP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum HetcpStatus {
  HETCP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  HETCP_STATUS_NULL_ARGUMENT = 1,
  /**
   * Configuration was syntactically or semantically invalid.
   */
  HETCP_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The data was unusable (empty, non-finite, dimension mismatch, ...).
   */
  HETCP_STATUS_DATA_ERROR = 3,
  /**
   * A path or string was not valid UTF-8.
   */
  HETCP_STATUS_UTF8_ERROR = 4,
  /**
   * File I/O failed.
   */
  HETCP_STATUS_IO_ERROR = 5,
  /**
   * A panic was caught at the boundary.
   */
  HETCP_STATUS_INTERNAL_ERROR = 6,
} HetcpStatus;

/**
 * Opaque dataset handle.
 */
typedef struct HetcpDataset HetcpDataset;

/**
 * Opaque calibrated-predictor handle.
 */
typedef struct HetcpPredictor HetcpPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *hetcp_last_error_message(void);

/**
 * Frees a string returned through an out-pointer.
 *
 * # Safety
 * `s` must have been produced by this library and not freed before.
 */
void hetcp_string_free(char *s);

/**
 * Loads a dataset from a CSV file with header `x0,..,x{d-1},y` (optional
 * `mu,sigma` columns are ignored).
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum HetcpStatus hetcp_dataset_from_csv(const char *path, struct HetcpDataset **out);

/**
 * Builds a dataset from row-major features `xs` (n * dim values) and `ys`
 * (n values).
 *
 * # Safety
 * `xs` must point to `n * dim` doubles, `ys` to `n` doubles, `out` must be
 * valid.
 */
enum HetcpStatus hetcp_dataset_from_arrays(const double *xs,
                                           uintptr_t n,
                                           uintptr_t dim,
                                           const double *ys,
                                           struct HetcpDataset **out);

/**
 * Samples a synthetic dataset from a generator configuration such as
 * `{"type":"toy_cv","dim":2,"n":500,"seed":7}`.
 *
 * # Safety
 * `generator_json` must be a valid C string and `out` a valid pointer.
 */
enum HetcpStatus hetcp_synth(const char *generator_json, struct HetcpDataset **out);

/**
 * Number of observations.
 *
 * # Safety
 * `dataset` must be a live handle from this library (or null, giving 0).
 */
uintptr_t hetcp_dataset_len(const struct HetcpDataset *dataset);

/**
 * Feature dimensionality.
 *
 * # Safety
 * `dataset` must be a live handle from this library (or null, giving 0).
 */
uintptr_t hetcp_dataset_dim(const struct HetcpDataset *dataset);

/**
 * Splits a dataset into train/calibration/test parts (fractions strictly
 * inside (0,1); the calibration fraction applies to the non-test remainder).
 *
 * # Safety
 * All pointers must be valid; the three out-pointers receive new handles.
 */
enum HetcpStatus hetcp_dataset_split(const struct HetcpDataset *dataset,
                                     double test_fraction,
                                     double calib_fraction_of_train,
                                     uint64_t seed,
                                     struct HetcpDataset **out_train,
                                     struct HetcpDataset **out_calib,
                                     struct HetcpDataset **out_test);

/**
 * Releases a dataset handle.
 *
 * # Safety
 * `dataset` must come from this library and not be freed twice.
 */
void hetcp_dataset_free(struct HetcpDataset *dataset);

/**
 * Fits an estimator on `train` and calibrates a conformal predictor on
 * `calib`.
 *
 * `config_json` example:
 * `{"measure":"norm","alpha":0.1,"estimator":{"kind":"knn","k":50},
 *   "taxonomy":{"kind":"difficulty_bins","n_bins":3},"mondrian":true,"seed":1}`.
 * Oracle estimators additionally need a `generator` entry.
 *
 * # Safety
 * All pointers must be valid for the duration of the call.
 */
enum HetcpStatus hetcp_calibrate(const struct HetcpDataset *train,
                                 const struct HetcpDataset *calib,
                                 const char *config_json,
                                 struct HetcpPredictor **out);

/**
 * Prediction interval at a feature point; infinite endpoints are delivered
 * as IEEE infinities.
 *
 * # Safety
 * `x` must point to `dim` doubles; out-pointers must be valid.
 */
enum HetcpStatus hetcp_predict(const struct HetcpPredictor *predictor,
                               const double *x,
                               uintptr_t dim,
                               uint64_t point_id,
                               double *out_lower,
                               double *out_upper);

/**
 * Evaluates the predictor on a test dataset and returns the report as JSON
 * (marginal and per-class coverage/width).
 *
 * # Safety
 * Pointers must be valid; the string out-pointer receives a new allocation.
 */
enum HetcpStatus hetcp_evaluate_json(const struct HetcpPredictor *predictor,
                                     const struct HetcpDataset *test,
                                     char **out_json);

/**
 * Serializes the predictor (critical scores, taxonomy, fitted estimator) to
 * JSON; enough to re-run prediction without the calibration data.
 *
 * # Safety
 * Pointers must be valid; the string out-pointer receives a new allocation.
 */
enum HetcpStatus hetcp_predictor_to_json(const struct HetcpPredictor *predictor, char **out_json);

/**
 * Restores a predictor from its JSON serialization.
 *
 * # Safety
 * `json` must be a valid C string; `out` must be valid.
 */
enum HetcpStatus hetcp_predictor_from_json(const char *json,
                                           uint64_t seed,
                                           struct HetcpPredictor **out);

/**
 * Releases a predictor handle.
 *
 * # Safety
 * `predictor` must come from this library and not be freed twice.
 */
void hetcp_predictor_free(struct HetcpPredictor *predictor);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HETCP_H */

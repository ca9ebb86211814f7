#ifndef BMVR_H
#define BMVR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BmvrStatus {
  BMVR_STATUS_OK = 0,
  BMVR_STATUS_NULL_POINTER = 1,
  BMVR_STATUS_DIMENSION = 2,
  BMVR_STATUS_CONFIG = 3,
  BMVR_STATUS_NUMERIC_OVERFLOW = 4,
  BMVR_STATUS_DIVERGED = 5,
  BMVR_STATUS_FORMAT = 6,
  BMVR_STATUS_IO = 7,
  BMVR_STATUS_MISSING_R = 8,
  BMVR_STATUS_EMPTY_DATASET = 9,
  BMVR_STATUS_NOT_ONE_HOT = 10,
  BMVR_STATUS_INVALID_ARGUMENT = 11,
  BMVR_STATUS_PANIC = 12,
} BmvrStatus;

typedef enum BmvrMatrix {
  BMVR_MATRIX_W1 = 0,
  BMVR_MATRIX_W2 = 1,
  BMVR_MATRIX_Q = 2,
  BMVR_MATRIX_R = 3,
} BmvrMatrix;

typedef enum BmvrVariant {
  BMVR_VARIANT_BMVR = 0,
  BMVR_VARIANT_BACKPROP = 1,
  BMVR_VARIANT_BMVR_DECOUPLED = 2,
} BmvrVariant;

typedef enum BmvrNonlinearity {
  BMVR_NONLINEARITY_LINEAR = 0,
  BMVR_NONLINEARITY_MEAN_SUBTRACTED_RELU = 1,
} BmvrNonlinearity;

typedef struct BmvrDataset BmvrDataset;

typedef struct BmvrModel BmvrModel;

/**
 * Learning rates for a single step.
 */
typedef struct BmvrStepParams {
  double eta_w1;
  double eta_w2;
  double eta_q;
  double tau;
  enum BmvrNonlinearity nonlinearity;
  double mean_rate;
} BmvrStepParams;

/**
 * Training configuration. A schedule with `t0 <= 0` is constant.
 */
typedef struct BmvrTrainConfig {
  enum BmvrVariant variant;
  enum BmvrNonlinearity nonlinearity;
  size_t k;
  uint64_t steps;
  uint64_t seed;
  double eta_w1;
  double eta_w2;
  double eta_q;
  double t0;
  double tau;
  double mean_rate;
} BmvrTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next library call on the same thread.
 */
const char *bmvr_last_error(void);

/**
 * `eta0 / (1 + t / t0)`, or `eta0` when `t0 <= 0`.
 */
double bmvr_schedule_value(double eta0, double t0, uint64_t t);

/**
 * Creates a randomly initialised model with `Q = q_scale · I`. `decoupled`
 * allocates the R matrix.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum BmvrStatus bmvr_model_new(size_t m,
                               size_t n,
                               size_t k,
                               double q_scale,
                               bool decoupled,
                               uint64_t seed,
                               struct BmvrModel **out);

/**
 * # Safety
 * `model` must be null or a handle returned by this library, not yet freed.
 */
void bmvr_model_free(struct BmvrModel *model);

/**
 * # Safety
 * `model` must be a live handle; the output pointers must be writable.
 */
enum BmvrStatus bmvr_model_dims(const struct BmvrModel *model, size_t *m, size_t *n, size_t *k);

/**
 * Copies one weight matrix row-major into `out`, which must hold exactly
 * `len = rows · cols` values.
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `len` writable doubles.
 */
enum BmvrStatus bmvr_model_get(const struct BmvrModel *model,
                               enum BmvrMatrix which,
                               double *out,
                               size_t len);

/**
 * Overwrites one weight matrix from `len = rows · cols` row-major values.
 *
 * # Safety
 * `model` must be a live handle and `values` must point to `len` doubles.
 */
enum BmvrStatus bmvr_model_set(struct BmvrModel *model,
                               enum BmvrMatrix which,
                               const double *values,
                               size_t len);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum BmvrStatus bmvr_model_save(const struct BmvrModel *model, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum BmvrStatus bmvr_model_load(const char *path, struct BmvrModel **out);

/**
 * Synthetic low-rank regression data.
 *
 * # Safety
 * `out` must be writable.
 */
enum BmvrStatus bmvr_dataset_synth(size_t m,
                                   size_t n,
                                   size_t k_true,
                                   size_t samples,
                                   double noise_sigma,
                                   uint64_t seed,
                                   struct BmvrDataset **out);

/**
 * Builds a dataset from `samples` rows of `m` inputs and `n` targets.
 *
 * # Safety
 * `x` must point to `samples · m` doubles, `y` to `samples · n` doubles,
 * and `out` must be writable.
 */
enum BmvrStatus bmvr_dataset_from_arrays(const double *x,
                                         const double *y,
                                         size_t samples,
                                         size_t m,
                                         size_t n,
                                         struct BmvrDataset **out);

/**
 * # Safety
 * `data` must be null or a live dataset handle.
 */
void bmvr_dataset_free(struct BmvrDataset *data);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t bmvr_dataset_len(const struct BmvrDataset *data);

/**
 * Applies one update of `variant` for the sample `(x, y)`.
 *
 * # Safety
 * `model` must be a live handle, `x` must point to `m` doubles, `y` to `n`
 * doubles and `params` to a valid parameter block.
 */
enum BmvrStatus bmvr_step(struct BmvrModel *model,
                          enum BmvrVariant variant,
                          const double *x,
                          const double *y,
                          const struct BmvrStepParams *params);

/**
 * Mean squared prediction error of `model` on `data`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum BmvrStatus bmvr_objective(const struct BmvrModel *model,
                               const struct BmvrDataset *data,
                               enum BmvrNonlinearity nonlin,
                               double *out);

/**
 * Closed-form rank-`k` optimum. Writes the optimal loss and, if
 * `model_out` is non-null, a model holding the optimal weights.
 *
 * # Safety
 * `data` must be live; `optimal_loss` writable; `model_out` null or writable.
 */
enum BmvrStatus bmvr_oracle(const struct BmvrDataset *data,
                            size_t k,
                            double *optimal_loss,
                            struct BmvrModel **model_out);

/**
 * Trains a fresh model on `train`, returning it and its final objective on
 * `eval`.
 *
 * # Safety
 * Handles must be live; `config` valid; `model_out` and `final_objective`
 * writable.
 */
enum BmvrStatus bmvr_train(const struct BmvrDataset *train,
                           const struct BmvrDataset *eval,
                           const struct BmvrTrainConfig *config,
                           struct BmvrModel **model_out,
                           double *final_objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BMVR_H */

#ifndef ILLAB_H
#define ILLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IllabLossKind {
  ILLAB_LOSS_KIND_BCE = 0,
  ILLAB_LOSS_KIND_WEIGHTED_BCE = 1,
  ILLAB_LOSS_KIND_FOCAL = 2,
  ILLAB_LOSS_KIND_DB = 3,
  ILLAB_LOSS_KIND_MODIFIED_DB = 4,
} IllabLossKind;

typedef enum IllabStatus {
  ILLAB_STATUS_OK = 0,
  ILLAB_STATUS_NULL_POINTER = 1,
  ILLAB_STATUS_INVALID_ARGUMENT = 2,
  ILLAB_STATUS_DOMAIN = 3,
  ILLAB_STATUS_SHAPE = 4,
  ILLAB_STATUS_CONTRACT = 5,
  ILLAB_STATUS_CONFIG = 6,
  ILLAB_STATUS_DEGENERATE_CLASS = 7,
  ILLAB_STATUS_UNDEFINED_AUC = 8,
  ILLAB_STATUS_UNSTABLE_CI = 9,
  ILLAB_STATUS_UNSUPPORTED_ARCHITECTURE = 10,
  ILLAB_STATUS_DIVERGENCE = 11,
  ILLAB_STATUS_IO = 12,
  ILLAB_STATUS_PARSE = 13,
  ILLAB_STATUS_PANIC = 14,
} IllabStatus;

/**
 * Opaque per-class positive counts.
 */
typedef struct IllabClassStats IllabClassStats;

/**
 * Opaque loaded model.
 */
typedef struct IllabModel IllabModel;

/**
 * Loss hyperparameters; `no_finding_index < 0` means none.
 */
typedef struct IllabLossParams {
  enum IllabLossKind variant;
  double alpha;
  double beta;
  double mu;
  double kappa;
  double lambda;
  double gamma;
  int64_t no_finding_index;
} IllabLossParams;

typedef struct IllabInterval {
  double point;
  double lo;
  double hi;
  size_t undefined;
} IllabInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`) and returns the full message length
 * plus one. An empty message means the last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t illab_last_error_message(char *buf, size_t len);

/**
 * Default hyperparameters for `variant`, without a "No finding" class.
 */
struct IllabLossParams illab_loss_params_default(enum IllabLossKind variant);

/**
 * Counts per-class positives of a `rows x cols` label matrix.
 *
 * # Safety
 * `labels` must point to `rows * cols` readable bytes and `out` must be a
 * valid pointer. Release the handle with [`illab_class_stats_free`].
 */
enum IllabStatus illab_class_stats_from_labels(const uint8_t *labels,
                                               size_t rows,
                                               size_t cols,
                                               struct IllabClassStats **out);

/**
 * Builds statistics from `num_classes` positive counts over `num_samples`.
 *
 * # Safety
 * `positives` must point to `num_classes` readable counts and `out` must be
 * a valid pointer.
 */
enum IllabStatus illab_class_stats_from_counts(size_t num_samples,
                                               const size_t *positives,
                                               size_t num_classes,
                                               struct IllabClassStats **out);

/**
 * # Safety
 * `stats` must be null or a handle from this library not yet freed.
 */
void illab_class_stats_free(struct IllabClassStats *stats);

/**
 * Mean loss of `rows x cols` logits against labels; `grad_out`, when not
 * null, receives the gradient with respect to the logits.
 *
 * # Safety
 * `params`, `stats` and `loss_out` must be valid; `logits` and `labels`
 * must hold `rows * cols` elements; `grad_out` must be null or hold
 * `rows * cols` writable doubles.
 */
enum IllabStatus illab_loss(const struct IllabLossParams *params,
                            const struct IllabClassStats *stats,
                            const double *logits,
                            const uint8_t *labels,
                            size_t rows,
                            size_t cols,
                            double *loss_out,
                            double *grad_out);

/**
 * Exact ROC AUC with ties counted as one half.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `auc_out` must be valid.
 */
enum IllabStatus illab_auc(const double *scores, const uint8_t *labels, size_t n, double *auc_out);

/**
 * Cut-off maximizing sensitivity + specificity - 1, and that maximum.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; both outputs must be valid.
 */
enum IllabStatus illab_youden(const double *scores,
                              const uint8_t *labels,
                              size_t n,
                              double *threshold_out,
                              double *j_out);

/**
 * Percentile bootstrap interval of the AUC over `(score, label)` pairs.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` must be valid.
 */
enum IllabStatus illab_bootstrap_auc(const double *scores,
                                     const uint8_t *labels,
                                     size_t n,
                                     size_t replications,
                                     uint64_t seed,
                                     double confidence,
                                     struct IllabInterval *out);

/**
 * Elementwise mean of `count` probability matrices of `rows x cols`.
 *
 * # Safety
 * `members` must hold `count` pointers, each to `rows * cols` doubles;
 * `out` must hold `rows * cols` writable doubles.
 */
enum IllabStatus illab_ensemble_average(const double *const *members,
                                        size_t count,
                                        size_t rows,
                                        size_t cols,
                                        double *out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 * Release the handle with [`illab_model_free`].
 */
enum IllabStatus illab_model_load(const char *path, struct IllabModel **out);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t illab_model_input_dim(const struct IllabModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t illab_model_num_classes(const struct IllabModel *model);

/**
 * Sigmoid probabilities for `rows` feature vectors.
 *
 * # Safety
 * `model` must be a live handle; `features` must hold
 * `rows * input_dim` doubles and `probs_out` `rows * num_classes`.
 */
enum IllabStatus illab_model_predict(const struct IllabModel *model,
                                     const double *features,
                                     size_t rows,
                                     double *probs_out);

/**
 * # Safety
 * `model` must be null or a handle from [`illab_model_load`] not yet freed.
 */
void illab_model_free(struct IllabModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ILLAB_H */

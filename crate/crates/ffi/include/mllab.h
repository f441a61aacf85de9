#ifndef MLLAB_H
#define MLLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum MllabStatus {
  MLLAB_STATUS_OK = 0,
  MLLAB_STATUS_NULL_POINTER = 1,
  MLLAB_STATUS_INVALID_ARGUMENT = 2,
  MLLAB_STATUS_DIMENSION_MISMATCH = 3,
  MLLAB_STATUS_DOMAIN = 4,
  MLLAB_STATUS_NON_FINITE = 5,
  MLLAB_STATUS_IO = 6,
  MLLAB_STATUS_CHECKPOINT = 7,
  MLLAB_STATUS_BUFFER_TOO_SMALL = 8,
  MLLAB_STATUS_INTERNAL = 99,
} MllabStatus;

/**
 * Backbone selector for [`mllab_network_new`].
 */
typedef enum MllabBackbone {
  MLLAB_BACKBONE_RESIDUAL = 0,
  MLLAB_BACKBONE_DEPTHWISE_SEPARABLE = 1,
} MllabBackbone;

/**
 * Loss selector.
 */
typedef enum MllabLoss {
  MLLAB_LOSS_CROSS_ENTROPY = 0,
  MLLAB_LOSS_ANGULAR_SOFTMAX = 1,
  MLLAB_LOSS_AM_SOFTMAX = 2,
  MLLAB_LOSS_ARC_FACE = 3,
  MLLAB_LOSS_MARGINAL_JOINT = 4,
} MllabLoss;

/**
 * Opaque embedding network.
 */
typedef struct MllabNetwork MllabNetwork;

/**
 * Architecture sizes for [`mllab_network_new`].
 */
typedef struct MllabNetworkConfig {
  /**
   * An `MllabBackbone` value.
   */
  uint32_t kind;
  size_t input_dim;
  size_t width;
  size_t blocks;
  size_t embed_dim;
  size_t grid_side;
  size_t kernel;
} MllabNetworkConfig;

/**
 * Loss hyperparameters; fill with [`mllab_loss_params_default`] and adjust.
 */
typedef struct MllabLossParams {
  /**
   * An `MllabLoss` value.
   */
  uint32_t kind;
  uint32_t m_int;
  double m_add;
  double s;
  double dist_threshold;
  double error_margin;
  double balance;
  bool normalize_features;
  double asoftmax_lambda;
  bool marginal_hinge;
} MllabLossParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mllab_version(void);

/**
 * Length in bytes (without the terminator) of this thread's last error message.
 */
size_t mllab_last_error_length(void);

/**
 * Copy this thread's last error message into `buf` (NUL-terminated).
 * Returns `MLLAB_STATUS_BUFFER_TOO_SMALL` if `len` cannot hold the message and
 * its terminator; the buffer is then left untouched.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum MllabStatus mllab_last_error_message(char *buf, size_t len);

/**
 * Default architecture sizes for backbone `kind` (an `MllabBackbone`) and `input_dim`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MllabStatus mllab_network_config_default(uint32_t kind,
                                              size_t input_dim,
                                              struct MllabNetworkConfig *out);

/**
 * Initialise a network deterministically from `seed`. On success `*out`
 * owns a handle to release with [`mllab_network_free`].
 *
 * # Safety
 * `config` and `out` must be valid pointers.
 */
enum MllabStatus mllab_network_new(const struct MllabNetworkConfig *config,
                                   uint64_t seed,
                                   struct MllabNetwork **out);

/**
 * Release a handle; null is ignored.
 *
 * # Safety
 * `net` must be null or a handle not yet freed.
 */
void mllab_network_free(struct MllabNetwork *net);

/**
 * # Safety
 * `net` must be a live handle or null (returns 0).
 */
size_t mllab_network_input_dim(const struct MllabNetwork *net);

/**
 * # Safety
 * `net` must be a live handle or null (returns 0).
 */
size_t mllab_network_embed_dim(const struct MllabNetwork *net);

/**
 * # Safety
 * `net` must be a live handle or null (returns 0).
 */
size_t mllab_network_param_count(const struct MllabNetwork *net);

/**
 * Embed `rows` inputs of width `cols` into `out` (`rows × embed_dim`).
 *
 * # Safety
 * `inputs` must hold `rows·cols` doubles and `out` `out_len` doubles.
 */
enum MllabStatus mllab_network_embed(const struct MllabNetwork *net,
                                     const double *inputs,
                                     size_t rows,
                                     size_t cols,
                                     double *out,
                                     size_t out_len);

/**
 * Write the network to a checkpoint file.
 *
 * # Safety
 * `net` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum MllabStatus mllab_network_save(const struct MllabNetwork *net, const char *path);

/**
 * Load a checkpoint file into a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
 */
enum MllabStatus mllab_network_load(const char *path, struct MllabNetwork **out);

/**
 * Default hyperparameters for loss `kind` (an `MllabLoss`).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MllabStatus mllab_loss_params_default(uint32_t kind, struct MllabLossParams *out);

/**
 * Mean loss over `n` features of width `d` with classifier weights
 * (`d × classes`, row-major) and biases. Any gradient pointer may be null
 * to skip that output; otherwise it must hold `n·d`, `d·classes` or
 * `classes` doubles respectively.
 *
 * # Safety
 * All non-null pointers must be valid for the stated lengths.
 */
enum MllabStatus mllab_loss_evaluate(const struct MllabLossParams *params,
                                     const double *features,
                                     const size_t *labels,
                                     size_t n,
                                     size_t d,
                                     const double *weights,
                                     const double *biases,
                                     size_t classes,
                                     double *out_loss,
                                     double *grad_features,
                                     double *grad_weights,
                                     double *grad_biases);

/**
 * A-Softmax target-logit surrogate for angle `theta` in `[0, π]`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MllabStatus mllab_asoftmax_psi(double theta, uint32_t m, double *out);

/**
 * Step-schedule learning rate for a 1-based `epoch`.
 *
 * # Safety
 * `drop_epochs` must hold `num_drops` values; `out` must be valid.
 */
enum MllabStatus mllab_lr_at_epoch(double lr0,
                                   double drop_factor,
                                   const size_t *drop_epochs,
                                   size_t num_drops,
                                   size_t epochs,
                                   size_t epoch,
                                   double *out);

/**
 * Best threshold and its accuracy (%) over `n` pairs; `same[i]` non-zero
 * marks a same-identity pair.
 *
 * # Safety
 * `distances` and `same` must hold `n` values; outputs must be valid.
 */
enum MllabStatus mllab_best_threshold_accuracy(const double *distances,
                                               const uint8_t *same,
                                               size_t n,
                                               double *out_threshold,
                                               double *out_accuracy);

/**
 * Mean k-fold verification accuracy (%).
 *
 * # Safety
 * `distances` and `same` must hold `n` values; `out_accuracy` must be valid.
 */
enum MllabStatus mllab_kfold_verification(const double *distances,
                                          const uint8_t *same,
                                          size_t n,
                                          size_t folds,
                                          uint64_t seed,
                                          double *out_accuracy);

/**
 * `(raw − 127.5) / 128` for `n` intensities in `[0, 255]`.
 *
 * # Safety
 * `raw` and `out` must hold `n` doubles.
 */
enum MllabStatus mllab_pixel_normalize(const double *raw, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLLAB_H */

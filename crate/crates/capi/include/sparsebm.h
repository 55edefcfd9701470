#ifndef SPARSEBM_H
#define SPARSEBM_H

/* Generated by cbindgen from sparsebm-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call. `SBM_STATUS_OK` is zero; anything
 * else leaves a message readable via `sbm_last_error_message`.
 */
typedef enum SbmStatus {
  SBM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SBM_STATUS_NULL_ARGUMENT = 1,
  SBM_STATUS_CONFIG = 2,
  SBM_STATUS_DATA = 3,
  /**
   * The request exceeds what the method can compute.
   */
  SBM_STATUS_CAPABILITY = 4,
  SBM_STATUS_NUMERIC = 5,
  SBM_STATUS_SHAPE = 6,
  SBM_STATUS_USAGE = 7,
  SBM_STATUS_IO = 8,
} SbmStatus;

/**
 * A loaded dataset in the canonical binary container format.
 */
typedef struct SbmDataset SbmDataset;

/**
 * A loaded RBM: parameters plus the optional prune mask.
 */
typedef struct SbmModel SbmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *sbm_last_error_message(void);

/**
 * Loads an RBM container. On success writes a handle to `out`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid
 * pointer.
 */
enum SbmStatus sbm_model_load(const char *path, struct SbmModel **out);

/**
 * Writes the model (and its mask, when present) back to disk.
 *
 * # Safety
 * `model` must come from `sbm_model_load`; `path` must be a valid
 * NUL-terminated string.
 */
enum SbmStatus sbm_model_save(const struct SbmModel *model, const char *path);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `sbm_model_load` and not be used afterwards.
 */
void sbm_model_free(struct SbmModel *model);

/**
 * Number of visible units; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t sbm_model_n_visible(const struct SbmModel *model);

/**
 * Number of hidden units; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t sbm_model_n_hidden(const struct SbmModel *model);

/**
 * Fraction of pruned connections (0 when the model carries no mask).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double sbm_model_sparsity(const struct SbmModel *model);

/**
 * Free energy of one binary visible vector (`v`, `len` bytes of 0/1),
 * so that `log p(v) = -F(v) - log Z`.
 *
 * # Safety
 * `v` must point to `len` readable bytes; `out` must be writable.
 */
enum SbmStatus sbm_model_free_energy(const struct SbmModel *model,
                                     const uint8_t *v,
                                     uintptr_t len,
                                     double *out);

/**
 * Hidden activation probabilities `p(h_j = 1 | v)`; `out` must hold
 * `sbm_model_n_hidden` doubles.
 *
 * # Safety
 * `v` must point to `len` readable bytes; `out` to `out_len` writable
 * doubles.
 */
enum SbmStatus sbm_model_hidden_probs(const struct SbmModel *model,
                                      const uint8_t *v,
                                      uintptr_t len,
                                      double *out,
                                      uintptr_t out_len);

/**
 * Exact log partition function by brute-force enumeration of the
 * smaller layer; fails with `SBM_STATUS_CAPABILITY` when that layer
 * exceeds `limit` units.
 *
 * # Safety
 * `out` must be writable.
 */
enum SbmStatus sbm_model_exact_log_z(const struct SbmModel *model, uintptr_t limit, double *out);

/**
 * Loads a dataset stored in the canonical binary container.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid
 * pointer.
 */
enum SbmStatus sbm_dataset_load(const char *path, struct SbmDataset **out);

/**
 * Releases a dataset handle. Null is ignored.
 *
 * # Safety
 * `dataset` must come from `sbm_dataset_load` and not be used
 * afterwards.
 */
void sbm_dataset_free(struct SbmDataset *dataset);

/**
 * Number of examples; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
uintptr_t sbm_dataset_rows(const struct SbmDataset *dataset);

/**
 * Pixels per example; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
uintptr_t sbm_dataset_width(const struct SbmDataset *dataset);

/**
 * Mean log-probability of the dataset under the model given `log_z`
 * (from `sbm_model_exact_log_z` or an external estimate), in nats.
 *
 * # Safety
 * `out` must be writable; handles must be live.
 */
enum SbmStatus sbm_avg_log_prob(const struct SbmModel *model,
                                const struct SbmDataset *dataset,
                                double log_z,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSEBM_H */

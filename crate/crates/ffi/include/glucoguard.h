#ifndef GLUCOGUARD_H
#define GLUCOGUARD_H

/* Generated by cbindgen from glucoguard-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum GgStatus {
  GG_STATUS_OK = 0,
  /**
   * File could not be read or written.
   */
  GG_STATUS_IO = 1,
  /**
   * File contents are not in the expected format.
   */
  GG_STATUS_FORMAT = 2,
  /**
   * Chain validation failed; see the out-parameter for the block.
   */
  GG_STATUS_INTEGRITY = 3,
  /**
   * A null pointer, bad UTF-8 path, or out-of-range argument.
   */
  GG_STATUS_INVALID_ARGUMENT = 4,
  GG_STATUS_INTERNAL = 5,
} GgStatus;

/**
 * Opaque handle to a block store loaded from disk.
 */
typedef struct GgChain GgChain;

/**
 * Opaque handle to a loaded detection model.
 */
typedef struct GgModel GgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out` to a valid
 * pointer slot. On `GG_STATUS_OK` the slot owns a handle that must be
 * released with [`gg_model_free`].
 */
enum GgStatus gg_model_load(const char *path, struct GgModel **out);

/**
 * Scores one sample (five features in model order) and writes the
 * probability and the 0.5-threshold label.
 *
 * # Safety
 * `model` must be a live handle from [`gg_model_load`]; `features`
 * must point to five doubles; `probability` and `label` must be valid
 * or null (null skips that output).
 */
enum GgStatus gg_model_predict(const struct GgModel *model,
                               const double *features,
                               double *probability,
                               uint8_t *label);

/**
 * Releases a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must have come from [`gg_model_load`] and not be freed twice.
 */
void gg_model_free(struct GgModel *model);

/**
 * Opens a block store file.
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out` to a valid
 * pointer slot. On `GG_STATUS_OK` the handle must be released with
 * [`gg_chain_free`].
 */
enum GgStatus gg_chain_open(const char *path, struct GgChain **out);

/**
 * Number of blocks in an open store.
 *
 * # Safety
 * `chain` must be a live handle from [`gg_chain_open`].
 */
uint64_t gg_chain_len(const struct GgChain *chain);

/**
 * Re-derives every stored digest. Returns `GG_STATUS_OK` for an intact
 * chain; on `GG_STATUS_INTEGRITY` the failing block's index lands in
 * `failed_block_index` (when non-null).
 *
 * # Safety
 * `chain` must be a live handle; `failed_block_index` must be valid or
 * null.
 */
enum GgStatus gg_chain_verify(const struct GgChain *chain, uint64_t *failed_block_index);

/**
 * Releases a chain handle. Null is a no-op.
 *
 * # Safety
 * `chain` must have come from [`gg_chain_open`] and not be freed twice.
 */
void gg_chain_free(struct GgChain *chain);

/**
 * Generates a calibrated synthetic dataset and writes it as CSV.
 * `label_noise` must lie in [0, 0.5).
 *
 * # Safety
 * `out_path` must point to a NUL-terminated string.
 */
enum GgStatus gg_generate_dataset_csv(uint64_t n_samples,
                                      uint64_t seed,
                                      double label_noise,
                                      const char *out_path);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gg_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLUCOGUARD_H */

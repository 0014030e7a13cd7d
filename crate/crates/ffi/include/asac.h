#ifndef ASAC_H
#define ASAC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AsacStatus {
  ASAC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  ASAC_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid configuration or input data.
   */
  ASAC_STATUS_CONFIG = 2,
  /**
   * Failure while training or evaluating.
   */
  ASAC_STATUS_RUNTIME = 3,
  /**
   * File could not be read or written.
   */
  ASAC_STATUS_IO = 4,
  /**
   * Feature counts or buffer lengths disagree.
   */
  ASAC_STATUS_DIMENSION = 5,
  /**
   * A string argument was not valid UTF-8.
   */
  ASAC_STATUS_UTF8 = 6,
  /**
   * An internal panic was caught at the boundary.
   */
  ASAC_STATUS_PANIC = 7,
} AsacStatus;

/**
 * A set of episodes.
 */
typedef struct AsacDataset AsacDataset;

/**
 * A trained selector/predictor pair with the settings used to run it.
 */
typedef struct AsacModel AsacModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after success.
 * The pointer stays valid until the next `asac_*` call on this thread.
 */
const char *asac_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *asac_version(void);

/**
 * Read episodes from a CSV file with header `episode_id,t,y,x1,...,xd`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AsacStatus asac_dataset_load_csv(const char *path, struct AsacDataset **out);

/**
 * Generate the synthetic dataset described by `config_text` (key/value
 * format) with generation seed `seed`.
 *
 * # Safety
 * `config_text` must be a NUL-terminated string; `out` must be writable.
 */
enum AsacStatus asac_dataset_generate(const char *config_text,
                                      uint64_t seed,
                                      struct AsacDataset **out);

/**
 * Number of episodes, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t asac_dataset_len(const struct AsacDataset *ds);

/**
 * Features per step, or 0 for a null or empty dataset.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t asac_dataset_features(const struct AsacDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void asac_dataset_free(struct AsacDataset *ds);

/**
 * Train on every episode of `ds` with the model, cost and training keys of
 * `config_text`. Data keys other than the task are ignored.
 *
 * # Safety
 * `ds` must be a live handle, `config_text` a NUL-terminated string and
 * `out` writable.
 */
enum AsacStatus asac_train(const struct AsacDataset *ds,
                           const char *config_text,
                           struct AsacModel **out);

/**
 * Roll the model over every episode of `ds` and write the per-feature
 * measurement rates into `rates[0..len]`; `len` must equal the feature count.
 *
 * # Safety
 * `model` and `ds` must be live handles; `rates` must hold `len` doubles.
 */
enum AsacStatus asac_model_rates(const struct AsacModel *model,
                                 const struct AsacDataset *ds,
                                 uint64_t seed,
                                 double *rates,
                                 size_t len);

/**
 * Write `selector.json` and `predictor.json` into directory `dir`.
 *
 * # Safety
 * `model` must be a live handle and `dir` a NUL-terminated string.
 */
enum AsacStatus asac_model_save(const struct AsacModel *model, const char *dir);

/**
 * Load a model saved by `asac_model_save`, running it with the cost and
 * evaluation settings of `config_text`.
 *
 * # Safety
 * `dir` and `config_text` must be NUL-terminated strings; `out` writable.
 */
enum AsacStatus asac_model_load(const char *dir, const char *config_text, struct AsacModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void asac_model_free(struct AsacModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASAC_H */

#ifndef SETNET_H
#define SETNET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function in this library.
 */
typedef enum SetnetStatus {
  SETNET_STATUS_OK = 0,
  SETNET_STATUS_CHECK_FAILED = 1,
  SETNET_STATUS_INVALID_ARGUMENT = 2,
  SETNET_STATUS_IO = 3,
  SETNET_STATUS_DIVERGED = 4,
  SETNET_STATUS_DIMENSION = 5,
  SETNET_STATUS_NUMERIC = 6,
  SETNET_STATUS_NULL_POINTER = 7,
  SETNET_STATUS_PANIC = 8,
} SetnetStatus;

/**
 * Generated set task.
 */
typedef enum SetnetTask {
  SETNET_TASK_NORMAL_VAR = 0,
  SETNET_TASK_TOY_SHAPES = 1,
} SetnetTask;

/**
 * Opaque dataset handle.
 */
typedef struct SetnetDataset SetnetDataset;

/**
 * Opaque model handle.
 */
typedef struct SetnetModel SetnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *setnet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *setnet_version(void);

/**
 * Generate a synthetic dataset; `task` is a [`SetnetTask`] value.
 *
 * # Safety
 * `out` must be a valid pointer to writable handle storage.
 */
enum SetnetStatus setnet_dataset_generate(uint32_t task,
                                          size_t n_sets,
                                          size_t set_size,
                                          uint64_t seed,
                                          uint32_t split,
                                          struct SetnetDataset **out);

/**
 * Read a SETD file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid handle storage.
 */
enum SetnetStatus setnet_dataset_read(const char *path, struct SetnetDataset **out);

/**
 * Write a dataset as SETD.
 *
 * # Safety
 * `ds` must be a live handle and `path` a NUL-terminated string.
 */
enum SetnetStatus setnet_dataset_write(const struct SetnetDataset *ds, const char *path);

/**
 * Number of sets, elements per set and features per element.
 *
 * # Safety
 * `ds` must be a live handle; the out pointers must be writable.
 */
enum SetnetStatus setnet_dataset_shape(const struct SetnetDataset *ds,
                                       size_t *n_sets,
                                       size_t *set_size,
                                       size_t *features);

/**
 * Release a dataset; null is ignored.
 *
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void setnet_dataset_free(struct SetnetDataset *ds);

/**
 * Build a freshly initialized model from a JSON model config.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` valid handle storage.
 */
enum SetnetStatus setnet_model_new(const char *config_json, struct SetnetModel **out);

/**
 * Load a checkpoint written by [`setnet_model_save`] or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid handle storage.
 */
enum SetnetStatus setnet_model_load(const char *path, struct SetnetModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum SetnetStatus setnet_model_save(const struct SetnetModel *model, const char *path);

/**
 * Number of trainable scalars.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SetnetStatus setnet_model_param_count(const struct SetnetModel *model, size_t *out);

/**
 * Eval-mode predictions for a dense `n_sets x set_size x features` batch in
 * row-major order. `out` receives `n_sets * output_dim` values.
 *
 * # Safety
 * `inputs` must point to `n_sets * set_size * features` readable doubles
 * and `out` to `out_len` writable doubles.
 */
enum SetnetStatus setnet_model_predict(const struct SetnetModel *model,
                                       const double *inputs,
                                       size_t n_sets,
                                       size_t set_size,
                                       size_t features,
                                       double *out,
                                       size_t out_len);

/**
 * Train in place with a JSON train config. `final_test_loss` (may be null)
 * receives the last epoch's test loss; divergence returns `Diverged`.
 *
 * # Safety
 * Handles must be live, `train_config_json` NUL-terminated.
 */
enum SetnetStatus setnet_model_train(struct SetnetModel *model,
                                     const struct SetnetDataset *train_ds,
                                     const struct SetnetDataset *test_ds,
                                     const char *train_config_json,
                                     double *final_test_loss);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void setnet_model_free(struct SetnetModel *model);

/**
 * Certify every normalization transformation setting; `Ok` when exactly
 * `{}` and `{D}` are both equivariant and batch agnostic.
 */
enum SetnetStatus setnet_check_prop1(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SETNET_H */

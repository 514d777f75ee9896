#ifndef SPGAN_H
#define SPGAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpganStatus {
  SPGAN_STATUS_OK = 0,
  SPGAN_STATUS_INVALID_ARGUMENT = 1,
  SPGAN_STATUS_CHECKPOINT_MISMATCH = 2,
  SPGAN_STATUS_NOT_FOUND = 3,
  SPGAN_STATUS_GONE = 4,
  SPGAN_STATUS_CONFLICT = 5,
  SPGAN_STATUS_PARSE = 6,
  SPGAN_STATUS_IO = 7,
  SPGAN_STATUS_NULL_POINTER = 8,
  SPGAN_STATUS_BUFFER_TOO_SMALL = 9,
  SPGAN_STATUS_PANIC = 10,
} SpganStatus;

/**
 * A generated or loaded point cloud.
 */
typedef struct SpganCloud SpganCloud;

/**
 * A loaded checkpoint together with its fixed prior points.
 */
typedef struct SpganModel SpganModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *spgan_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *spgan_last_error(void);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SpganStatus spgan_model_load(const char *path, struct SpganModel **out);

/**
 * # Safety
 * `model` must come from [`spgan_model_load`] and not be freed twice.
 */
void spgan_model_free(struct SpganModel *model);

/**
 * Points per generated shape, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t spgan_model_num_points(const struct SpganModel *model);

/**
 * Latent code width, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t spgan_model_latent_dim(const struct SpganModel *model);

/**
 * Write the latent code of shape `index` under `seed` (the same codes the
 * CLI `generate` command uses) into `out[0..latent_dim]`.
 *
 * # Safety
 * `out` must hold `len` floats.
 */
enum SpganStatus spgan_model_sample_code(const struct SpganModel *model,
                                         uint64_t seed,
                                         size_t index,
                                         float *out,
                                         size_t len);

/**
 * Generate from one code shared by every prior point.
 *
 * # Safety
 * `z` must hold `dim` floats; `out` must be writable.
 */
enum SpganStatus spgan_model_generate(const struct SpganModel *model,
                                      const float *z,
                                      size_t dim,
                                      struct SpganCloud **out);

/**
 * Generate from a row-major `rows x cols` matrix with one code per prior
 * point.
 *
 * # Safety
 * `codes` must hold `rows * cols` floats; `out` must be writable.
 */
enum SpganStatus spgan_model_generate_codes(const struct SpganModel *model,
                                            const float *codes,
                                            size_t rows,
                                            size_t cols,
                                            struct SpganCloud **out);

/**
 * Per-point RGB in `[0, 1]`, row-major `N x 3`.
 *
 * # Safety
 * `out` must hold `len` floats.
 */
enum SpganStatus spgan_model_colors(const struct SpganModel *model, float *out, size_t len);

/**
 * `out = (1 - alpha) * a + alpha * b` with `alpha` in `[0, 1]`; the
 * endpoints are reproduced exactly.
 *
 * # Safety
 * `a`, `b` and `out` must each hold `dim` floats.
 */
enum SpganStatus spgan_interp_codes(const float *a,
                                    const float *b,
                                    size_t dim,
                                    double alpha,
                                    float *out);

/**
 * Load an SPPC file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SpganStatus spgan_cloud_load(const char *path, struct SpganCloud **out);

/**
 * Write an SPPC file.
 *
 * # Safety
 * `cloud` must be live; `path` must be a NUL-terminated string.
 */
enum SpganStatus spgan_cloud_save(const struct SpganCloud *cloud, const char *path);

/**
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t spgan_cloud_num_points(const struct SpganCloud *cloud);

/**
 * Copy the row-major `N x 3` coordinates into `out`.
 *
 * # Safety
 * `out` must hold `len` floats.
 */
enum SpganStatus spgan_cloud_copy_points(const struct SpganCloud *cloud, float *out, size_t len);

/**
 * # Safety
 * `cloud` must come from this library and not be freed twice.
 */
void spgan_cloud_free(struct SpganCloud *cloud);

/**
 * Symmetric squared Chamfer distance.
 *
 * # Safety
 * `a` and `b` must be live; `out` must be writable.
 */
enum SpganStatus spgan_chamfer(const struct SpganCloud *a, const struct SpganCloud *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPGAN_H */

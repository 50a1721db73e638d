#ifndef MASS_H
#define MASS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MassStatus {
  MASS_STATUS_OK = 0,
  MASS_STATUS_NULL_POINTER = 1,
  MASS_STATUS_INVALID_ARGUMENT = 2,
  MASS_STATUS_SHAPE_MISMATCH = 3,
  MASS_STATUS_DECODE = 4,
  MASS_STATUS_IO = 5,
  MASS_STATUS_PANIC = 6,
} MassStatus;

typedef enum MassCropStrategy {
  MASS_CROP_STRATEGY_UNIFORM = 0,
  MASS_CROP_STRATEGY_INCEPTION = 1,
  MASS_CROP_STRATEGY_FULL = 2,
} MassCropStrategy;

/**
 * RGB image handle.
 */
typedef struct MassImage MassImage;

/**
 * Seeded generator handle.
 */
typedef struct MassRng MassRng;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *mass_last_error_message(void);

struct MassRng *mass_rng_new(uint64_t seed);

/**
 * # Safety
 * `rng` must come from [`mass_rng_new`] and not be used afterwards.
 */
void mass_rng_free(struct MassRng *rng);

/**
 * # Safety
 * `rng` must be a live handle; `out` must be writable.
 */
enum MassStatus mass_rng_next_u64(struct MassRng *rng, uint64_t *out);

/**
 * # Safety
 * `rng` must be a live handle; `out` must be writable.
 */
enum MassStatus mass_rng_next_f64(struct MassRng *rng, double *out);

uint64_t mass_derive_seed(uint64_t root, uint64_t stream_id);

/**
 * Copy `height * width * 3` interleaved RGB bytes into a new image. A NULL
 * `pixels` yields a black image.
 *
 * # Safety
 * `pixels`, when non-null, must point to `len` readable bytes; `out` must be
 * writable.
 */
enum MassStatus mass_image_new(size_t height,
                               size_t width,
                               const uint8_t *pixels,
                               size_t len,
                               struct MassImage **out);

/**
 * # Safety
 * `img` must come from this library and not be used afterwards.
 */
void mass_image_free(struct MassImage *img);

/**
 * # Safety
 * `img` must be a live handle or NULL (which yields 0).
 */
size_t mass_image_height(const struct MassImage *img);

/**
 * # Safety
 * `img` must be a live handle or NULL (which yields 0).
 */
size_t mass_image_width(const struct MassImage *img);

/**
 * Borrowed pointer to the interleaved RGB bytes, valid while `img` lives.
 *
 * # Safety
 * `img` must be a live handle; `len`, when non-null, must be writable.
 */
const uint8_t *mass_image_pixels(const struct MassImage *img, size_t *len);

/**
 * # Safety
 * `bytes` must point to `len` readable bytes; `out` must be writable.
 */
enum MassStatus mass_ppm_decode(const uint8_t *bytes, size_t len, struct MassImage **out);

/**
 * Encode as binary P6. Release the buffer with [`mass_bytes_free`].
 *
 * # Safety
 * `img` must be a live handle; `out` and `out_len` must be writable.
 */
enum MassStatus mass_ppm_encode(const struct MassImage *img, uint8_t **out, size_t *out_len);

/**
 * # Safety
 * `bytes` and `len` must come from [`mass_ppm_encode`].
 */
void mass_bytes_free(uint8_t *bytes, size_t len);

uint32_t mass_transform_count(void);

/**
 * Static NUL-terminated name of transform `kind`, or NULL when out of range.
 */
const char *mass_transform_name(uint32_t kind);

/**
 * Index of the transform called `name`, or -1.
 *
 * # Safety
 * `name` must be a NUL-terminated string or NULL.
 */
int32_t mass_transform_index(const char *name);

/**
 * Apply transform `kind` at `magnitude` in [0, 10], drawing any random
 * parameters from `rng`.
 *
 * # Safety
 * `img` and `rng` must be live handles; `out` must be writable.
 */
enum MassStatus mass_transform_apply(const struct MassImage *img,
                                     uint32_t kind,
                                     double magnitude,
                                     struct MassRng *rng,
                                     struct MassImage **out);

/**
 * Sample `n_ops` transforms over the full search space at `magnitude` and
 * apply them in order.
 *
 * # Safety
 * `img` and `rng` must be live handles; `out` must be writable.
 */
enum MassStatus mass_randaugment_apply(const struct MassImage *img,
                                       uint32_t n_ops,
                                       double magnitude,
                                       struct MassRng *rng,
                                       struct MassImage **out);

/**
 * Build the two training views of `img` from `seed`, identically to the
 * pre-training loop.
 *
 * # Safety
 * `img` must be a live handle; `out_first` and `out_second` must be writable.
 */
enum MassStatus mass_two_views(const struct MassImage *img,
                               enum MassCropStrategy strategy,
                               uint32_t n_ops,
                               double magnitude,
                               size_t side,
                               uint64_t seed,
                               struct MassImage **out_first,
                               struct MassImage **out_second);

/**
 * Mean negative cosine similarity of row-major `rows x cols` matrices. The
 * gradient with respect to `p` is written to `grad_p` when non-null.
 *
 * # Safety
 * `p` and `z` must point to `rows * cols` doubles; `loss` must be writable;
 * `grad_p`, when non-null, must have room for `rows * cols` doubles.
 */
enum MassStatus mass_cosine_loss(const double *p,
                                 const double *z,
                                 size_t rows,
                                 size_t cols,
                                 double *loss,
                                 double *grad_p);

/**
 * Two-view symmetrized loss: predictions `p1`, `p2` against target
 * projections `z2`, `z1`.
 *
 * # Safety
 * All four inputs must point to `rows * cols` doubles; `loss` must be
 * writable; gradient outputs, when non-null, need `rows * cols` doubles.
 */
enum MassStatus mass_symmetrized_loss(const double *p1,
                                      const double *z2,
                                      const double *p2,
                                      const double *z1,
                                      size_t rows,
                                      size_t cols,
                                      double *loss,
                                      double *grad_p1,
                                      double *grad_p2);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MASS_H */

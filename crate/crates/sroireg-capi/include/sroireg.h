#ifndef SROIREG_H
#define SROIREG_H

/* Generated by cbindgen from sroireg-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum SrgStatus {
  SRG_OK = 0,
  SRG_ERR_INVALID_ARGUMENT = 1,
  SRG_ERR_IO = 2,
  SRG_ERR_FORMAT = 3,
  SRG_ERR_DIMENSION = 4,
  SRG_ERR_DEGENERATE_REGION = 5,
  SRG_ERR_INSUFFICIENT_MATCHES = 6,
  SRG_ERR_FIT = 7,
  SRG_ERR_PANIC = 8,
} SrgStatus;

typedef struct SrgImage SrgImage;

typedef struct SrgMask SrgMask;

typedef struct SrgMatches SrgMatches;

/**
 * Matcher parameters; zero-initialize and call `srg_params_default`.
 */
typedef struct SrgParams {
  double delta;
  double omega;
  double theta;
  uintptr_t ransac_iters;
  double ransac_tol;
  uintptr_t ransac_min_inliers;
  uint64_t seed;
} SrgParams;

/**
 * One correspondence between grid points of the two images.
 */
typedef struct SrgMatch {
  uint32_t x_ir;
  uint32_t y_ir;
  uint32_t x_vi;
  uint32_t y_vi;
  double score;
} SrgMatch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *srg_last_error_message(void);

/**
 * Fill `params` with the reference defaults.
 */
enum SrgStatus srg_params_default(struct SrgParams *params);

/**
 * Build an image from row-major 8-bit grayscale pixels.
 *
 * # Safety
 * `gray` must point to `width * height` readable bytes and `out` must
 * be a valid location for a pointer.
 */
enum SrgStatus srg_image_create(uintptr_t width,
                                uintptr_t height,
                                const uint8_t *gray,
                                struct SrgImage **out);

/**
 * Load a PGM or grayscale PNG file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid
 * location for a pointer.
 */
enum SrgStatus srg_image_load(const char *path, struct SrgImage **out);

/**
 * # Safety
 * `img` must be a live handle from this library or null.
 */
uintptr_t srg_image_width(const struct SrgImage *img);

/**
 * # Safety
 * `img` must be a live handle from this library or null.
 */
uintptr_t srg_image_height(const struct SrgImage *img);

/**
 * # Safety
 * `img` must be a handle from this library, not freed before; null is
 * a no-op.
 */
void srg_image_free(struct SrgImage *img);

/**
 * Build a region mask from `width * height` bytes, nonzero meaning
 * inside the region.
 *
 * # Safety
 * `bits` must point to `width * height` readable bytes and `out` must
 * be a valid location for a pointer.
 */
enum SrgStatus srg_mask_create(uintptr_t width,
                               uintptr_t height,
                               const uint8_t *bits,
                               struct SrgMask **out);

/**
 * Load a mask image for a `width` x `height` raster (full-resolution
 * or cell-resolution file).
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid
 * location for a pointer.
 */
enum SrgStatus srg_mask_load(const char *path,
                             uintptr_t width,
                             uintptr_t height,
                             struct SrgMask **out);

/**
 * # Safety
 * `mask` must be a handle from this library, not freed before; null is
 * a no-op.
 */
void srg_mask_free(struct SrgMask *mask);

/**
 * Run the hybrid matcher on two images with their region masks, using
 * the built-in orientation-folded gradient descriptor.
 *
 * # Safety
 * All handles must be live handles from this library and `out` a valid
 * location for a pointer.
 */
enum SrgStatus srg_match(const struct SrgImage *ir,
                         const struct SrgImage *vi,
                         const struct SrgMask *mask_ir,
                         const struct SrgMask *mask_vi,
                         const struct SrgParams *params,
                         struct SrgMatches **out);

/**
 * # Safety
 * `matches` must be a live handle from this library or null.
 */
uintptr_t srg_matches_len(const struct SrgMatches *matches);

/**
 * Warning attached to the match set: 0 none, 1 too few points for
 * RANSAC, 2 no consensus.
 *
 * # Safety
 * `matches` must be a live handle from this library or null.
 */
int32_t srg_matches_warning(const struct SrgMatches *matches);

/**
 * Copy match `index` into `out`.
 *
 * # Safety
 * `matches` must be a live handle from this library and `out` a valid
 * location for an `SrgMatch`.
 */
enum SrgStatus srg_matches_get(const struct SrgMatches *matches,
                               uintptr_t index,
                               struct SrgMatch *out);

/**
 * # Safety
 * `matches` must be a handle from this library, not freed before; null
 * is a no-op.
 */
void srg_matches_free(struct SrgMatches *matches);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SROIREG_H */

#ifndef DRIVEGAZE_H
#define DRIVEGAZE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes returned by every fallible function.
typedef enum DgStatus {
  DG_STATUS_OK = 0,
  DG_STATUS_NULL_POINTER = 1,
  DG_STATUS_INVALID_ARGUMENT = 2,
  DG_STATUS_DIMENSION_MISMATCH = 3,
  DG_STATUS_EMPTY_MAP = 4,
  DG_STATUS_UNDEFINED = 5,
  DG_STATUS_NON_FINITE = 6,
  DG_STATUS_INTERNAL = 7,
} DgStatus;

// Where a projected point landed.
typedef enum DgProjectionStatus {
  DG_PROJECTION_STATUS_IN_FRAME = 0,
  DG_PROJECTION_STATUS_OUT_OF_VIEW = 1,
  DG_PROJECTION_STATUS_BEHIND_CAMERA = 2,
} DgProjectionStatus;

typedef enum DgMaskMode {
  DG_MASK_MODE_HARD = 0,
  DG_MASK_MODE_SOFT = 1,
  DG_MASK_MODE_BASELINE = 2,
} DgMaskMode;

// A pinhole camera: intrinsics plus world-to-camera extrinsics.
typedef struct DgCamera DgCamera;

// A row-major, channel-interleaved image with values in [0, 1].
typedef struct DgImage DgImage;

// A normalized attention map, or an empty one.
typedef struct DgMap DgMap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty after a success.
// The pointer stays valid until the next call into this library on the same thread.
const char *dg_last_error(void);

// Creates a camera with the principal point at the image centre.
// `rotation` holds 9 values, row-major; `translation` holds 3.
//
// # Safety
// `rotation` and `translation` must point to 9 and 3 readable doubles, and
// `out_camera` to writable storage for one pointer.
enum DgStatus dg_camera_new(double focal,
                            uint32_t width,
                            uint32_t height,
                            const double *rotation,
                            const double *translation,
                            struct DgCamera **out_camera);

// # Safety
// `camera` must be null or a handle from `dg_camera_new` not yet freed.
void dg_camera_free(struct DgCamera *camera);

// Projects a world point. The pixel is written unless the point is behind the camera.
//
// # Safety
// `camera` must be a live handle; the output pointers must be writable.
enum DgStatus dg_camera_project(const struct DgCamera *camera,
                                double x,
                                double y,
                                double z,
                                double *out_u,
                                double *out_v,
                                enum DgProjectionStatus *out_status);

// Builds the attention map of `count` world fixations (`xyz`, 3 doubles each)
// seen from `camera`, with Gaussian width `sigma` pixels. A `sigma` of zero
// selects the default of one twentieth of the image width.
//
// # Safety
// `camera` must be a live handle, `xyz` must hold `3 * count` doubles and
// `out_map` must be writable.
enum DgStatus dg_map_from_fixations(const struct DgCamera *camera,
                                    const double *xyz,
                                    size_t count,
                                    double sigma,
                                    struct DgMap **out_map);

// Normalizes `width * height` non-negative row-major weights into a map.
// All-zero weights give an empty map.
//
// # Safety
// `weights` must hold `width * height` doubles and `out_map` must be writable.
enum DgStatus dg_map_from_weights(size_t width,
                                  size_t height,
                                  const double *weights,
                                  struct DgMap **out_map);

// # Safety
// `map` must be null or a live map handle.
void dg_map_free(struct DgMap *map);

// Writes the map's width, height and whether it is empty.
//
// # Safety
// `map` must be a live handle; the output pointers must be writable.
enum DgStatus dg_map_info(const struct DgMap *map,
                          size_t *out_width,
                          size_t *out_height,
                          bool *out_empty);

// Copies the row-major probabilities into `values`, which must hold exactly
// `width * height` doubles.
//
// # Safety
// `map` must be a live handle and `values` must hold `len` writable doubles.
enum DgStatus dg_map_values(const struct DgMap *map, double *values, size_t len);

// KL divergence of `pred` from `truth` with regularizer `epsilon`.
//
// # Safety
// Both maps must be live handles and `out_kl` must be writable.
enum DgStatus dg_kl_divergence(const struct DgMap *truth,
                               const struct DgMap *pred,
                               double epsilon,
                               double *out_kl);

// Pearson correlation between two maps.
//
// # Safety
// Both maps must be live handles and `out_cc` must be writable.
enum DgStatus dg_correlation(const struct DgMap *a, const struct DgMap *b, double *out_cc);

// Wraps `width * height * channels` interleaved values in [0, 1].
//
// # Safety
// `data` must hold that many doubles and `out_image` must be writable.
enum DgStatus dg_image_new(size_t width,
                           size_t height,
                           size_t channels,
                           const double *data,
                           struct DgImage **out_image);

// # Safety
// `image` must be null or a live image handle.
void dg_image_free(struct DgImage *image);

// Copies the interleaved pixel values into `data`, which must hold exactly
// `width * height * channels` doubles.
//
// # Safety
// `image` must be a live handle and `data` must hold `len` writable doubles.
enum DgStatus dg_image_data(const struct DgImage *image, double *data, size_t len);

// Masks `image` with `map`. `lambda` is used by the soft mode only.
//
// # Safety
// `image` and `map` must be live handles and `out_image` must be writable.
enum DgStatus dg_mask(const struct DgImage *image,
                      const struct DgMap *map,
                      enum DgMaskMode mode,
                      double lambda,
                      struct DgImage **out_image);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIVEGAZE_H */

#ifndef TEXMASK_H
#define TEXMASK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TmStatus {
  TM_STATUS_OK = 0,
  TM_STATUS_NULL_POINTER = 1,
  TM_STATUS_IO = 2,
  TM_STATUS_UNSUPPORTED_DTYPE = 3,
  TM_STATUS_SIZE_MISMATCH = 4,
  TM_STATUS_MALFORMED_HEADER = 5,
  TM_STATUS_NON_FINITE = 6,
  TM_STATUS_DIM_MISMATCH = 7,
  TM_STATUS_NOT_DIVISIBLE = 8,
  TM_STATUS_INVALID_CONFIG = 9,
  TM_STATUS_GEOMETRY_OUT_OF_BOUNDS = 10,
  TM_STATUS_NON_FINITE_LOSS = 11,
  TM_STATUS_BUFFER_TOO_SMALL = 12,
  TM_STATUS_INVALID_UTF8 = 13,
  TM_STATUS_PANIC = 14,
} TmStatus;

/**
 * Opaque patch mask.
 */
typedef struct TmPatchMask TmPatchMask;

/**
 * Opaque texture-variation map.
 */
typedef struct TmVariationMap TmVariationMap;

/**
 * Opaque 3D volume.
 */
typedef struct TmVolume TmVolume;

typedef struct TmTvmConfig {
  double alpha;
  size_t stride;
  size_t var_window;
  double sigma;
  /**
   * When true, trailing slices form a smaller last group instead of staying zero.
   */
  bool process_remainder;
  /**
   * When true, normalize cues over the whole volume instead of per slice.
   */
  bool per_volume_normalization;
} TmTvmConfig;

typedef struct TmMaskConfig {
  size_t patch_size;
  double mask_ratio;
  double high_var_fraction;
  double tau;
  /**
   * When true, `tau` is a quantile of the patch scores.
   */
  bool tau_is_quantile;
  uint64_t seed;
} TmMaskConfig;

typedef struct TmMaskCounts {
  size_t n_patches;
  size_t n_high;
  size_t m;
  size_t m_h;
  size_t m_r;
  double tau;
} TmMaskCounts;

typedef struct TmMetrics {
  double dsc;
  double iou;
  /**
   * Valid only when `hd95_defined` is true.
   */
  double hd95;
  bool hd95_defined;
} TmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *tm_last_error(void);

struct TmTvmConfig tm_tvm_config_default(void);

struct TmMaskConfig tm_mask_config_default(void);

/**
 * Copies `dims[0] * dims[1] * dims[2]` floats (axis 0 slowest) into a new volume.
 *
 * # Safety
 * `data` must point to that many floats, `dims` and `spacing` to three values each.
 */
enum TmStatus tm_volume_new(const float *data,
                            const size_t *dims,
                            const double *spacing,
                            struct TmVolume **out);

/**
 * Loads a `.nii` file or a raw payload with its `.hdr` sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum TmStatus tm_volume_load(const char *path, struct TmVolume **out);

/**
 * # Safety
 * `vol` must be a live handle and `path` a NUL-terminated string.
 */
enum TmStatus tm_volume_save(const struct TmVolume *vol, const char *path);

/**
 * # Safety
 * `vol` must be null or a handle not yet freed.
 */
void tm_volume_free(struct TmVolume *vol);

/**
 * # Safety
 * `dims_out` must hold three values and `spacing_out` three (either may be null).
 */
enum TmStatus tm_volume_shape(const struct TmVolume *vol, size_t *dims_out, double *spacing_out);

/**
 * Copies the voxels into `buf`, which must hold at least `len` floats.
 *
 * # Safety
 * `buf` must be writable for `len` floats.
 */
enum TmStatus tm_volume_copy_data(const struct TmVolume *vol, float *buf, size_t len);

/**
 * Noise-free sphere phantom centred in `dims`, with its binary label.
 *
 * # Safety
 * `dims` must hold three values; `vol_out` and `label_out` must be writable.
 */
enum TmStatus tm_phantom_sphere(const size_t *dims,
                                struct TmVolume **vol_out,
                                struct TmVolume **label_out);

/**
 * # Safety
 * `vol` must be a live handle, `cfg` readable (null means defaults), `out` writable.
 */
enum TmStatus tm_variation_map_compute(const struct TmVolume *vol,
                                       const struct TmTvmConfig *cfg,
                                       struct TmVariationMap **out);

/**
 * The map as a new float volume.
 *
 * # Safety
 * `map` must be a live handle and `out` writable.
 */
enum TmStatus tm_variation_map_to_volume(const struct TmVariationMap *map, struct TmVolume **out);

/**
 * # Safety
 * `map` must be null or a handle not yet freed.
 */
void tm_variation_map_free(struct TmVariationMap *map);

/**
 * Pools `map` into patch scores and draws a mask.
 *
 * # Safety
 * `map` must be a live handle, `cfg` readable (null means defaults), `out` writable.
 */
enum TmStatus tm_patch_mask_generate(const struct TmVariationMap *map,
                                     const struct TmMaskConfig *cfg,
                                     struct TmPatchMask **out);

/**
 * # Safety
 * `pm` must be a live handle and `out` writable.
 */
enum TmStatus tm_patch_mask_counts(const struct TmPatchMask *pm, struct TmMaskCounts *out);

/**
 * Writes one byte (0 or 1) per patch, axis 0 slowest.
 *
 * # Safety
 * `buf` must be writable for `len` bytes.
 */
enum TmStatus tm_patch_mask_copy_bits(const struct TmPatchMask *pm, uint8_t *buf, size_t len);

/**
 * Voxel-level mask (1 = masked) with unit spacing.
 *
 * # Safety
 * `pm` must be a live handle and `out` writable.
 */
enum TmStatus tm_patch_mask_expand(const struct TmPatchMask *pm, struct TmVolume **out);

/**
 * # Safety
 * `pm` must be null or a handle not yet freed.
 */
void tm_patch_mask_free(struct TmPatchMask *pm);

/**
 * Dice, IoU (smoothing `eps`) and HD95 in mm using the volumes' spacing.
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum TmStatus tm_metrics(const struct TmVolume *pred,
                         const struct TmVolume *gt,
                         double eps,
                         struct TmMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEXMASK_H */

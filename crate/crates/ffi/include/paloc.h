/* Generated by cbindgen; do not edit. */

#ifndef PALOC_H
#define PALOC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PalocDirection {
  PALOC_DIRECTION_BOTH = 0,
  PALOC_DIRECTION_FORWARD = 1,
  PALOC_DIRECTION_REVERSE = 2,
} PalocDirection;

typedef enum PalocRejectReason {
  PALOC_REJECT_REASON_NONE = 0,
  PALOC_REJECT_REASON_WARMUP = 1,
  PALOC_REJECT_REASON_BELOW_MIN_SCORE = 2,
  PALOC_REJECT_REASON_NOT_UNIQUE = 3,
} PalocRejectReason;

typedef enum PalocStatus {
  PALOC_STATUS_OK = 0,
  PALOC_STATUS_NULL_POINTER = 1,
  PALOC_STATUS_INVALID_ARGUMENT = 2,
  PALOC_STATUS_IO = 3,
  PALOC_STATUS_FORMAT = 4,
  PALOC_STATUS_DIMENSION_MISMATCH = 5,
  PALOC_STATUS_BUFFER_TOO_SMALL = 6,
  PALOC_STATUS_PANIC = 7,
} PalocStatus;

typedef struct PalocDescriptorSet PalocDescriptorSet;

typedef struct PalocMatcher PalocMatcher;

typedef struct PalocConeParams {
  size_t n_q;
  double v_min;
  double v_max;
  size_t uniqueness_window;
  double uniqueness_ratio;
  double min_score;
  enum PalocDirection direction;
} PalocConeParams;

typedef struct PalocDecision {
  size_t query_index;
  bool accepted;
  /**
   * Valid when `accepted`.
   */
  size_t db_index;
  double score;
  /**
   * `None` when `accepted`.
   */
  enum PalocRejectReason reason;
} PalocDecision;

typedef struct PalocCalibration {
  double center_col;
  double center_row;
  double r_min;
  double r_max;
  /**
   * Zero or negative selects the default of 75 degrees.
   */
  double vertical_fov_deg;
  bool flip_radial;
  /**
   * Use the conventional (column, row) center instead of the literal mapping.
   */
  bool centered;
} PalocCalibration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or null. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *paloc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *paloc_version(void);

/**
 * Creates an empty descriptor set.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PalocStatus paloc_descriptor_set_new(struct PalocDescriptorSet **out);

/**
 * Reads a descriptor interchange file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PalocStatus paloc_descriptor_set_read(const char *path, struct PalocDescriptorSet **out);

/**
 * # Safety
 * `set` must come from this library and `path` be NUL-terminated.
 */
enum PalocStatus paloc_descriptor_set_write(const struct PalocDescriptorSet *set, const char *path);

/**
 * Appends a descriptor. The first push fixes the set's dimension.
 *
 * # Safety
 * `values` must point to `dim` doubles.
 */
enum PalocStatus paloc_descriptor_set_push(struct PalocDescriptorSet *set,
                                           const double *values,
                                           size_t dim);

/**
 * # Safety
 * `set` must come from this library; `count` and `dim` may be null.
 */
enum PalocStatus paloc_descriptor_set_shape(const struct PalocDescriptorSet *set,
                                            size_t *count,
                                            size_t *dim);

/**
 * Copies descriptor `index` into `out`, which holds `capacity` doubles.
 *
 * # Safety
 * `out` must be writable for `capacity` doubles.
 */
enum PalocStatus paloc_descriptor_set_get(const struct PalocDescriptorSet *set,
                                          size_t index,
                                          double *out,
                                          size_t capacity);

/**
 * # Safety
 * `set` must come from this library or be null; it is invalid afterwards.
 */
void paloc_descriptor_set_free(struct PalocDescriptorSet *set);

/**
 * Cosine distance between two vectors of length `dim`.
 *
 * # Safety
 * `a` and `b` must point to `dim` doubles.
 */
enum PalocStatus paloc_cosine_distance(const double *a, const double *b, size_t dim, double *out);

struct PalocConeParams paloc_cone_params_default(void);

/**
 * Creates an online matcher over a copy of `database`. A null `params`
 * selects the defaults.
 *
 * # Safety
 * Pointers must be valid or null as documented.
 */
enum PalocStatus paloc_matcher_new(const struct PalocDescriptorSet *database,
                                   const struct PalocConeParams *params,
                                   struct PalocMatcher **out);

/**
 * Feeds the next query descriptor and returns its decision.
 *
 * # Safety
 * `query` must point to `dim` doubles and `out` be writable.
 */
enum PalocStatus paloc_matcher_push(struct PalocMatcher *matcher,
                                    const double *query,
                                    size_t dim,
                                    struct PalocDecision *out);

/**
 * # Safety
 * `matcher` must come from this library or be null.
 */
void paloc_matcher_free(struct PalocMatcher *matcher);

/**
 * Height of the panorama produced for `out_width` columns.
 *
 * # Safety
 * `calib` and `out_height` must be valid pointers.
 */
enum PalocStatus paloc_unwrap_height(const struct PalocCalibration *calib,
                                     size_t out_width,
                                     size_t *out_height);

/**
 * Unwraps an 8-bit grayscale annular image (row-major, `width * height`
 * bytes) into `out`, which must hold `out_width * height` bytes where the
 * height comes from [`paloc_unwrap_height`].
 *
 * # Safety
 * Buffers must be valid for the stated sizes.
 */
enum PalocStatus paloc_unwrap_gray8(const uint8_t *pixels,
                                    size_t width,
                                    size_t height,
                                    const struct PalocCalibration *calib,
                                    size_t out_width,
                                    uint8_t *out,
                                    size_t out_capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PALOC_H */

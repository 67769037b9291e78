#ifndef VRA_H
#define VRA_H

/* Generated from the vra-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code returned by every function in this ABI.
 */
typedef enum VraStatus {
  /**
   * The call succeeded.
   */
  VRA_STATUS_OK = 0,
  /**
   * Invalid configuration or argument values.
   */
  VRA_STATUS_USAGE_ERROR = 1,
  /**
   * Missing, malformed, or inconsistent data.
   */
  VRA_STATUS_DATA_ERROR = 2,
  /**
   * A numeric invariant failed (degenerate input, undefined statistic).
   */
  VRA_STATUS_NUMERIC_ERROR = 3,
  /**
   * A required pointer argument was null.
   */
  VRA_STATUS_NULL_ARGUMENT = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  VRA_STATUS_INVALID_STRING = 5,
  /**
   * An internal invariant was violated; the library state is unchanged.
   */
  VRA_STATUS_INTERNAL_PANIC = 6,
} VraStatus;

/**
 * Opaque handle to a loaded regression-head checkpoint.
 */
typedef struct VraModel VraModel;

/**
 * Opaque handle to an opened feature store.
 */
typedef struct VraStore VraStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *vra_version(void);

/**
 * Message for the most recent failure on the calling thread.
 *
 * The pointer stays valid until the next vra_* call on the same thread.
 */
const char *vra_last_error(void);

/**
 * Open a feature store directory. On success `*out` owns the handle and
 * must be released with `vra_store_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum VraStatus vra_store_open(const char *path, struct VraStore **out);

/**
 * Release a store handle. Null is a no-op.
 *
 * # Safety
 * `store` must be null or a pointer returned by `vra_store_open` that has
 * not been freed yet.
 */
void vra_store_free(struct VraStore *store);

/**
 * Number of videos in the store.
 *
 * # Safety
 * `store` must be a live handle; `out` must be a valid pointer.
 */
enum VraStatus vra_store_video_count(const struct VraStore *store, size_t *out);

/**
 * Per-frame feature dimension of the store.
 *
 * # Safety
 * `store` must be a live handle; `out` must be a valid pointer.
 */
enum VraStatus vra_store_feature_dim(const struct VraStore *store, size_t *out);

/**
 * Load a checkpoint file. On success `*out` owns the handle and must be
 * released with `vra_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum VraStatus vra_model_load(const char *path, struct VraModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer returned by `vra_model_load` that has
 * not been freed yet.
 */
void vra_model_free(struct VraModel *model);

/**
 * Width of the pooled vector the model expects (twice the feature dim).
 *
 * # Safety
 * `model` must be a live handle; `out` must be a valid pointer.
 */
enum VraStatus vra_model_input_dim(const struct VraModel *model, size_t *out);

/**
 * Predict the MOS of one video: `repeats` window draws seeded from
 * `(base_seed, repeat, video_id)`, averaged. Uses the window length the
 * checkpoint was trained with.
 *
 * # Safety
 * `model` and `store` must be live handles, `video_id` a NUL-terminated
 * string, and `out` a valid pointer.
 */
enum VraStatus vra_predict_mos(const struct VraModel *model,
                               const struct VraStore *store,
                               const char *video_id,
                               size_t repeats,
                               uint64_t base_seed,
                               double *out);

/**
 * Pool a row-major `n_frames x dim` frame-feature block into the
 * mean-then-std concatenation. `out` must hold `2 * dim` doubles.
 *
 * # Safety
 * `features` must point at `n_frames * dim` floats and `out` at
 * `2 * dim` doubles.
 */
enum VraStatus vra_pool_concat(const float *features, size_t n_frames, size_t dim, double *out);

/**
 * Score one prediction set against its labels. Any of the three output
 * pointers may be null to skip that statistic.
 *
 * # Safety
 * `predictions` and `labels` must each point at `n` doubles; non-null
 * output pointers must be valid.
 */
enum VraStatus vra_set_metrics(const double *predictions,
                               const double *labels,
                               size_t n,
                               double *out_plcc,
                               double *out_srcc,
                               double *out_rmse);

/**
 * Competition score over test sets: the unweighted mean of
 * `(plcc + srcc) / 2` across the `n_sets` pairs.
 *
 * # Safety
 * `plcc` and `srcc` must each point at `n_sets` doubles; `out` must be a
 * valid pointer.
 */
enum VraStatus vra_final_score(const double *plcc, const double *srcc, size_t n_sets, double *out);

/**
 * Expand a face box about its center by `factor` and clamp it to a
 * `width x height` image. `out` receives x1, y1, x2, y2.
 *
 * # Safety
 * `out` must point at four doubles.
 */
enum VraStatus vra_scale_bbox(double x1,
                              double y1,
                              double x2,
                              double y2,
                              double factor,
                              double width,
                              double height,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VRA_H */

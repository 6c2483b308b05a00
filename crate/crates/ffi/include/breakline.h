#ifndef BREAKLINE_H
#define BREAKLINE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum BlStatus {
  BL_STATUS_OK = 0,
  BL_STATUS_NULL_POINTER = 1,
  BL_STATUS_INVALID_ARGUMENT = 2,
  BL_STATUS_INPUT_ERROR = 3,
  BL_STATUS_INSUFFICIENT_DATA = 4,
  BL_STATUS_FIT_FAILED = 5,
  BL_STATUS_BUFFER_TOO_SMALL = 6,
  BL_STATUS_PANIC = 7,
} BlStatus;

/**
 * Prediction band on a grid of x values.
 */
typedef struct BlBand BlBand;

/**
 * Observations sorted by x.
 */
typedef struct BlDataset BlDataset;

/**
 * Two-breakpoint quantile fit at one tau.
 */
typedef struct BlQuantileFit BlQuantileFit;

/**
 * Two-breakpoint least-squares fit.
 */
typedef struct BlSegmentedFit BlSegmentedFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call on the same thread.
 */
const char *bl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bl_version(void);

/**
 * Copies `n` (x, y) pairs into a new dataset.
 *
 * # Safety
 * `xs` and `ys` must point to `n` readable doubles; `out` must be writable.
 */
enum BlStatus bl_dataset_new(const double *xs, const double *ys, size_t n, struct BlDataset **out);

/**
 * Reads columns `x_column` and `y_column` from a CSV file with a header row.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum BlStatus bl_dataset_load_csv(const char *path,
                                  const char *x_column,
                                  const char *y_column,
                                  struct BlDataset **out);

/**
 * Number of observations; 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live dataset handle.
 */
size_t bl_dataset_len(const struct BlDataset *ds);

/**
 * Copies the sorted observations into caller buffers of length `cap`.
 *
 * # Safety
 * `xs` and `ys` must point to `cap` writable doubles.
 */
enum BlStatus bl_dataset_copy(const struct BlDataset *ds, double *xs, double *ys, size_t cap);

/**
 * # Safety
 * `ds` must be NULL or a handle not yet freed.
 */
void bl_dataset_free(struct BlDataset *ds);

/**
 * Least-squares fit with at least `min_points` observations per segment.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` must be writable.
 */
enum BlStatus bl_plrm_fit(const struct BlDataset *ds,
                          size_t min_points,
                          struct BlSegmentedFit **out);

/**
 * Writes beta0..beta3 to `beta[4]` and the breakpoints to `alpha[2]`;
 * `rss` may be NULL.
 *
 * # Safety
 * `beta` and `alpha` must hold 4 and 2 writable doubles.
 */
enum BlStatus bl_plrm_params(const struct BlSegmentedFit *fit,
                             double *beta,
                             double *alpha,
                             double *rss);

/**
 * Confidence intervals for both breakpoints at `level`.
 *
 * # Safety
 * `lower` and `upper` must hold 2 writable doubles each.
 */
enum BlStatus bl_plrm_breakpoint_ci(const struct BlSegmentedFit *fit,
                                    double level,
                                    double *lower,
                                    double *upper);

/**
 * Parametric prediction band for new observations.
 *
 * # Safety
 * `fit` must come from `ds`; `out` must be writable.
 */
enum BlStatus bl_plrm_band(const struct BlSegmentedFit *fit,
                           const struct BlDataset *ds,
                           double gamma,
                           struct BlBand **out);

/**
 * # Safety
 * `fit` must be NULL or a handle not yet freed.
 */
void bl_plrm_free(struct BlSegmentedFit *fit);

/**
 * Quantile fit at `tau` with at least `min_points` observations per segment.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` must be writable.
 */
enum BlStatus bl_pqrm_fit(const struct BlDataset *ds,
                          double tau,
                          size_t min_points,
                          struct BlQuantileFit **out);

/**
 * Writes beta to `beta[4]`, breakpoints to `alpha[2]`; `objective` may be NULL.
 *
 * # Safety
 * `beta` and `alpha` must hold 4 and 2 writable doubles.
 */
enum BlStatus bl_pqrm_params(const struct BlQuantileFit *fit,
                             double *beta,
                             double *alpha,
                             double *objective);

/**
 * # Safety
 * `fit` must be NULL or a handle not yet freed.
 */
void bl_pqrm_free(struct BlQuantileFit *fit);

/**
 * Loess fit with a residual-bootstrap band from `replicates` resamples.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` must be writable.
 */
enum BlStatus bl_loess_band(const struct BlDataset *ds,
                            double span,
                            size_t degree,
                            size_t robust_iterations,
                            size_t replicates,
                            double gamma,
                            uint64_t seed,
                            struct BlBand **out);

/**
 * Number of grid points in the band; 0 for NULL.
 *
 * # Safety
 * `band` must be NULL or a live band handle.
 */
size_t bl_band_len(const struct BlBand *band);

/**
 * Copies the band into caller buffers of length `cap`. Any buffer may be NULL.
 *
 * # Safety
 * Non-NULL buffers must point to `cap` writable doubles.
 */
enum BlStatus bl_band_copy(const struct BlBand *band,
                           double *x,
                           double *center,
                           double *lower,
                           double *upper,
                           size_t cap);

/**
 * Band area by the midpoint rule on `grid_cells` cells.
 *
 * # Safety
 * `area` must be writable.
 */
enum BlStatus bl_band_area(const struct BlBand *band, size_t grid_cells, double *area);

/**
 * # Safety
 * `band` must be NULL or a handle not yet freed.
 */
void bl_band_free(struct BlBand *band);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BREAKLINE_H */

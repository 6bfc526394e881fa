#ifndef RRHTE_H
#define RRHTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum RrhteStatus {
  RRHTE_STATUS_OK = 0,
  RRHTE_STATUS_NULL_POINTER = 1,
  RRHTE_STATUS_INVALID_ARGUMENT = 2,
  RRHTE_STATUS_DIMENSION = 3,
  RRHTE_STATUS_NUMERIC = 4,
  RRHTE_STATUS_CONVERGENCE = 5,
  RRHTE_STATUS_ILL_CONDITIONED = 6,
  RRHTE_STATUS_BUFFER_TOO_SMALL = 7,
  RRHTE_STATUS_PANIC = 8,
} RrhteStatus;

typedef enum RrhteStrategy {
  RRHTE_STRATEGY_W_METHOD = 0,
  RRHTE_STRATEGY_A_LEARNER = 1,
} RrhteStrategy;

/**
 * Trial data: covariates, outcomes, treatment and propensities.
 */
typedef struct RrhteData RrhteData;

/**
 * A fitted reduced-rank model.
 */
typedef struct RrhteFit RrhteFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds trial data. `x` is `n x p` and `y` is `n x m`, both row-major;
 * `t` holds `-1`/`+1` and `pi` the propensity scores. When `center` is
 * non-zero the covariates are centered first; otherwise they must already
 * be centered.
 *
 * # Safety
 * Array arguments must point to the stated number of doubles and `out` to a
 * writable handle slot.
 */
enum RrhteStatus rrhte_data_new(size_t n,
                                size_t p,
                                size_t m,
                                const double *x,
                                const double *y,
                                const double *t,
                                const double *pi,
                                int32_t center,
                                struct RrhteData **out);

/**
 * # Safety
 * `data` must be null or a handle from [`rrhte_data_new`] not yet freed.
 */
void rrhte_data_free(struct RrhteData *data);

/**
 * Fits the reduced-rank model. A non-positive `tolerance` or zero
 * `max_iter` selects the defaults (`1e-6`, `1000`).
 *
 * # Safety
 * `data` must be a live handle and `out` a writable handle slot.
 */
enum RrhteStatus rrhte_fit(const struct RrhteData *data,
                           enum RrhteStrategy strategy,
                           size_t rank,
                           double tolerance,
                           size_t max_iter,
                           uint64_t seed,
                           double ridge,
                           struct RrhteFit **out);

/**
 * # Safety
 * `fit` must be null or a handle from [`rrhte_fit`] not yet freed.
 */
void rrhte_fit_free(struct RrhteFit *fit);

/**
 * # Safety
 * `fit` must be a live handle; output pointers must be writable.
 */
enum RrhteStatus rrhte_fit_dims(const struct RrhteFit *fit, size_t *p, size_t *m, size_t *r);

/**
 * Copies `W` (`p x r`, row-major) into `out`, which holds `len` doubles.
 *
 * # Safety
 * `fit` must be a live handle and `out` must hold `len` doubles.
 */
enum RrhteStatus rrhte_fit_w(const struct RrhteFit *fit, double *out, size_t len);

/**
 * Copies `V` (`m x r`, row-major) into `out`, which holds `len` doubles.
 *
 * # Safety
 * `fit` must be a live handle and `out` must hold `len` doubles.
 */
enum RrhteStatus rrhte_fit_v(const struct RrhteFit *fit, double *out, size_t len);

/**
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum RrhteStatus rrhte_fit_iterations(const struct RrhteFit *fit, size_t *out);

/**
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum RrhteStatus rrhte_fit_converged(const struct RrhteFit *fit, bool *out);

/**
 * Final objective value.
 *
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum RrhteStatus rrhte_fit_objective(const struct RrhteFit *fit, double *out);

/**
 * Effect matrix `X W V'` for `n x p` covariates `x` (row-major), written
 * row-major into `out` (`n x m`). With `corrected` non-zero the A-learner
 * bias correction is applied using `pi` (length `n`); `pi` is ignored
 * otherwise and may be null.
 *
 * # Safety
 * `fit` must be a live handle; `x`, `pi` and `out` must hold the stated
 * number of doubles.
 */
enum RrhteStatus rrhte_effects(const struct RrhteFit *fit,
                               const double *x,
                               size_t n,
                               size_t p,
                               const double *pi,
                               int32_t corrected,
                               double *out,
                               size_t len);

/**
 * Additive bias correction for a raw A-learner score `u` at propensity `pi`.
 */
double rrhte_bias_term(double u, double pi);

/**
 * Message for the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into this library on the thread.
 */
const char *rrhte_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RRHTE_H */

#ifndef RCMWALK_H
#define RCMWALK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RcmStatus {
  RCM_STATUS_OK = 0,
  RCM_STATUS_NULL_POINTER = 1,
  RCM_STATUS_INVALID_ARGUMENT = 2,
  RCM_STATUS_DIMENSION = 3,
  RCM_STATUS_REGIME = 4,
  RCM_STATUS_RESOURCE = 5,
  RCM_STATUS_INSUFFICIENT_DATA = 6,
  RCM_STATUS_CONFIG = 7,
  RCM_STATUS_IO = 8,
  RCM_STATUS_PANIC = 9,
} RcmStatus;

typedef enum RcmLaw {
  RCM_LAW_PARETO_UNIT = 0,
  /**
   * `param` is the cap.
   */
  RCM_LAW_CAPPED_PARETO = 1,
  /**
   * `param` is the value.
   */
  RCM_LAW_CONSTANT = 2,
} RcmLaw;

typedef enum RcmKernelMode {
  RCM_KERNEL_MODE_RAO_BLACKWELL = 0,
  RCM_KERNEL_MODE_RAO_BLACKWELL_BRIDGE = 1,
  RCM_KERNEL_MODE_DIRECT_GILLESPIE = 2,
  RCM_KERNEL_MODE_FACTORIZED = 3,
} RcmKernelMode;

/**
 * Opaque layered conductance model.
 */
typedef struct RcmModel RcmModel;

/**
 * Opaque scenery field.
 */
typedef struct RcmScenery RcmScenery;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *rcm_version(void);

/**
 * Message of the calling thread's last failure; empty if none. Valid until the next failing call.
 */
const char *rcm_last_error(void);

/**
 * # Safety
 * `out` must be valid for a write.
 */
enum RcmStatus rcm_scenery_new(uint64_t seed,
                               double alpha,
                               size_t dimension,
                               enum RcmLaw law,
                               double param,
                               struct RcmScenery **out);

/**
 * # Safety
 * `s` must come from `rcm_scenery_new` and not be freed twice; null is ignored.
 */
void rcm_scenery_free(struct RcmScenery *s);

/**
 * `z(x)` at the `len` coordinates `x`.
 *
 * # Safety
 * `s` must be a live handle, `x` must point to `len` values and `out` be writable.
 */
enum RcmStatus rcm_scenery_z(const struct RcmScenery *s, const int64_t *x, size_t len, double *out);

/**
 * Free-walk kernel `p_t(0, x)` with jump rate `rate` per direction.
 *
 * # Safety
 * `x` must point to `d` values and `out` be writable.
 */
enum RcmStatus rcm_kernel(size_t d, double t, const int64_t *x, double rate, double *out);

/**
 * Layered model on `Z^{d1+d2}`; the scenery is copied and must have dimension `d2`.
 *
 * # Safety
 * `scenery` must be a live handle and `out` writable.
 */
enum RcmStatus rcm_model_new(size_t d1,
                             size_t d2,
                             const struct RcmScenery *scenery,
                             struct RcmModel **out);

/**
 * # Safety
 * `m` must come from `rcm_model_new` and not be freed twice; null is ignored.
 */
void rcm_model_free(struct RcmModel *m);

/**
 * Monte Carlo `P(X_t = x)` from the origin with `n` samples.
 *
 * # Safety
 * `m` must be live, `x` must point to `len` values, outputs writable.
 */
enum RcmStatus rcm_kernel_estimate(const struct RcmModel *m,
                                   double t,
                                   const int64_t *x,
                                   size_t len,
                                   uint64_t n,
                                   enum RcmKernelMode mode,
                                   uint64_t seed,
                                   double *mean,
                                   double *stderr);

/**
 * Exact `P(X_t = x)` from the origin in the absorbing box `[-radius, radius]^{d1+d2}`.
 *
 * # Safety
 * `m` must be live, `x` must point to `len` values, `out` writable.
 */
enum RcmStatus rcm_exact_prob(const struct RcmModel *m,
                              int64_t radius,
                              double t,
                              const int64_t *x,
                              size_t len,
                              double *out);

/**
 * Exact Green function `g(0, x)` of the walk killed on leaving `[-radius, radius]^{d1+d2}`.
 *
 * # Safety
 * `m` must be live, `x` must point to `len` values, `out` writable.
 */
enum RcmStatus rcm_exact_green(const struct RcmModel *m,
                               int64_t radius,
                               const int64_t *x,
                               size_t len,
                               double *out);

/**
 * Decay exponent `beta` of `P(X_t = 0) = t^{-beta + o(1)}`.
 *
 * # Safety
 * `out` must be writable.
 */
enum RcmStatus rcm_ondiag_exponent(size_t d1, size_t d2, double alpha, double *out);

/**
 * Exponent of `g(0, n e1) = n^{gamma + o(1)}` (negative).
 *
 * # Safety
 * `out` must be writable.
 */
enum RcmStatus rcm_green_exponent(size_t d1, size_t d2, double alpha, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RCMWALK_H */

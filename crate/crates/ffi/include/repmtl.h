#ifndef REPMTL_H
#define REPMTL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RepmtlStatus {
  REPMTL_STATUS_OK = 0,
  REPMTL_STATUS_NULL_POINTER = 1,
  REPMTL_STATUS_INVALID_ARGUMENT = 2,
  REPMTL_STATUS_SHAPE_MISMATCH = 3,
  REPMTL_STATUS_RANK_DEFICIENT = 4,
  REPMTL_STATUS_SINGULAR = 5,
  REPMTL_STATUS_NON_CONVERGENCE = 6,
  REPMTL_STATUS_NUMERICAL_FAILURE = 7,
  REPMTL_STATUS_NO_RANK_DETECTED = 8,
  REPMTL_STATUS_BUFFER_TOO_SMALL = 9,
  REPMTL_STATUS_PANIC = 10,
} RepmtlStatus;

// Values accepted by the `family` parameters.
typedef enum RepmtlFamily {
  REPMTL_FAMILY_LINEAR = 0,
  REPMTL_FAMILY_LOGISTIC = 1,
  // `g(u) = u + bend·tanh(u)`; `family_param` is `bend`.
  REPMTL_FAMILY_TANH = 2,
} RepmtlFamily;

// Result of [`repmtl_mtl_fit`].
typedef struct RepmtlMtlFit RepmtlMtlFit;

// A list of tasks sharing the same number of features.
typedef struct RepmtlTaskSet RepmtlTaskSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or null. The pointer
// stays valid until the next library call on the same thread.
const char *repmtl_last_error(void);

// `√(r(p + ln T))`.
double repmtl_recommended_lambda(size_t r, size_t p, size_t tasks);

// `0.5·√(p + ln T)`.
double repmtl_recommended_gamma(size_t p, size_t tasks);

struct RepmtlTaskSet *repmtl_task_set_new(void);

// # Safety
// `set` must be null or a handle from [`repmtl_task_set_new`] not yet freed.
void repmtl_task_set_free(struct RepmtlTaskSet *set);

// Appends a task with `n x p` design `x` (row-major) and response `y`.
//
// # Safety
// `set` must be a live handle; `x` must hold `n·p` doubles and `y` `n`.
enum RepmtlStatus repmtl_task_set_add(struct RepmtlTaskSet *set,
                                      const double *x,
                                      const double *y,
                                      size_t n,
                                      size_t p);

// # Safety
// `set` must be a live handle and `len` writable.
enum RepmtlStatus repmtl_task_set_len(const struct RepmtlTaskSet *set, size_t *len);

// Runs the two-step multi-task estimator with intrinsic dimension `r` and
// penalty scales `lambda`, `gamma`. On success `*out` receives a new handle.
//
// # Safety
// `set` must be a live handle and `out` writable.
enum RepmtlStatus repmtl_mtl_fit(const struct RepmtlTaskSet *set,
                                 int32_t family,
                                 double family_param,
                                 size_t r,
                                 double lambda,
                                 double gamma,
                                 struct RepmtlMtlFit **out);

// # Safety
// `fit` must be null or a handle from [`repmtl_mtl_fit`] not yet freed.
void repmtl_mtl_fit_free(struct RepmtlMtlFit *fit);

// # Safety
// `fit` must be a live handle; each output pointer may be null.
enum RepmtlStatus repmtl_mtl_fit_dims(const struct RepmtlMtlFit *fit,
                                      size_t *p,
                                      size_t *r,
                                      size_t *tasks);

// # Safety
// `fit` must be a live handle and `converged` writable.
enum RepmtlStatus repmtl_mtl_fit_converged(const struct RepmtlMtlFit *fit, bool *converged);

// Copies the `p x r` center representation, row-major, into `out`.
//
// # Safety
// `fit` must be a live handle and `out` valid for `len` writes.
enum RepmtlStatus repmtl_mtl_fit_center(const struct RepmtlMtlFit *fit, double *out, size_t len);

// Final coefficients of task `task` (`p` values).
//
// # Safety
// `fit` must be a live handle and `out` valid for `len` writes.
enum RepmtlStatus repmtl_mtl_fit_beta(const struct RepmtlMtlFit *fit,
                                      size_t task,
                                      double *out,
                                      size_t len);

// First-step coefficients `A_t θ_t` of task `task` (`p` values).
//
// # Safety
// `fit` must be a live handle and `out` valid for `len` writes.
enum RepmtlStatus repmtl_mtl_fit_step1_beta(const struct RepmtlMtlFit *fit,
                                            size_t task,
                                            double *out,
                                            size_t len);

// Low-dimensional parameter of task `task` (`r` values).
//
// # Safety
// `fit` must be a live handle and `out` valid for `len` writes.
enum RepmtlStatus repmtl_mtl_fit_theta(const struct RepmtlMtlFit *fit,
                                       size_t task,
                                       double *out,
                                       size_t len);

// Transfers the fitted center to a target task with `n0 x p` design `x`.
// Writes `p` coefficients to `beta_out` and, when `theta_out` is not null,
// the `r` low-dimensional coordinates to `theta_out`.
//
// # Safety
// `fit` must be a live handle; `x` must hold `n0·p` doubles, `y` `n0`;
// `beta_out` and `theta_out` must be valid for `beta_len` and `theta_len`
// writes.
enum RepmtlStatus repmtl_transfer(const struct RepmtlMtlFit *fit,
                                  const double *x,
                                  const double *y,
                                  size_t n0,
                                  size_t p,
                                  int32_t family,
                                  double family_param,
                                  double gamma,
                                  double *beta_out,
                                  size_t beta_len,
                                  double *theta_out,
                                  size_t theta_len);

// Estimates the intrinsic dimension of the tasks in `set` by thresholding
// the singular values of their norm-clipped single-task estimates.
//
// `n` is the per-task sample size in the threshold (0 uses the smallest
// task). `n0 > 0` selects the transfer-learning threshold with target size
// `n0`.
//
// # Safety
// `set` must be a live handle and `r_hat` writable.
enum RepmtlStatus repmtl_estimate_rank(const struct RepmtlTaskSet *set,
                                       int32_t family,
                                       double family_param,
                                       double threshold_t1,
                                       double threshold_t2,
                                       double radius,
                                       double r_bar,
                                       size_t n,
                                       size_t n0,
                                       size_t *r_hat);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPMTL_H */

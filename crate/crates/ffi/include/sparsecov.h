#ifndef SPARSECOV_H
#define SPARSECOV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SparsecovStatus {
  SPARSECOV_STATUS_OK = 0,
  SPARSECOV_STATUS_INVALID_INPUT = 1,
  SPARSECOV_STATUS_DIMENSION_MISMATCH = 2,
  SPARSECOV_STATUS_NOT_POSITIVE_SEMI_DEFINITE = 3,
  SPARSECOV_STATUS_RANK_DEFICIENT = 4,
  SPARSECOV_STATUS_NUMERICAL = 5,
  SPARSECOV_STATUS_CONFIG = 6,
  SPARSECOV_STATUS_IO = 7,
  SPARSECOV_STATUS_NULL_POINTER = 8,
  SPARSECOV_STATUS_PANIC = 9,
} SparsecovStatus;

// Two-sample method selector.
typedef enum SparsecovMethod {
  SPARSECOV_METHOD_BS = 0,
  SPARSECOV_METHOD_NEW_BS = 1,
  SPARSECOV_METHOD_CQ = 2,
  SPARSECOV_METHOD_NEW_CQ = 3,
  SPARSECOV_METHOD_BONFERRONI = 4,
  SPARSECOV_METHOD_BH = 5,
} SparsecovMethod;

typedef struct SparsecovModel SparsecovModel;

typedef struct SparsecovSample SparsecovSample;

typedef struct SparsecovThreshold SparsecovThreshold;

typedef struct SparsecovTestResult {
  double statistic;
  // NaN for the marginal methods.
  double z;
  double p_value;
  bool reject;
  // NaN for the non-thresholded methods.
  double tau;
} SparsecovTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len − 1` bytes) and returns the full message length.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
uintptr_t sparsecov_last_error_message(char *buf, uintptr_t len);

// Copies an `n × p` row-major matrix into a new sample handle.
//
// # Safety
// `data` must be valid for `n·p` reads; `out` must be a valid pointer.
enum SparsecovStatus sparsecov_sample_new(const double *data,
                                          uintptr_t n,
                                          uintptr_t p,
                                          bool zero_mean,
                                          struct SparsecovSample **out);

// # Safety
// `s` must be null or a handle from this library not yet freed.
void sparsecov_sample_free(struct SparsecovSample *s);

// # Safety
// `s` must be a live sample handle; `n` and `p` valid pointers.
enum SparsecovStatus sparsecov_sample_dims(const struct SparsecovSample *s,
                                           uintptr_t *n,
                                           uintptr_t *p);

// Built-in model `1..=4` for M1..M4 at dimension `p`.
//
// # Safety
// `out` must be a valid pointer.
enum SparsecovStatus sparsecov_model_builtin(uint32_t which,
                                             uintptr_t p,
                                             struct SparsecovModel **out);

// Custom `p × p` covariance; fails unless symmetric and PSD.
//
// # Safety
// `entries` must be valid for `p·p` reads; `out` a valid pointer.
enum SparsecovStatus sparsecov_model_custom(const double *entries,
                                            uintptr_t p,
                                            struct SparsecovModel **out);

// # Safety
// `m` must be null or a live model handle.
void sparsecov_model_free(struct SparsecovModel *m);

// `‖Σ‖²_F` and its off-diagonal part for a model.
//
// # Safety
// `m` must be a live model handle; output pointers valid.
enum SparsecovStatus sparsecov_model_functionals(const struct SparsecovModel *m,
                                                 double *frobenius_sq,
                                                 double *q_offdiag);

// Draws `n` rows from `N(0, Σ)`.
//
// # Safety
// `m` must be a live model handle; `out` a valid pointer.
enum SparsecovStatus sparsecov_model_sample(const struct SparsecovModel *m,
                                            uintptr_t n,
                                            uint64_t seed,
                                            uint64_t stream,
                                            struct SparsecovSample **out);

// Fixed threshold `tau`.
//
// # Safety
// `out` must be a valid pointer.
enum SparsecovStatus sparsecov_threshold_explicit(double tau, struct SparsecovThreshold **out);

// `τ = c·√(log p / n)`.
//
// # Safety
// `out` must be a valid pointer.
enum SparsecovStatus sparsecov_threshold_practical(double c, struct SparsecovThreshold **out);

// Cross-validated threshold with `m` splits and `j` grid points.
//
// # Safety
// `out` must be a valid pointer.
enum SparsecovStatus sparsecov_threshold_cv(uintptr_t m,
                                            uintptr_t j,
                                            uint64_t seed,
                                            struct SparsecovThreshold **out);

// # Safety
// `t` must be null or a live threshold handle.
void sparsecov_threshold_free(struct SparsecovThreshold *t);

// Resolves a threshold rule on a sample.
//
// # Safety
// Handles must be live; `tau` a valid pointer.
enum SparsecovStatus sparsecov_resolve_threshold(const struct SparsecovSample *s,
                                                 const struct SparsecovThreshold *t,
                                                 double *tau);

// Writes the `p × p` empirical covariance, row-major, into `out`.
//
// # Safety
// `s` must be live; `out` valid for `len` writes.
enum SparsecovStatus sparsecov_empirical_cov(const struct SparsecovSample *s,
                                             double *out,
                                             uintptr_t len);

// `Q(Σ̃_τ)`, the thresholded off-diagonal sum of squares.
//
// # Safety
// `s` must be live; `out` a valid pointer.
enum SparsecovStatus sparsecov_q_offdiag(const struct SparsecovSample *s, double tau, double *out);

// Unbiased estimate of `Σ_i σ_ii²`.
//
// # Safety
// `s` must be live; `out` a valid pointer.
enum SparsecovStatus sparsecov_d_diag(const struct SparsecovSample *s, double *out);

// `max_i Σ_j |σ̃_ij|^r` of the thresholded covariance.
//
// # Safety
// `s` must be live; `out` a valid pointer.
enum SparsecovStatus sparsecov_lr(const struct SparsecovSample *s,
                                  double tau,
                                  double r,
                                  double *out);

// Bai–Saranadasa `B²`.
//
// # Safety
// `s` must be live; `out` a valid pointer.
enum SparsecovStatus sparsecov_bs_b2(const struct SparsecovSample *s, double *out);

// Runs one two-sample test. `threshold` is required for the thresholded
// methods and ignored otherwise.
//
// # Safety
// Sample handles must be live, `threshold` null or live, `out` valid.
enum SparsecovStatus sparsecov_two_sample(const struct SparsecovSample *x1,
                                          const struct SparsecovSample *x2,
                                          enum SparsecovMethod method,
                                          const struct SparsecovThreshold *threshold,
                                          double alpha,
                                          bool two_sided,
                                          struct SparsecovTestResult *out);

// Upper rates for the quadratic and row functionals.
//
// # Safety
// Output pointers must be valid.
enum SparsecovStatus sparsecov_rates(uintptr_t n,
                                     uintptr_t p,
                                     double q,
                                     double radius,
                                     double r,
                                     double *psi_quad,
                                     double *psi_lr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSECOV_H */

/* C ABI for the ctmc-freshness library. Generated by cbindgen; do not edit. */

#ifndef CTMC_FRESHNESS_H
#define CTMC_FRESHNESS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Estimator selector for [`ctmc_freshness_mbf`] and
// [`ctmc_freshness_simulate`].
//
// Parameter usage per kind: `Martingale` ignores all three parameters;
// `Exponential` needs `lambda > 0`; `Erlang` needs `gamma >= 2` and
// `lambda > 0`; `TauMap` needs `tau >= 0` (may be infinite; pass NaN to use
// the chain's MAP switch time); `PMap` derives the full MAP schedule from
// the chain and ignores the parameters.
typedef enum CfEstimatorKind {
  CF_ESTIMATOR_KIND_MARTINGALE = 0,
  CF_ESTIMATOR_KIND_EXPONENTIAL = 1,
  CF_ESTIMATOR_KIND_ERLANG = 2,
  CF_ESTIMATOR_KIND_TAU_MAP = 3,
  CF_ESTIMATOR_KIND_P_MAP = 4,
} CfEstimatorKind;

// Result of every C entry point.
typedef enum CfStatus {
  // Success; out-pointers hold the results.
  CF_STATUS_OK = 0,
  // A required pointer argument was null.
  CF_STATUS_NULL_ARGUMENT = 1,
  // The inputs were rejected (malformed generator, bad estimator
  // parameters, nonpositive rate, unknown preset, ...).
  CF_STATUS_INVALID_ARGUMENT = 2,
  // A solver or simulation failed numerically.
  CF_STATUS_NUMERICAL_FAILURE = 3,
} CfStatus;

// Opaque handle to a validated chain (generator, stationary distribution,
// reversibility flag). Create with [`ctmc_freshness_chain_new`] or
// [`ctmc_freshness_chain_preset`]; release with
// [`ctmc_freshness_chain_free`].
typedef struct CfChain CfChain;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Build a chain from a row-major generator.
//
// `rates` points to `size * size` doubles. Diagonals may either hold the
// usual negative exit rates or be all zero, in which case they are derived
// as negative off-diagonal row sums. `label` is an optional NUL-terminated
// UTF-8 name (null for a default).
//
// # Safety
// `rates` must point to at least `size * size` readable doubles;
// `out_chain` must be a valid writable pointer; `label`, when non-null,
// must be a NUL-terminated string. All pointers must stay valid for the
// duration of the call.
enum CfStatus ctmc_freshness_chain_new(uintptr_t size,
                                       const double *rates,
                                       const char *label,
                                       struct CfChain **out_chain);

// Build one of the bundled example chains by name.
//
// # Safety
// `name` must be a NUL-terminated string and `out_chain` a valid writable
// pointer, both valid for the duration of the call.
enum CfStatus ctmc_freshness_chain_preset(const char *name, struct CfChain **out_chain);

// Release a chain handle. Null is a no-op.
//
// # Safety
// `chain` must be null or a pointer previously returned by a chain
// constructor and not yet freed.
void ctmc_freshness_chain_free(struct CfChain *chain);

// Number of states.
//
// # Safety
// `chain` must be a live chain handle and `out_size` a valid writable
// pointer.
enum CfStatus ctmc_freshness_chain_size(const struct CfChain *chain, uintptr_t *out_size);

// Copy the stationary distribution into `out_pi`.
//
// # Safety
// `chain` must be a live chain handle and `out_pi` must point to at least
// `len >= size` writable doubles.
enum CfStatus ctmc_freshness_chain_stationary(const struct CfChain *chain,
                                              double *out_pi,
                                              uintptr_t len);

// Whether the chain satisfies detailed balance (1) or not (0).
//
// # Safety
// `chain` must be a live chain handle and `out_reversible` a valid writable
// pointer.
enum CfStatus ctmc_freshness_chain_is_reversible(const struct CfChain *chain,
                                                 int32_t *out_reversible);

// Largest MAP transition time of the chain (0 when the MAP estimate never
// switches), scanned over the chain's default window.
//
// # Safety
// `chain` must be a live chain handle and `out_tau` a valid writable
// pointer.
enum CfStatus ctmc_freshness_chain_tau_star(const struct CfChain *chain, double *out_tau);

// Analytic mean binary freshness of an estimator at sampling rate `mu`.
//
// See [`CfEstimatorKind`] for which of `lambda`, `gamma`, `tau` each kind
// reads.
//
// # Safety
// `chain` must be a live chain handle and `out_mbf` a valid writable
// pointer.
enum CfStatus ctmc_freshness_mbf(const struct CfChain *chain,
                                 enum CfEstimatorKind kind,
                                 double lambda,
                                 uint32_t gamma,
                                 double tau,
                                 double mu,
                                 double *out_mbf);

// Monte Carlo estimate of the mean binary freshness under a fixed sampling
// rate, for cross-checking the analytic value.
//
// Pass a negative `warmup` to use the default (1% of the horizon). Writes
// the replication mean to `out_mbf` and its standard error to `out_se`.
//
// # Safety
// `chain` must be a live chain handle; `out_mbf` and `out_se` must be valid
// writable pointers.
enum CfStatus ctmc_freshness_simulate(const struct CfChain *chain,
                                      enum CfEstimatorKind kind,
                                      double lambda,
                                      uint32_t gamma,
                                      double tau,
                                      double mu,
                                      double horizon,
                                      double warmup,
                                      uint64_t seed,
                                      uintptr_t replications,
                                      double *out_mbf,
                                      double *out_se);

// Diagnostic message of the most recent failure on this thread, or null if
// none. The caller owns the returned string and must release it with
// [`ctmc_freshness_string_free`].
char *ctmc_freshness_last_error(void);

// Library version as a NUL-terminated string. The caller owns the returned
// string and must release it with [`ctmc_freshness_string_free`].
char *ctmc_freshness_version(void);

// Release a string returned by this library. Null is a no-op.
//
// # Safety
// `s` must be null or a pointer previously returned by a string-returning
// function of this library and not yet freed.
void ctmc_freshness_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTMC_FRESHNESS_H */

#ifndef ISOPRICE_H
#define ISOPRICE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Quantity requested from [`isoprice_solution_eval`].
typedef enum IsopriceQuantity {
  ISOPRICE_QUANTITY_VALUE = 0,
  ISOPRICE_QUANTITY_DELTA = 1,
  ISOPRICE_QUANTITY_GAMMA = 2,
  ISOPRICE_QUANTITY_THETA = 3,
} IsopriceQuantity;

// Status codes returned by every fallible function.
typedef enum IsopriceStatus {
  ISOPRICE_STATUS_OK = 0,
  ISOPRICE_STATUS_NULL_POINTER = 1,
  ISOPRICE_STATUS_INVALID_UTF8 = 2,
  ISOPRICE_STATUS_CONFIG = 3,
  ISOPRICE_STATUS_INVALID_ARGUMENT = 4,
  ISOPRICE_STATUS_SOLVER = 5,
  ISOPRICE_STATUS_IO = 6,
  ISOPRICE_STATUS_PANIC = 7,
} IsopriceStatus;

// Parsed experiment configuration.
typedef struct IsopriceConfig IsopriceConfig;

// Result of one run: discretization and the stored time levels.
typedef struct IsopriceSolution IsopriceSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` as a
// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
// message length in bytes (excluding the terminator), so a caller can size
// a buffer by passing `len = 0` first.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t isoprice_last_error(char *buf, size_t len);

// Parses a TOML configuration from a NUL-terminated string.
//
// Relative paths inside the configuration (weights files, output
// directory) resolve against the process working directory.
//
// # Safety
// `toml` must be a valid NUL-terminated string and `out` a valid pointer.
enum IsopriceStatus isoprice_config_parse(const char *toml, struct IsopriceConfig **out);

// Loads a configuration file; relative paths resolve against its directory.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum IsopriceStatus isoprice_config_load(const char *path, struct IsopriceConfig **out);

// Releases a configuration. Null is accepted.
//
// # Safety
// `cfg` must be null or a handle from `isoprice_config_parse` /
// `isoprice_config_load` that has not been freed.
void isoprice_config_free(struct IsopriceConfig *cfg);

// Solves the configured model. Zero `elements` or `steps` selects the
// value from the configuration. Only the t = 0 levels are kept.
//
// # Safety
// `cfg` must be a live configuration handle and `out` a valid pointer.
enum IsopriceStatus isoprice_solve(const struct IsopriceConfig *cfg,
                                   size_t elements,
                                   size_t steps,
                                   struct IsopriceSolution **out);

// Releases a solution. Null is accepted.
//
// # Safety
// `sol` must be null or a handle from `isoprice_solve` that has not been
// freed.
void isoprice_solution_free(struct IsopriceSolution *sol);

// Evaluates `quantity` of the first unknown at t = 0 for `n` spot values.
//
// # Safety
// `sol` must be a live solution handle, `s` must point to `n` readable
// doubles and `out` to `n` writable doubles.
enum IsopriceStatus isoprice_solution_eval(const struct IsopriceSolution *sol,
                                           enum IsopriceQuantity quantity,
                                           const double *s,
                                           size_t n,
                                           double *out);

// Number of basis functions (and coefficients) of the solution.
//
// # Safety
// `sol` must be null or a live solution handle.
size_t isoprice_solution_dofs(const struct IsopriceSolution *sol);

// Copies the t = 0 coefficients of the first unknown into `out`, which must
// hold at least [`isoprice_solution_dofs`] doubles.
//
// # Safety
// `sol` must be a live solution handle and `out` must point to `len`
// writable doubles.
enum IsopriceStatus isoprice_solution_coefficients(const struct IsopriceSolution *sol,
                                                   double *out,
                                                   size_t len);

// Closed-form European call under constant-volatility lognormal dynamics.
//
// # Safety
// `out` must be a valid pointer.
enum IsopriceStatus isoprice_bs_call(double s,
                                     double strike,
                                     double rate,
                                     double sigma,
                                     double maturity,
                                     double *out);

// Library version as a static NUL-terminated string.
const char *isoprice_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISOPRICE_H */

#ifndef ASYNCCLIP_H
#define ASYNCCLIP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum AcStatus {
  AC_STATUS_OK = 0,
  AC_STATUS_NULL_POINTER = 1,
  AC_STATUS_INVALID_UTF8 = 2,
  AC_STATUS_PARSE = 3,
  AC_STATUS_CONFIG = 4,
  AC_STATUS_ARGUMENT = 5,
  AC_STATUS_DIMENSION_MISMATCH = 6,
  AC_STATUS_STALENESS_OVERFLOW = 7,
  AC_STATUS_POLICY_VIOLATION = 8,
  AC_STATUS_DIVERGED = 9,
  AC_STATUS_IO = 10,
  AC_STATUS_OUT_OF_RANGE = 11,
  AC_STATUS_BUFFER_TOO_SMALL = 12,
  AC_STATUS_PANIC = 99,
} AcStatus;

/**
 * Opaque run configuration.
 */
typedef struct AcConfig AcConfig;

/**
 * Opaque simulation result; keeps the configuration it was produced from.
 */
typedef struct AcResult AcResult;

/**
 * One row of the per-round metrics.
 */
typedef struct AcRecord {
  uint64_t round;
  double clock;
  double loss;
  double grad_norm_sq;
  double min_grad_norm_sq;
  /**
   * Number of updates consumed by the round.
   */
  size_t delay_count;
} AcRecord;

typedef struct AcSummary {
  uint64_t rounds;
  double initial_loss;
  double final_loss;
  double min_grad_norm_sq;
  double total_sim_time;
  uint64_t dispatched;
  uint64_t consumed;
  uint64_t in_flight;
  uint64_t queued;
} AcSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *ac_version(void);

/**
 * Message of the last failed call on this thread, empty after a success.
 * The pointer stays valid until the next library call on the same thread.
 */
const char *ac_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void ac_string_free(char *s);

/**
 * Parses a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum AcStatus ac_config_from_toml(const char *toml, struct AcConfig **out);

/**
 * Reads a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AcStatus ac_config_load(const char *path, struct AcConfig **out);

/**
 * Applies one `key=value` override (dotted keys reach nested tables). The
 * configuration is unchanged on failure. Cross-field constraints are checked
 * by [`ac_config_validate`] and [`ac_run`], so several overrides may pass
 * through an inconsistent state.
 *
 * # Safety
 * `cfg` must be a live handle; `assignment` a NUL-terminated string.
 */
enum AcStatus ac_config_set(struct AcConfig *cfg, const char *assignment);

/**
 * Checks every constraint `ac_run` would check.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum AcStatus ac_config_validate(const struct AcConfig *cfg);

/**
 * Serializes the configuration back to TOML.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum AcStatus ac_config_to_toml(const struct AcConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be NULL or a handle from this library, not yet freed.
 */
void ac_config_free(struct AcConfig *cfg);

/**
 * Runs the simulation described by `cfg`.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum AcStatus ac_run(const struct AcConfig *cfg, struct AcResult **out);

/**
 * # Safety
 * `res` must be NULL or a handle from this library, not yet freed.
 */
void ac_result_free(struct AcResult *res);

/**
 * Number of recorded rounds, 0 for NULL.
 *
 * # Safety
 * `res` must be NULL or a live handle.
 */
size_t ac_result_rounds(const struct AcResult *res);

/**
 * # Safety
 * `res` must be a live handle; `out` must be writable.
 */
enum AcStatus ac_result_record(const struct AcResult *res, size_t index, struct AcRecord *out);

/**
 * Delays consumed by round `index`, copied into `buf` (capacity `cap`).
 * `out_len` receives the number of delays even when the buffer is too small.
 *
 * # Safety
 * `res` must be a live handle; `buf` must hold `cap` elements; `out_len` writable.
 */
enum AcStatus ac_result_delays(const struct AcResult *res,
                               size_t index,
                               uint64_t *buf,
                               size_t cap,
                               size_t *out_len);

/**
 * Final model `x_T`, same buffer convention as [`ac_result_delays`].
 *
 * # Safety
 * `res` must be a live handle; `buf` must hold `cap` elements; `out_len` writable.
 */
enum AcStatus ac_result_final_x(const struct AcResult *res,
                                double *buf,
                                size_t cap,
                                size_t *out_len);

/**
 * # Safety
 * `res` must be a live handle; `out` must be writable.
 */
enum AcStatus ac_result_summary(const struct AcResult *res, struct AcSummary *out);

/**
 * The same JSON document `ac_result_write` stores as `summary.json`.
 *
 * # Safety
 * `res` must be a live handle; `out` must be writable.
 */
enum AcStatus ac_result_summary_json(const struct AcResult *res, char **out);

/**
 * Writes `rounds.csv` and `summary.json` into `dir`, creating it.
 *
 * # Safety
 * `res` must be a live handle; `dir` a NUL-terminated string.
 */
enum AcStatus ac_result_write(const struct AcResult *res, const char *dir);

/**
 * Coordinate-wise clipping of `len` values from `g` into `out` (which may
 * alias `g`). `u = INFINITY` copies unchanged.
 *
 * # Safety
 * `g` and `out` must each hold `len` elements.
 */
enum AcStatus ac_clip(double u, const double *g, double *out, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASYNCCLIP_H */

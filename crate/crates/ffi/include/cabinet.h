#ifndef CABINET_H
#define CABINET_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CabinetStatus {
  CABINET_STATUS_OK = 0,
  CABINET_STATUS_NULL_POINTER = 1,
  CABINET_STATUS_INVALID_ARGUMENT = 2,
  CABINET_STATUS_INVALID_UTF8 = 3,
  CABINET_STATUS_CONFIG_ERROR = 4,
  CABINET_STATUS_LIVELOCK = 5,
  CABINET_STATUS_AUDIT_FAILED = 6,
  CABINET_STATUS_BUFFER_TOO_SMALL = 7,
  CABINET_STATUS_NOT_RUN = 8,
  CABINET_STATUS_PANIC = 9,
} CabinetStatus;

/**
 * Mirrors the scheme validator's verdict.
 */
typedef enum CabinetViolation {
  CABINET_VIOLATION_NONE = 0,
  CABINET_VIOLATION_BAD_THRESHOLD_RANGE = 1,
  CABINET_VIOLATION_NONPOSITIVE_WEIGHT = 2,
  CABINET_VIOLATION_CT_MISMATCH = 3,
  CABINET_VIOLATION_LIVENESS_I2 = 4,
  CABINET_VIOLATION_SAFETY_I1 = 5,
} CabinetViolation;

/**
 * A generated weight scheme.
 */
typedef struct CabinetScheme CabinetScheme;

/**
 * A configured simulation and, once run, its results.
 */
typedef struct CabinetSim CabinetSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *cabinet_status_str(enum CabinetStatus status);

/**
 * Copies the calling thread's last error message.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes; `needed` may be null.
 */
enum CabinetStatus cabinet_last_error(char *buf, size_t cap, size_t *needed);

/**
 * # Safety
 * `out` must be a valid pointer to write the new handle to.
 */
enum CabinetStatus cabinet_scheme_new(size_t n, size_t t, struct CabinetScheme **out);

/**
 * # Safety
 * `scheme` must come from `cabinet_scheme_new` and not be used afterwards.
 */
void cabinet_scheme_free(struct CabinetScheme *scheme);

/**
 * # Safety
 * `scheme` must be a live handle or null.
 */
size_t cabinet_scheme_len(const struct CabinetScheme *scheme);

/**
 * # Safety
 * `scheme` must be a live handle; `ct` and `ratio` must be writable.
 */
enum CabinetStatus cabinet_scheme_params(const struct CabinetScheme *scheme,
                                         double *ct,
                                         double *ratio);

/**
 * Writes weights heaviest first.
 *
 * # Safety
 * `scheme` must be a live handle; `buf` must hold `cap` doubles.
 */
enum CabinetStatus cabinet_scheme_weights(const struct CabinetScheme *scheme,
                                          double *buf,
                                          size_t cap);

/**
 * # Safety
 * `weights` must hold `len` doubles; `verdict` must be writable.
 */
enum CabinetStatus cabinet_validate_scheme(const double *weights,
                                           size_t len,
                                           double ct,
                                           size_t t,
                                           enum CabinetViolation *verdict);

/**
 * Builds a simulation from a TOML scenario.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum CabinetStatus cabinet_sim_new(const char *toml, struct CabinetSim **out);

/**
 * # Safety
 * `sim` must come from `cabinet_sim_new` and not be used afterwards.
 */
void cabinet_sim_free(struct CabinetSim *sim);

/**
 * Runs (or reruns) the simulation. Results stay available on the handle
 * even when the status reports a livelock or audit failure.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum CabinetStatus cabinet_sim_run(struct CabinetSim *sim);

/**
 * Committed batch rounds, or 0 before a run.
 *
 * # Safety
 * `sim` must be a live handle or null.
 */
size_t cabinet_sim_rounds(const struct CabinetSim *sim);

/**
 * # Safety
 * `sim` must be a live handle; outputs must be writable.
 */
enum CabinetStatus cabinet_sim_latency(const struct CabinetSim *sim,
                                       double *mean_ms,
                                       double *p99_ms);

/**
 * Copies the metrics CSV. Call with a null buffer to learn the size.
 *
 * # Safety
 * `sim` must be a live handle; `buf` must be valid for `cap` bytes.
 */
enum CabinetStatus cabinet_sim_csv(const struct CabinetSim *sim,
                                   char *buf,
                                   size_t cap,
                                   size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CABINET_H */

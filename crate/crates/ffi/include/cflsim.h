/* C ABI for the clustered federated learning simulator. */

#ifndef CFLSIM_H
#define CFLSIM_H

/* Generated by cbindgen from cflsim-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a C ABI call.
 */
typedef enum CflStatus {
  CFL_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CFL_STATUS_NULL_POINTER = 1,
  /**
   * Text input was not valid UTF-8.
   */
  CFL_STATUS_INVALID_UTF8 = 2,
  /**
   * The configuration failed to parse or validate.
   */
  CFL_STATUS_CONFIG_ERROR = 3,
  /**
   * Data files were missing or malformed.
   */
  CFL_STATUS_DATA_ERROR = 4,
  /**
   * An index argument was out of range.
   */
  CFL_STATUS_OUT_OF_RANGE = 5,
  /**
   * The simulation itself failed.
   */
  CFL_STATUS_RUNTIME_ERROR = 6,
} CflStatus;

/**
 * Opaque experiment configuration handle.
 */
typedef struct CflConfig CflConfig;

/**
 * Opaque finished-run handle.
 */
typedef struct CflRunResult CflRunResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null if none.
 *
 * The pointer remains valid until the next failing call on this thread.
 */
const char *cfl_last_error_message(void);

/**
 * Parse a TOML experiment configuration.
 *
 * # Safety
 * `toml_text` must point to a NUL-terminated string and `out` must be a
 * valid pointer; `*out` is written only on success and must be released
 * with [`cfl_config_free`].
 */
enum CflStatus cfl_config_parse(const char *toml_text, struct CflConfig **out);

/**
 * Release a configuration handle. Null is ignored.
 *
 * # Safety
 * `cfg` must be null or a pointer from [`cfl_config_parse`] not yet freed.
 */
void cfl_config_free(struct CflConfig *cfg);

/**
 * Override the lambda mixing weight.
 *
 * # Safety
 * `cfg` must be a live pointer from [`cfl_config_parse`].
 */
enum CflStatus cfl_config_set_lambda(struct CflConfig *cfg, double lambda);

/**
 * Override the master seed.
 *
 * # Safety
 * `cfg` must be a live pointer from [`cfl_config_parse`].
 */
enum CflStatus cfl_config_set_master_seed(struct CflConfig *cfg, uint64_t master_seed);

/**
 * Run the configured experiment to completion.
 *
 * # Safety
 * `cfg` must be a live configuration handle and `out` a valid pointer;
 * `*out` is written only on success and must be released with
 * [`cfl_result_free`].
 */
enum CflStatus cfl_run(const struct CflConfig *cfg, struct CflRunResult **out);

/**
 * Release a run-result handle. Null is ignored.
 *
 * # Safety
 * `result` must be null or a pointer from [`cfl_run`] not yet freed.
 */
void cfl_result_free(struct CflRunResult *result);

/**
 * Number of completed rounds.
 *
 * # Safety
 * `result` must be a live pointer from [`cfl_run`].
 */
size_t cfl_result_rounds(const struct CflRunResult *result);

/**
 * Number of clusters K.
 *
 * # Safety
 * `result` must be a live pointer from [`cfl_run`].
 */
size_t cfl_result_clusters(const struct CflRunResult *result);

/**
 * Number of devices M.
 *
 * # Safety
 * `result` must be a live pointer from [`cfl_run`].
 */
size_t cfl_result_devices(const struct CflRunResult *result);

/**
 * Clustering purity of one round.
 *
 * # Safety
 * `result` must be a live pointer from [`cfl_run`] and `out` valid.
 */
enum CflStatus cfl_result_purity(const struct CflRunResult *result, size_t round, double *out);

/**
 * Mean test accuracy of one round; NaN when evaluation was skipped there.
 *
 * # Safety
 * `result` must be a live pointer from [`cfl_run`] and `out` valid.
 */
enum CflStatus cfl_result_accuracy(const struct CflRunResult *result, size_t round, double *out);

/**
 * Size of one cluster after one round.
 *
 * # Safety
 * `result` must be a live pointer from [`cfl_run`] and `out` valid.
 */
enum CflStatus cfl_result_cluster_size(const struct CflRunResult *result,
                                       size_t round,
                                       size_t cluster,
                                       size_t *out);

/**
 * Mean member train loss of one cluster after one round; NaN when the
 * cluster was empty.
 *
 * # Safety
 * `result` must be a live pointer from [`cfl_run`] and `out` valid.
 */
enum CflStatus cfl_result_cluster_loss(const struct CflRunResult *result,
                                       size_t round,
                                       size_t cluster,
                                       double *out);

/**
 * Final cluster identity of one device.
 *
 * # Safety
 * `result` must be a live pointer from [`cfl_run`] and `out` valid.
 */
enum CflStatus cfl_result_final_identity(const struct CflRunResult *result,
                                         size_t device,
                                         size_t *out);

/**
 * Render the round-records CSV; release with [`cfl_string_free`].
 *
 * # Safety
 * `result` must be a live pointer from [`cfl_run`].
 */
char *cfl_result_csv(const struct CflRunResult *result);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a pointer returned by [`cfl_result_csv`] not yet
 * freed.
 */
void cfl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CFLSIM_H */

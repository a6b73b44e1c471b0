#ifndef COALA_H
#define COALA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  COALA_STATUS_OK = 0,
  COALA_STATUS_NULL_POINTER = 1,
  COALA_STATUS_INVALID_ARGUMENT = 2,
  COALA_STATUS_CONFIG = 3,
  COALA_STATUS_NUMERIC = 4,
  COALA_STATUS_IO = 5,
  COALA_STATUS_BUFFER_TOO_SMALL = 6,
  COALA_STATUS_PANIC = 7,
} CoalaStatus;

typedef enum {
  COALA_ENV_KIND_IPD = 0,
  COALA_ENV_KIND_CLEANUP = 1,
} CoalaEnvKind;

/**
 * A single two-player environment with its own RNG stream.
 */
typedef struct CoalaEnv CoalaEnv;

/**
 * A population trainer plus the JSON of its most recent metrics rows.
 */
typedef struct CoalaTrainer CoalaTrainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must be valid for `len` bytes; `needed` may be NULL.
 */
CoalaStatus coala_last_error(char *buf, size_t len, size_t *needed);

/**
 * Creates an environment. `horizon` is the episode length in steps.
 *
 * # Safety
 * `out` must be a valid pointer; it receives an owned handle.
 */
CoalaStatus coala_env_new(CoalaEnvKind kind, size_t horizon, uint64_t seed, CoalaEnv **out);

/**
 * # Safety
 * `env` must come from [`coala_env_new`] and not be used afterwards.
 */
void coala_env_free(CoalaEnv *env);

/**
 * # Safety
 * `env` must be a live handle.
 */
CoalaStatus coala_env_reset(CoalaEnv *env);

/**
 * # Safety
 * `env` must be a live handle; the outputs must be valid pointers.
 */
CoalaStatus coala_env_dims(const CoalaEnv *env, size_t *obs_dim, size_t *n_actions);

/**
 * Writes `agent`'s observation (0 or 1) into `buf` of `len` floats.
 *
 * # Safety
 * `env` must be a live handle and `buf` valid for `len` floats.
 */
CoalaStatus coala_env_observation(const CoalaEnv *env, size_t agent, float *buf, size_t len);

/**
 * Advances one joint step. `rewards` receives two values.
 *
 * # Safety
 * `env` must be a live handle, `rewards` valid for 2 doubles and `done`
 * a valid pointer.
 */
CoalaStatus coala_env_step(CoalaEnv *env,
                           size_t action0,
                           size_t action1,
                           double *rewards,
                           bool *done);

/**
 * Creates a trainer from TOML config text in the CLI file format
 * (`preset`, `estimator` and any config key). NULL means defaults.
 *
 * # Safety
 * `config` must be NULL or a NUL-terminated string; `out` a valid pointer.
 */
CoalaStatus coala_trainer_new(const char *config, uint64_t seed, CoalaTrainer **out);

/**
 * # Safety
 * `trainer` must come from [`coala_trainer_new`] and not be used afterwards.
 */
void coala_trainer_free(CoalaTrainer *trainer);

/**
 * Runs one training iteration. `finished` is set once the configured
 * iteration count is reached; further steps are rejected.
 *
 * # Safety
 * `trainer` must be a live handle; `finished` may be NULL.
 */
CoalaStatus coala_trainer_step(CoalaTrainer *trainer, bool *finished);

/**
 * Completed iterations.
 *
 * # Safety
 * `trainer` must be a live handle and `out` a valid pointer.
 */
CoalaStatus coala_trainer_iteration(const CoalaTrainer *trainer, size_t *out);

/**
 * JSON array of the metrics rows from the latest step.
 *
 * # Safety
 * `trainer` must be a live handle, `buf` valid for `len` bytes and
 * `needed` NULL or valid.
 */
CoalaStatus coala_trainer_metrics(const CoalaTrainer *trainer,
                                  char *buf,
                                  size_t len,
                                  size_t *needed);

/**
 * Runs an analytic experiment by name and writes its summary as JSON.
 *
 * # Safety
 * `experiment` must be NUL-terminated, `config` NULL or NUL-terminated,
 * `buf` valid for `len` bytes and `needed` NULL or valid.
 */
CoalaStatus coala_analytic_run(const char *experiment,
                               const char *config,
                               uint64_t seed,
                               char *buf,
                               size_t len,
                               size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COALA_H */

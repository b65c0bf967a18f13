#ifndef PGRAD_H
#define PGRAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PgStatus {
  PG_STATUS_OK = 0,
  PG_STATUS_NULL_POINTER = 1,
  PG_STATUS_INVALID_UTF8 = 2,
  PG_STATUS_CONFIG = 3,
  PG_STATUS_CONTRACT = 4,
  PG_STATUS_NUMERICAL = 5,
  PG_STATUS_SCHEMA = 6,
  PG_STATUS_PROPERTY = 7,
  PG_STATUS_IO = 8,
  PG_STATUS_BUFFER_TOO_SMALL = 9,
  PG_STATUS_PANIC = 10,
} PgStatus;

typedef enum PgDrift {
  PG_DRIFT_TRIVIAL = 0,
  PG_DRIFT_PPO = 1,
} PgDrift;

typedef struct PgMdp PgMdp;

/**
 * Policy network plus the observation normalizer it was trained with.
 */
typedef struct PgPolicy PgPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to fit) and returns its full length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t pg_last_error_message(char *buf, size_t len);

/**
 * Fresh policy for the named environment (`"cartpole"` or `"pendulum"`)
 * with swish hidden layers of the given widths.
 *
 * # Safety
 * `env` must be a NUL-terminated string, `hidden` valid for `n_hidden`
 * values and `out` writable.
 */
enum PgStatus pg_policy_new(const char *env,
                            const size_t *hidden,
                            size_t n_hidden,
                            uint64_t seed,
                            struct PgPolicy **out);

/**
 * Loads the policy and normalizer stored in a training checkpoint.
 *
 * # Safety
 * `path` and `env` must be NUL-terminated strings; `out` writable.
 */
enum PgStatus pg_policy_load(const char *path, const char *env, struct PgPolicy **out);

/**
 * # Safety
 * `p` must be null or a handle from this library that is not used again.
 */
void pg_policy_free(struct PgPolicy *p);

/**
 * # Safety
 * `p` must be a live policy handle.
 */
size_t pg_policy_num_params(const struct PgPolicy *p);

/**
 * # Safety
 * `p` must be a live policy handle.
 */
size_t pg_policy_obs_dim(const struct PgPolicy *p);

/**
 * Length of the environment action vector (1 for discrete actions).
 *
 * # Safety
 * `p` must be a live policy handle.
 */
size_t pg_policy_action_dim(const struct PgPolicy *p);

/**
 * Copies the flat parameter vector into `buf`.
 *
 * # Safety
 * `p` must be a live handle and `buf` valid for `len` values.
 */
enum PgStatus pg_policy_get_params(const struct PgPolicy *p, double *buf, size_t len);

/**
 * # Safety
 * `p` must be a live handle and `params` valid for `len` values.
 */
enum PgStatus pg_policy_set_params(struct PgPolicy *p, const double *params, size_t len);

/**
 * Deterministic environment action for a raw observation. The stored
 * normalizer, if any, is applied first.
 *
 * # Safety
 * `p` must be a live handle, `obs` valid for `obs_len` values and
 * `action` for `action_len` values.
 */
enum PgStatus pg_policy_mode_action(const struct PgPolicy *p,
                                    const double *obs,
                                    size_t obs_len,
                                    double *action,
                                    size_t action_len);

/**
 * Mean and standard deviation of raw returns over `episodes` mode-action
 * episodes of a checkpoint.
 *
 * # Safety
 * Strings must be NUL-terminated; `mean` and `std` writable.
 */
enum PgStatus pg_evaluate_checkpoint(const char *path,
                                     const char *env,
                                     size_t episodes,
                                     uint64_t seed,
                                     double *mean,
                                     double *std);

/**
 * Trains one seed from configuration text (`key = value` lines) and
 * writes the best evaluation mean return.
 *
 * # Safety
 * `config` must be NUL-terminated; `best_eval` writable.
 */
enum PgStatus pg_train(const char *config, uint64_t seed, double *best_eval);

/**
 * Built-in tabular MDP: `"two_state"`, `"chain5"` or `"gridworld4x4"`.
 *
 * # Safety
 * `name` must be NUL-terminated; `out` writable.
 */
enum PgStatus pg_mdp_preset(const char *name, struct PgMdp **out);

/**
 * # Safety
 * `m` must be null or a handle from this library that is not used again.
 */
void pg_mdp_free(struct PgMdp *m);

/**
 * # Safety
 * `m` must be a live MDP handle.
 */
size_t pg_mdp_num_states(const struct PgMdp *m);

/**
 * # Safety
 * `m` must be a live MDP handle.
 */
size_t pg_mdp_num_actions(const struct PgMdp *m);

/**
 * Optimal state values into `values` (one per state).
 *
 * # Safety
 * `m` must be a live handle and `values` valid for `len` values.
 */
enum PgStatus pg_mdp_optimal_values(const struct PgMdp *m, double *values, size_t len);

/**
 * Runs `iters` mirror-learning updates from the uniform policy and writes
 * `J(π_n)` for `n = 1..=iters` into `trace`. `delta <= 0` means no KL ball.
 * Fails with `Property` if an update improves less than its drift bound.
 *
 * # Safety
 * `m` must be a live handle and `trace` valid for `len` values.
 */
enum PgStatus pg_mirror_converge(const struct PgMdp *m,
                                 enum PgDrift drift,
                                 double epsilon,
                                 double delta,
                                 size_t iters,
                                 size_t resolution,
                                 double *trace,
                                 size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PGRAD_H */

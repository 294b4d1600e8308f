#ifndef RESACT_H
#define RESACT_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every entry point.
 */
typedef enum ResactStatus {
  RESACT_STATUS_OK = 0,
  RESACT_STATUS_NULL_POINTER = 1,
  RESACT_STATUS_INVALID_ARGUMENT = 2,
  RESACT_STATUS_BUFFER_TOO_SMALL = 3,
  RESACT_STATUS_IO = 4,
  RESACT_STATUS_CHECKPOINT = 5,
  RESACT_STATUS_CONFIG = 6,
  RESACT_STATUS_NUMERICS = 7,
  RESACT_STATUS_NON_FINITE = 8,
  RESACT_STATUS_ENV = 9,
  RESACT_STATUS_PANIC = 10,
} ResactStatus;

/**
 * A logged dataset directory.
 */
typedef struct ResactDataset ResactDataset;

/**
 * A loaded policy checkpoint of any method.
 */
typedef struct ResactModel ResactModel;

/**
 * Off-policy estimate with its diagnostics.
 */
typedef struct ResactNcisReport {
  double ncis;
  double ess;
  double clip_fraction;
  size_t n_trajectories;
  size_t skipped;
} ResactNcisReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *resact_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *resact_version(void);

/**
 * Loads a checkpoint written by any training method. `n_estimators = 0` keeps
 * the stored candidate count.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum ResactStatus resact_model_load(const char *path,
                                    size_t n_estimators,
                                    struct ResactModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`resact_model_load`] and not be freed twice.
 */
void resact_model_free(struct ResactModel *model);

/**
 * Width of one state row, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t resact_model_state_dim(const struct ResactModel *model);

/**
 * Width of one action row, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t resact_model_action_dim(const struct ResactModel *model);

/**
 * Acts on `n_rows` row-major raw states. `out` receives `n_rows × action_dim`
 * values; `out_len` is its capacity in doubles.
 *
 * # Safety
 * `states` must hold `n_rows × state_dim` doubles and `out` `out_len` doubles.
 */
enum ResactStatus resact_model_act(const struct ResactModel *model,
                                   const double *states,
                                   size_t n_rows,
                                   uint64_t seed,
                                   double *out,
                                   size_t out_len);

/**
 * Loads a dataset directory written by `resact gen-data`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum ResactStatus resact_dataset_load(const char *path, struct ResactDataset **out);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` must come from [`resact_dataset_load`] and not be freed twice.
 */
void resact_dataset_free(struct ResactDataset *dataset);

/**
 * Number of logged transitions, or 0 for a null dataset.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t resact_dataset_len(const struct ResactDataset *dataset);

/**
 * Scores `model` on `dataset` against the simulator's logging policy.
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
enum ResactStatus resact_evaluate(const struct ResactModel *model,
                                  const struct ResactDataset *dataset,
                                  double clip_c,
                                  double proxy_std,
                                  uint64_t seed,
                                  struct ResactNcisReport *out);

/**
 * NCIS over raw arrays. Trajectory `k` spans rows
 * `offsets[k] .. offsets[k + 1]`, so `offsets` has `n_trajectories + 1`
 * entries starting at 0 and ending at `n_rows`. Action arrays are row-major
 * `n_rows × action_dim`.
 *
 * # Safety
 * Every pointer must reference the number of values described above.
 */
enum ResactStatus resact_ncis_value(const size_t *offsets,
                                    size_t n_trajectories,
                                    const double *rewards,
                                    const double *logged,
                                    const double *eval_means,
                                    const double *behavior_means,
                                    size_t n_rows,
                                    size_t action_dim,
                                    double clip_c,
                                    double proxy_std,
                                    struct ResactNcisReport *out);

/**
 * Return-time reward level for a gap `delta` given the user's mean gap and
 * the population's 75th percentile.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ResactStatus resact_reward_return_time(double delta,
                                            double delta_avg_user,
                                            double delta_p75,
                                            uint8_t *out);

/**
 * Session-length reward level for `eta` requests given the user's mean.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ResactStatus resact_reward_session_length(size_t eta, double eta_avg_user, uint8_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RESACT_H */

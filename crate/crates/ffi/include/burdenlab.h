#ifndef BURDENLAB_H
#define BURDENLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  BL_STATUS_OK = 0,
  BL_STATUS_NULL_POINTER = 1,
  BL_STATUS_INVALID_ARGUMENT = 2,
  BL_STATUS_CONFIG = 3,
  BL_STATUS_IO = 4,
  BL_STATUS_DOCUMENT = 5,
  BL_STATUS_RUN = 6,
  BL_STATUS_BUFFER_TOO_SMALL = 7,
  BL_STATUS_PANIC = 8,
} BlStatus;

typedef enum {
  BL_PATH_MODE_UNIFORM = 0,
  BL_PATH_MODE_DISCOUNTED = 1,
} BlPathMode;

typedef enum {
  BL_ENFORCEMENT_SOFT = 0,
  BL_ENFORCEMENT_HARD = 1,
} BlEnforcement;

typedef enum {
  BL_SERIES_BURDENS = 0,
  BL_SERIES_LOADS = 1,
  BL_SERIES_RADII = 2,
} BlSeries;

/**
 * A loaded model document.
 */
typedef struct BlModel BlModel;

/**
 * A finished rollout.
 */
typedef struct BlTrajectory BlTrajectory;

typedef struct {
  double w_disp;
  double w_grow;
  double threshold;
  BlPathMode path_mode;
  double alpha;
  double lambda_path;
  double r0;
  double kappa;
  double r_min;
  BlEnforcement enforcement;
} BlConstraintConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *bl_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bl_version(void);

/**
 * Fills `out` with the default constraint configuration.
 *
 * # Safety
 * `out` must be null or point to writable memory for one config.
 */
BlStatus bl_constraint_default(BlConstraintConfig *out);

/**
 * Burden of the transition `h -> h_next`, both of length `n`.
 *
 * # Safety
 * `h` and `h_next` must point to `n` readable doubles, `cfg` to a config
 * and `out` to one writable double.
 */
BlStatus bl_burden(const double *h,
                   const double *h_next,
                   size_t n,
                   const BlConstraintConfig *cfg,
                   double *out);

/**
 * Load after charging `burden` on top of `load_prev`.
 *
 * # Safety
 * `cfg` must point to a config and `out` to one writable double.
 */
BlStatus bl_path_load_update(double load_prev,
                             double burden,
                             const BlConstraintConfig *cfg,
                             double *out);

/**
 * Radius of the feasible ball at the given load.
 *
 * # Safety
 * `cfg` must point to a config and `out` to one writable double.
 */
BlStatus bl_feasible_radius(double load, const BlConstraintConfig *cfg, double *out);

/**
 * Radially projects `h` (length `n`) into the ball of `radius`, writing
 * `n` values to `out`.
 *
 * # Safety
 * `h` must point to `n` readable doubles and `out` to `n` writable ones.
 */
BlStatus bl_project(const double *h, size_t n, double radius, double *out);

/**
 * Loads a model document from `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer slot.
 */
BlStatus bl_model_load(const char *path, BlModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`bl_model_load`] and not be used afterwards.
 */
void bl_model_free(BlModel *model);

/**
 * Hidden size, embedding size and vocabulary of a model.
 *
 * # Safety
 * `model` must be a live handle; the out pointers must be writable.
 */
BlStatus bl_model_dims(const BlModel *model, size_t *hidden, size_t *embed, size_t *vocab);

/**
 * The constraint yardstick stored with the model.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
BlStatus bl_model_constraint(const BlModel *model, BlConstraintConfig *out);

/**
 * Rolls the model over `len` tokens under its own deployment mode,
 * measured against `cfg` (or the model's stored yardstick when null).
 *
 * # Safety
 * `model` must be a live handle, `tokens` must point to `len` values,
 * `cfg` must be null or valid and `out` a writable pointer slot.
 */
BlStatus bl_model_rollout(const BlModel *model,
                          const size_t *tokens,
                          size_t len,
                          const BlConstraintConfig *cfg,
                          BlTrajectory **out);

/**
 * Releases a trajectory. Null is ignored.
 *
 * # Safety
 * `traj` must come from [`bl_model_rollout`] and not be used afterwards.
 */
void bl_trajectory_free(BlTrajectory *traj);

/**
 * Number of steps, or 0 for null.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t bl_trajectory_len(const BlTrajectory *traj);

/**
 * Hidden state after `step` steps (`0..=len`), written to `out`.
 *
 * # Safety
 * `traj` must be a live handle and `out` must hold `capacity` doubles.
 */
BlStatus bl_trajectory_state(const BlTrajectory *traj, size_t step, double *out, size_t capacity);

/**
 * Copies one per-step series (`len` values) into `out`.
 *
 * # Safety
 * `traj` must be a live handle and `out` must hold `capacity` doubles.
 */
BlStatus bl_trajectory_series(const BlTrajectory *traj,
                              BlSeries series,
                              double *out,
                              size_t capacity);

/**
 * Counts of burden and feasibility violations.
 *
 * # Safety
 * `traj` must be a live handle and both out pointers writable.
 */
BlStatus bl_trajectory_violations(const BlTrajectory *traj, size_t *burden, size_t *feasibility);

/**
 * Runs the experiment described by the config file and writes the report
 * files. `out_dir` overrides the output directory when non-null.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out_dir` null or one.
 */
BlStatus bl_experiment_run(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BURDENLAB_H */

#ifndef FLOCKLAB_H
#define FLOCKLAB_H

/* Generated by cbindgen from the flocklab-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Analysis mode executed by [`fl_run`], mirroring the CLI subcommands.
typedef enum {
  FL_RUN_MODE_SIMULATE = 0,
  FL_RUN_MODE_DIAGNOSE = 1,
  FL_RUN_MODE_RECONSTRUCT = 2,
  FL_RUN_MODE_THRESHOLD = 3,
  FL_RUN_MODE_MEANFIELD = 4,
} FlRunMode;

// Result code of every API call.
typedef enum {
  // Success.
  FL_STATUS_OK = 0,
  // A required pointer argument was null.
  FL_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  FL_STATUS_INVALID_UTF8 = 2,
  // An argument violated a documented precondition.
  FL_STATUS_INVALID_ARGUMENT = 3,
  // The operation is defined in a narrower regime than requested.
  FL_STATUS_UNSUPPORTED = 4,
  // Configuration parsing or validation failed.
  FL_STATUS_INVALID_CONFIG = 5,
  // An I/O operation failed.
  FL_STATUS_IO = 6,
  // The integrator produced a non-finite state.
  FL_STATUS_BLOW_UP = 7,
  // A buffer was too small for the requested data.
  FL_STATUS_BUFFER_TOO_SMALL = 8,
  // An index was out of range.
  FL_STATUS_OUT_OF_RANGE = 9,
  // The library panicked; the handle involved must be considered
  // poisoned and only freed.
  FL_STATUS_PANIC = 10,
} FlStatus;

// A validated run configuration (opaque).
typedef struct FlConfig FlConfig;

// A completed in-memory simulation (opaque): the sampled trajectory
// together with the ensemble that produced it.
typedef struct FlTrajectory FlTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static null-terminated string; never freed by the
// caller.
const char *fl_version(void);

// Message describing the most recent failure on the calling thread, as a
// null-terminated string.
//
// The pointer stays valid until the next failing call on the same thread;
// it is never null (initially the empty string) and is never freed by the
// caller.
const char *fl_last_error_message(void);

// Parses a JSON configuration (which may extend a preset via its `preset`
// key) into a validated handle.
//
// # Safety
//
// `json` must be a valid null-terminated string; `out` must be a valid
// pointer. On success `*out` owns the handle and must be released with
// [`fl_config_free`].
FlStatus fl_config_parse(const char *json, FlConfig **out);

// Expands a built-in scenario (for example `"two-body-p2"`) into a
// configuration handle.
//
// # Safety
//
// As [`fl_config_parse`].
FlStatus fl_config_preset(const char *name, FlConfig **out);

// Overrides the seed of a configuration.
//
// # Safety
//
// `config` must be a live handle from this library.
FlStatus fl_config_set_seed(FlConfig *config, uint64_t seed);

// Overrides the artifact directory of a configuration.
//
// # Safety
//
// `config` must be a live handle; `path` a valid null-terminated string.
FlStatus fl_config_set_out_dir(FlConfig *config, const char *path);

// Serializes the expanded configuration as pretty JSON.
//
// # Safety
//
// `config` must be a live handle; `out` a valid pointer. On success `*out`
// is a freshly allocated string released with [`fl_string_free`].
FlStatus fl_config_to_json(const FlConfig *config, char **out);

// Releases a configuration handle; a null pointer is a no-op.
//
// # Safety
//
// `config` must be null or a live handle, and must not be used afterwards.
void fl_config_free(FlConfig *config);

// Executes a configuration in the given mode, writing artifacts under its
// output directory (exactly what the CLI subcommands do). `threads = 0`
// uses one worker per core. On success `*summary` holds the headline
// `key=value` lines joined by newlines.
//
// # Safety
//
// `config` must be a live handle; `summary` a valid pointer. On success
// `*summary` is released with [`fl_string_free`].
FlStatus fl_run(const FlConfig *config, FlRunMode mode, size_t threads, char **summary);

// Integrates a configuration in memory (no files written) and returns the
// sampled trajectory.
//
// # Safety
//
// `config` must be a live handle; `out` a valid pointer. On success `*out`
// owns the handle and must be released with [`fl_trajectory_free`].
FlStatus fl_simulate(const FlConfig *config, FlTrajectory **out);

// Number of atoms in a trajectory's ensemble.
//
// # Safety
//
// `traj` must be a live handle.
size_t fl_trajectory_n_atoms(const FlTrajectory *traj);

// Spatial dimension of a trajectory.
//
// # Safety
//
// `traj` must be a live handle.
size_t fl_trajectory_dim(const FlTrajectory *traj);

// Number of retained samples (the initial and final states always
// included).
//
// # Safety
//
// `traj` must be a live handle.
size_t fl_trajectory_n_samples(const FlTrajectory *traj);

// Copies sample `k` into caller buffers: its time, positions, and
// velocities (`n·dim` doubles each). Either buffer pointer may be null to
// skip that field.
//
// # Safety
//
// `traj` must be a live handle; non-null buffers must hold at least `cap`
// doubles; `t` must be a valid pointer or null.
FlStatus fl_trajectory_sample(const FlTrajectory *traj,
                              size_t k,
                              double *t,
                              double *eta,
                              double *vel,
                              size_t cap);

// Position and velocity diameters of sample `k`.
//
// # Safety
//
// `traj` must be a live handle; `d_eta` and `d_v` must be valid pointers
// or null.
FlStatus fl_trajectory_sample_diameters(const FlTrajectory *traj,
                                        size_t k,
                                        double *d_eta,
                                        double *d_v);

// Releases a trajectory handle; a null pointer is a no-op.
//
// # Safety
//
// `traj` must be null or a live handle, and must not be used afterwards.
void fl_trajectory_free(FlTrajectory *traj);

// Runs the built-in verification suite. On success `*report` holds one
// line per check and `*failed` the number of failed checks (the call
// itself succeeds even when checks fail).
//
// # Safety
//
// `report` and `failed` must be valid pointers. On success `*report` is
// released with [`fl_string_free`].
FlStatus fl_verify(char **report, size_t *failed);

// Releases a string returned by this library; a null pointer is a no-op.
//
// # Safety
//
// `s` must be null or a string obtained from this library, and must not
// be used afterwards.
void fl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOCKLAB_H */

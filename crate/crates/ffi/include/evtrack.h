#ifndef EVTRACK_H
#define EVTRACK_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum EvtStatus {
  EVT_STATUS_OK = 0,
  EVT_STATUS_NULL_POINTER = 1,
  EVT_STATUS_INVALID_ARGUMENT = 2,
  // File missing, unreadable or malformed.
  EVT_STATUS_IO = 3,
  // Configuration text did not parse or failed validation.
  EVT_STATUS_CONFIG = 4,
  // Too few live keypoints; partial outputs were written.
  EVT_STATUS_TRACKING_LOST = 5,
  // Geometry admits no unique pose.
  EVT_STATUS_DEGENERATE = 6,
  // Any other pipeline failure, including a caught panic.
  EVT_STATUS_INTERNAL = 7,
} EvtStatus;

typedef enum EvtDetector {
  EVT_DETECTOR_ORACLE = 0,
  EVT_DETECTOR_DENSITY = 1,
} EvtDetector;

// Run configuration.
typedef struct EvtConfig EvtConfig;

// Timestamped pose sequence.
typedef struct EvtTrajectory EvtTrajectory;

typedef struct EvtMetrics {
  double r_rel_deg_per_s;
  double t_rel_cm_per_s;
  uint64_t m;
  uint64_t delta;
  double dt_mean_s;
} EvtMetrics;

// Object-to-camera transform; `rotation` is row-major.
typedef struct EvtPose {
  uint64_t t_us;
  double rotation[9];
  double translation[3];
} EvtPose;

typedef struct EvtCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} EvtCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after success.
// Valid until the next call into this library on the same thread.
const char *evt_last_error(void);

// Library version as a static NUL-terminated string.
const char *evt_version(void);

// Default configuration (the reference cuboid sweep).
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle pointer.
enum EvtStatus evt_config_default(struct EvtConfig **out);

// Parses and validates TOML configuration text.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum EvtStatus evt_config_from_toml(const char *toml, struct EvtConfig **out);

// Loads and validates a TOML configuration file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EvtStatus evt_config_load(const char *path, struct EvtConfig **out);

// # Safety
// `config` must come from an `evt_config_*` constructor and not be used afterwards.
void evt_config_free(struct EvtConfig *config);

// # Safety
// `config` must be a live handle.
enum EvtStatus evt_config_set_seed(struct EvtConfig *config, uint64_t seed);

// # Safety
// `config` must be a live handle.
enum EvtStatus evt_config_set_delta(struct EvtConfig *config, uint64_t delta);

// # Safety
// `config` must be a live handle.
enum EvtStatus evt_config_set_detector(struct EvtConfig *config, enum EvtDetector detector);

// Sets the directory that receives every output file.
//
// # Safety
// `config` must be a live handle; `dir` a NUL-terminated string.
enum EvtStatus evt_config_set_output(struct EvtConfig *config, const char *dir);

// Renders events and truth into the output directory, plus a manifest.
//
// # Safety
// `config` must be a live handle.
enum EvtStatus evt_simulate(const struct EvtConfig *config);

// Tracks the recorded stream in the output directory. On `TrackingLost`
// the partial pose file and track log are still written.
//
// # Safety
// `config` must be a live handle.
enum EvtStatus evt_track(const struct EvtConfig *config);

// Evaluates the estimate in the output directory against the truth.
//
// # Safety
// `config` must be a live handle; `out` writable or null.
enum EvtStatus evt_evaluate(const struct EvtConfig *config, struct EvtMetrics *out);

// Loads a pose CSV (`t_us,tx,ty,tz,qw,qx,qy,qz`).
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EvtStatus evt_trajectory_load(const char *path, struct EvtTrajectory **out);

// # Safety
// `traj` must come from `evt_trajectory_load` and not be used afterwards.
void evt_trajectory_free(struct EvtTrajectory *traj);

// Number of poses; 0 for a null handle.
//
// # Safety
// `traj` must be null or a live handle.
size_t evt_trajectory_len(const struct EvtTrajectory *traj);

// # Safety
// `traj` must be a live handle; `out` writable.
enum EvtStatus evt_trajectory_get(const struct EvtTrajectory *traj,
                                  size_t index,
                                  struct EvtPose *out);

// Relative pose error of `estimate` against `truth` at step `delta`.
//
// # Safety
// Both handles must be live; `out` writable.
enum EvtStatus evt_trajectory_evaluate(const struct EvtTrajectory *truth,
                                       const struct EvtTrajectory *estimate,
                                       size_t delta,
                                       struct EvtMetrics *out);

// Pose from `n` correspondences: `points_2d` holds `n` (u, v) pairs,
// `points_3d` holds `n` (x, y, z) object-frame triples.
//
// # Safety
// `points_2d` must point to `2n` and `points_3d` to `3n` readable doubles;
// `camera` and `out` must be valid; `rms` may be null.
enum EvtStatus evt_solve_epnp(const double *points_2d,
                              const double *points_3d,
                              size_t n,
                              const struct EvtCamera *camera,
                              struct EvtPose *out,
                              double *rms);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVTRACK_H */

#ifndef KGDELTA_H
#define KGDELTA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KgStatus {
  KG_STATUS_OK = 0,
  KG_STATUS_NULL_POINTER = 1,
  KG_STATUS_INVALID_ARGUMENT = 2,
  KG_STATUS_CONFIG = 3,
  KG_STATUS_NUMERIC = 4,
  KG_STATUS_IO = 5,
  KG_STATUS_PANIC = 6,
} KgStatus;

typedef enum KgClassification {
  KG_CLASSIFICATION_DECAYS = 0,
  KG_CLASSIFICATION_BLOWS_UP = 1,
  KG_CLASSIFICATION_UNDETERMINED = 2,
} KgClassification;

/**
 * Opaque validated run configuration.
 */
typedef struct KgConfig KgConfig;

/**
 * Opaque uniform grid on `[-L, L]`.
 */
typedef struct KgGrid KgGrid;

/**
 * Opaque physical parameters `(p, alpha, gamma)`.
 */
typedef struct KgParams KgParams;

/**
 * Opaque time stepper that owns its state.
 */
typedef struct KgSim KgSim;

typedef struct KgSpectralConstants {
  double nu;
  double nu_plus;
  double nu_minus;
  double c_q;
} KgSpectralConstants;

typedef struct KgShot {
  enum KgClassification classification;
  /**
   * NaN when no certificate fired.
   */
  double certificate_time;
  double e_gamma;
  double k_gamma;
  double t_end;
} KgShot;

typedef struct KgThreshold {
  double lambda_star;
  double bracket_lo;
  double bracket_hi;
  size_t probes;
  bool converged;
  bool monotone;
} KgThreshold;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message on this thread (0 if none).
 */
size_t kg_last_error_length(void);

/**
 * Copies the last error message into `buf` (NUL-terminated, truncated to
 * `cap - 1` bytes) and returns the number of bytes copied.
 */
size_t kg_last_error_message(char *buf, size_t cap);

const char *kg_version(void);

enum KgStatus kg_params_new(double p, double alpha, double gamma, struct KgParams **out);

void kg_params_free(struct KgParams *params);

enum KgStatus kg_grid_new(double half_width, size_t n, struct KgGrid **out);

void kg_grid_free(struct KgGrid *grid);

/**
 * Number of nodes, or 0 for a null handle.
 */
size_t kg_grid_len(const struct KgGrid *grid);

double kg_grid_spacing(const struct KgGrid *grid);

enum KgStatus kg_spectral_constants(const struct KgParams *params, struct KgSpectralConstants *out);

/**
 * Free soliton `Q(x)` for exponent `p`.
 */
enum KgStatus kg_profile_q(double x, double p, double *out);

/**
 * Pinned profile `Q_gamma(x)`; requires `|gamma| < 2`.
 */
enum KgStatus kg_profile_q_gamma(const struct KgParams *params, double x, double *out);

/**
 * Samples the pinned profile on the grid into `out[0..len]`.
 */
enum KgStatus kg_profile_sample_q_gamma(const struct KgParams *params,
                                        const struct KgGrid *grid,
                                        double *out,
                                        size_t len);

/**
 * Reference levels `n_gamma` (general sector) and `r_gamma` (even sector).
 */
enum KgStatus kg_reference_levels(const struct KgParams *params, double *n_gamma, double *r_gamma);

/**
 * Creates a stepper from `(u, v)` at `t = 0`. The handle copies the params
 * and grid, so they may be freed afterwards.
 */
enum KgStatus kg_sim_new(const struct KgParams *params,
                         const struct KgGrid *grid,
                         const double *u,
                         const double *v,
                         size_t len,
                         double dt,
                         struct KgSim **out);

void kg_sim_free(struct KgSim *sim);

/**
 * Advances `steps` levels. On a numeric failure (blowup cap, non-finite
 * values) the simulation stays at the last valid level.
 */
enum KgStatus kg_sim_advance(struct KgSim *sim, uint64_t steps);

double kg_sim_time(const struct KgSim *sim);

/**
 * Copies the current `(u, du/dt)` into caller buffers of length `len`.
 */
enum KgStatus kg_sim_copy_state(const struct KgSim *sim, double *u_out, double *v_out, size_t len);

/**
 * Energy `E_gamma` of the current state.
 */
enum KgStatus kg_sim_energy(const struct KgSim *sim, double *out);

/**
 * Runs `(u, v)` until a blowup or decay certificate fires or `t_max`
 * passes. `even` selects the even-sector level.
 */
enum KgStatus kg_classify(const struct KgParams *params,
                          const struct KgGrid *grid,
                          const double *u,
                          const double *v,
                          size_t len,
                          double dt,
                          double t_max,
                          bool even,
                          struct KgShot *out);

/**
 * Bisects the family `lambda -> (1 + lambda)(Q(. - z) + varsigma Q(. + z))`
 * for the blowup/decay threshold on `[lambda_lo, lambda_hi]`.
 */
enum KgStatus kg_shoot(const struct KgParams *params,
                       const struct KgGrid *grid,
                       uint8_t varsigma,
                       double z,
                       double dt,
                       double lambda_lo,
                       double lambda_hi,
                       double tol,
                       double t_max,
                       struct KgThreshold *out);

/**
 * Parses `key = value` configuration text.
 */
enum KgStatus kg_config_parse(const char *text, struct KgConfig **out);

void kg_config_free(struct KgConfig *cfg);

/**
 * Runs a `kg` subcommand (`profile`, `simulate`, `shoot`, `track`,
 * `variational`, `check`) and stores the process exit code it would have
 * produced in `exit_code`. Returns `Ok` whenever the run itself was
 * attempted; a nonzero exit code leaves its reason in the error slot.
 */
enum KgStatus kg_run(const char *name,
                     const struct KgConfig *cfg,
                     const char *out_dir,
                     int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGDELTA_H */

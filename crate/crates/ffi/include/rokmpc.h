#ifndef ROKMPC_H
#define ROKMPC_H

/* Generated by cbindgen from the rokmpc-ffi sources; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ROK_STATE_DIM 9

#define ROK_INPUT_DIM 3

/**
 * Result codes. Zero is success.
 */
typedef enum RokStatus {
  ROK_STATUS_OK = 0,
  ROK_STATUS_NULL_POINTER = 1,
  ROK_STATUS_INVALID_ARGUMENT = 2,
  ROK_STATUS_DIMENSION_MISMATCH = 3,
  ROK_STATUS_PARSE_ERROR = 4,
  ROK_STATUS_NUMERICAL_FAILURE = 5,
  ROK_STATUS_INFEASIBLE = 6,
  ROK_STATUS_NOT_READY = 7,
  ROK_STATUS_PANIC = 8,
} RokStatus;

/**
 * Receding-horizon tracking controller with an optional robust correction.
 */
typedef struct RokController RokController;

/**
 * An identified predictor. Full models are held with an identity basis.
 */
typedef struct RokModel RokModel;

/**
 * Plant parameters plus integrator settings.
 */
typedef struct RokPlant RokPlant;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *rok_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rok_version(void);

/**
 * Built-in benchmark parameters.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum RokStatus rok_plant_new_default(struct RokPlant **out);

/**
 * Parameters from TOML text with the same keys as the shipped file.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` as in
 * [`rok_plant_new_default`].
 */
enum RokStatus rok_plant_from_toml(const char *toml, struct RokPlant **out);

/**
 * # Safety
 * `plant` must be null or a handle from this library not yet freed.
 */
void rok_plant_free(struct RokPlant *plant);

/**
 * Advances the plant `dt` hours. `w` holds the nine additive disturbances in
 * state order (temperature slots included) and may be null for none.
 *
 * # Safety
 * `x` and `x_next` point to `ROK_STATE_DIM` doubles, `u` to `ROK_INPUT_DIM`,
 * `w` to `ROK_STATE_DIM` or is null.
 */
enum RokStatus rok_plant_step(const struct RokPlant *plant,
                              const double *x,
                              const double *u,
                              const double *w,
                              double dt,
                              double *x_next);

/**
 * Equilibrium state at input `u`, searched from `guess`.
 *
 * # Safety
 * `u` points to `ROK_INPUT_DIM` doubles, `guess` and `x_eq` to
 * `ROK_STATE_DIM`.
 */
enum RokStatus rok_plant_equilibrium(const struct RokPlant *plant,
                                     const double *u,
                                     const double *guess,
                                     double *x_eq);

/**
 * Loads a model JSON as written by `identify`; both the reduced and the
 * full format are accepted.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` writable.
 */
enum RokStatus rok_model_from_json(const char *json, struct RokModel **out);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
void rok_model_free(struct RokModel *model);

/**
 * Latent order `r`; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t rok_model_order(const struct RokModel *model);

/**
 * Lifts and projects a physical state into `q` (`q_len` must equal the
 * order).
 *
 * # Safety
 * `x` points to `ROK_STATE_DIM` doubles, `q` to `q_len`.
 */
enum RokStatus rok_model_encode(const struct RokModel *model,
                                const double *x,
                                double *q,
                                size_t q_len);

/**
 * `q_next = A q + B s(u)` with a physical input `u`.
 *
 * # Safety
 * `q` and `q_next` point to `q_len` doubles, `u` to `ROK_INPUT_DIM`.
 */
enum RokStatus rok_model_step(const struct RokModel *model,
                              const double *q,
                              const double *u,
                              double *q_next,
                              size_t q_len);

/**
 * Physical state reconstructed from `q`.
 *
 * # Safety
 * `q` points to `q_len` doubles, `x` to `ROK_STATE_DIM`.
 */
enum RokStatus rok_model_decode(const struct RokModel *model,
                                const double *q,
                                size_t q_len,
                                double *x);

/**
 * Creates a controller for a copy of `model`. `q_diag` has `order` entries,
 * `r_diag`, `u_min` and `u_max` have `ROK_INPUT_DIM`; `dt` is in hours.
 *
 * # Safety
 * Array pointers must reference the stated number of doubles; `out`
 * writable.
 */
enum RokStatus rok_controller_new(const struct RokModel *model,
                                  size_t horizon,
                                  const double *q_diag,
                                  size_t q_len,
                                  const double *r_diag,
                                  const double *u_min,
                                  const double *u_max,
                                  double dt,
                                  struct RokController **out);

/**
 * # Safety
 * `ctrl` must be null or a live handle.
 */
void rok_controller_free(struct RokController *ctrl);

/**
 * Sets the tracking target `(x_s, u_s)` in physical units.
 *
 * # Safety
 * `x_s` points to `ROK_STATE_DIM` doubles, `u_s` to `ROK_INPUT_DIM`.
 */
enum RokStatus rok_controller_set_target(struct RokController *ctrl,
                                         const double *x_s,
                                         const double *u_s);

/**
 * Enables the robust correction with an LQR gain designed from the
 * controller weights. `spectral_radius` (nullable) receives `rho(A + B K)`.
 *
 * # Safety
 * `spectral_radius` is null or writable.
 */
enum RokStatus rok_controller_enable_robust(struct RokController *ctrl, double *spectral_radius);

/**
 * Disables the robust correction and forgets the warm start.
 *
 * # Safety
 * `ctrl` must be a live handle.
 */
enum RokStatus rok_controller_reset(struct RokController *ctrl);

/**
 * One control step from the measured state `x`. Writes the physical input
 * to apply; `saturated` (nullable) is set to 1 when clipping changed it.
 *
 * # Safety
 * `x` points to `ROK_STATE_DIM` doubles, `u` to `ROK_INPUT_DIM`;
 * `saturated` is null or writable.
 */
enum RokStatus rok_controller_step(struct RokController *ctrl,
                                   const double *x,
                                   double *u,
                                   int32_t *saturated);

/**
 * Copies the `r x r` closed-loop matrix of the robust gain in row-major
 * order. Fails with `NotReady` before [`rok_controller_enable_robust`].
 *
 * # Safety
 * `out` points to `len` doubles.
 */
enum RokStatus rok_controller_closed_loop(const struct RokController *ctrl,
                                          double *out,
                                          size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROKMPC_H */

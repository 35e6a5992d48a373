#ifndef PTC_H
#define PTC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PtcStatus {
  PTC_STATUS_OK = 0,
  PTC_STATUS_NULL_POINTER = 1,
  PTC_STATUS_INVALID_ARGUMENT = 2,
  PTC_STATUS_NUMERICAL = 3,
  PTC_STATUS_IO = 4,
  PTC_STATUS_TRAINING = 5,
  PTC_STATUS_PANIC = 6,
} PtcStatus;

/**
 * A field of loops with their fault factors and the allocator settings.
 */
typedef struct PtcField PtcField;

/**
 * A trained imitation network with its scalers. Read-only after loading,
 * so one handle may serve several threads.
 */
typedef struct PtcModel PtcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *ptc_last_error(void);

/**
 * Library version, a static string.
 */
const char *ptc_version(void);

/**
 * Create a field of `n_loops` loops. `alpha_kopt` and `alpha_hl` hold one
 * factor per loop; either may be null for healthy loops (factor 1).
 *
 * # Safety
 * Non-null arrays hold `n_loops` values; `out` is writable.
 */
enum PtcStatus ptc_field_new(size_t n_loops,
                             const double *alpha_kopt,
                             const double *alpha_hl,
                             double t_in,
                             struct PtcField **out);

/**
 * # Safety
 * `field` is null or came from [`ptc_field_new`] and is not used afterwards.
 */
void ptc_field_free(struct PtcField *field);

/**
 * Number of auction rounds per allocation.
 *
 * # Safety
 * `field` came from [`ptc_field_new`].
 */
enum PtcStatus ptc_field_set_rounds(struct PtcField *field, uint32_t rounds);

/**
 * Run the auction from the split given by `valves_in` and write the new
 * per-loop flows (m³/s) and the valve apertures that realise them. Either
 * output may be null when not needed.
 *
 * # Safety
 * `field` came from [`ptc_field_new`]; arrays hold one value per loop.
 */
enum PtcStatus ptc_field_allocate(const struct PtcField *field,
                                  double t_a,
                                  double i_eff,
                                  double q_total,
                                  const double *valves_in,
                                  double *flows_out,
                                  double *valves_out);

/**
 * Steady outlet temperature of loop `index` at flow `q` (m³/s).
 *
 * # Safety
 * `field` came from [`ptc_field_new`]; `out` is writable.
 */
enum PtcStatus ptc_field_static_outlet(const struct PtcField *field,
                                       size_t index,
                                       double t_a,
                                       double i_eff,
                                       double q,
                                       double *out);

/**
 * Proportional split of `q_total` by `n` valve apertures.
 *
 * # Safety
 * Both arrays hold `n` values.
 */
enum PtcStatus ptc_flows_from_valves(const double *valves,
                                     size_t n,
                                     double q_total,
                                     double *flows_out);

/**
 * Weather-class weighted mean of per-class values.
 */
double ptc_weighted_mean(double sunny, double partly_cloudy, double cloudy);

/**
 * Load a model file.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum PtcStatus ptc_model_load(const char *path, struct PtcModel **out);

/**
 * # Safety
 * `model` is null or came from [`ptc_model_load`] and is not used afterwards.
 */
void ptc_model_free(struct PtcModel *model);

/**
 * Input width of the network, or 0 for a null handle.
 *
 * # Safety
 * `model` is null or came from [`ptc_model_load`].
 */
size_t ptc_model_n_inputs(const struct PtcModel *model);

/**
 * Output width of the network, or 0 for a null handle.
 *
 * # Safety
 * `model` is null or came from [`ptc_model_load`].
 */
size_t ptc_model_n_outputs(const struct PtcModel *model);

/**
 * Valve apertures for one raw controller state.
 *
 * # Safety
 * `model` came from [`ptc_model_load`]; `features` holds `n_features`
 * values and `valves_out` has room for `n_valves`.
 */
enum PtcStatus ptc_model_infer(const struct PtcModel *model,
                               const double *features,
                               size_t n_features,
                               double *valves_out,
                               size_t n_valves);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PTC_H */

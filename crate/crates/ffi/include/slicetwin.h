#ifndef SLICETWIN_H
#define SLICETWIN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StStatus {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_POINTER = 1,
  ST_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The scenario JSON does not parse or fails validation.
   */
  ST_STATUS_SCHEMA = 3,
  ST_STATUS_RUNTIME = 4,
  ST_STATUS_IO = 5,
  ST_STATUS_PANIC = 6,
} StStatus;

/**
 * Opaque digital-twin forecaster.
 */
typedef struct StTwin StTwin;

/**
 * Final-window means of one run.
 */
typedef struct StRunSummary {
  double reward;
  double omega;
  double qos;
  uint64_t federation_scalars;
  uint64_t report_scalars;
} StRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *st_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *st_version(void);

/**
 * Free-space path loss in dB at distance `d_m` metres and carrier `f_mhz`.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum StStatus st_path_loss_db(double d_m, double f_mhz, double *out);

/**
 * Shannon rate in b/s.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum StStatus st_achievable_rate(double w_hz, double p_w, double h2, double noise_w, double *out);

/**
 * Mean M/M/1 delay in seconds, capped at `cap_s` when the queue is unstable.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum StStatus st_average_delay(double rate_bps,
                               double arrival_rate,
                               double packet_bits,
                               double cap_s,
                               double *out);

/**
 * Sigmoid satisfaction of a rate requirement.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum StStatus st_rate_utility(double rate_bps, double r_min_bps, double steepness, double *out);

/**
 * Sigmoid satisfaction of a delay requirement.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum StStatus st_delay_utility(double delay_s, double tau_max_s, double steepness, double *out);

/**
 * Raw (`w / phi`) and clipped (`min(w, phi) / w`) utilization.
 *
 * # Safety
 * `raw` and `clipped` must be null or valid for a write.
 */
enum StStatus st_utilization(uint32_t granted, uint32_t demanded, double *raw, double *clipped);

/**
 * Weighted slice reward.
 *
 * # Safety
 * `out` must be null or valid for a write.
 */
enum StStatus st_reward(double omega, double mean_utility, double lambda, double mu, double *out);

/**
 * Applies RB deltas to `grants` and projects onto the feasible set.
 * `grants`, `caps`, `deltas` and `out_grants` all hold `n` entries; the
 * input grants must already be feasible.
 *
 * # Safety
 * Each pointer must be valid for `n` elements.
 */
enum StStatus st_apply_allocation(const uint32_t *grants,
                                  const uint32_t *caps,
                                  size_t n,
                                  uint32_t total_rbs,
                                  const int64_t *deltas,
                                  uint32_t *out_grants);

/**
 * Demand-proportional split of `total_rbs` over `n` slices.
 *
 * # Safety
 * `demands` and `out_grants` must be valid for `n` elements.
 */
enum StStatus st_netshare_grants(const double *demands,
                                 size_t n,
                                 uint32_t total_rbs,
                                 uint32_t *out_grants);

/**
 * Creates a twin with the default configuration over `nodes` devices and
 * `channels` demand channels, looking back `window` steps.
 *
 * # Safety
 * `out` must be null or valid for a write. Release the handle with
 * [`st_twin_free`].
 */
enum StStatus st_twin_new(size_t nodes,
                          size_t channels,
                          size_t window,
                          uint64_t seed,
                          struct StTwin **out);

/**
 * # Safety
 * `twin` must come from [`st_twin_new`] and not be used afterwards.
 */
void st_twin_free(struct StTwin *twin);

/**
 * Number of trainable parameters.
 *
 * # Safety
 * `twin` must be a live handle; `out` must be null or valid for a write.
 */
enum StStatus st_twin_param_count(const struct StTwin *twin, size_t *out);

/**
 * Sets input scaling from a sample of raw demand values.
 *
 * # Safety
 * `twin` must be a live handle; `values` valid for `len` elements.
 */
enum StStatus st_twin_fit_normalizer(struct StTwin *twin, const double *values, size_t len);

/**
 * Forecasts aggregate demand for step `t_end + 1`. `data` is node-major,
 * then channel-major, then time: `data[(v * channels + z) * window + k]`.
 *
 * # Safety
 * `twin` must be a live handle; `data` valid for `len` elements.
 */
enum StStatus st_twin_predict(const struct StTwin *twin,
                              size_t t_end,
                              const double *data,
                              size_t len,
                              double *out);

/**
 * One online training step towards the observed per-node demand `next`
 * (`next_len` equals the node count, single channel). Writes the pre-step
 * loss to `loss`, which may be null.
 *
 * # Safety
 * `twin` must be a live handle; `data` and `next` valid for their lengths.
 */
enum StStatus st_twin_train_step(struct StTwin *twin,
                                 size_t t_end,
                                 const double *data,
                                 size_t len,
                                 const double *next,
                                 size_t next_len,
                                 double *loss);

/**
 * Checks a scenario JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string.
 */
enum StStatus st_scenario_validate(const char *json);

/**
 * Runs one allocator (`"dt-mafl"`, `"fl-only"`, `"madqn"`, `"netshare"`)
 * on one seed of a scenario given as JSON.
 *
 * # Safety
 * `json` and `allocator` must be NUL-terminated strings; `out` null or
 * valid for a write.
 */
enum StStatus st_run_single(const char *json,
                            const char *allocator,
                            uint64_t seed,
                            struct StRunSummary *out);

/**
 * Runs a whole scenario and writes its outputs under `out_dir`.
 *
 * # Safety
 * `json` and `out_dir` must be NUL-terminated strings.
 */
enum StStatus st_run_experiment(const char *json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLICETWIN_H */

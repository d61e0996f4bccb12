#ifndef SALOHA_H
#define SALOHA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SalohaStatus {
  SALOHA_STATUS_OK = 0,
  SALOHA_STATUS_NULL_POINTER = 1,
  SALOHA_STATUS_INVALID_INPUT = 2,
  SALOHA_STATUS_NO_UNIQUE_STATIONARY = 3,
  SALOHA_STATUS_NULL_EVENT = 4,
  SALOHA_STATUS_TIME_SCALE_VIOLATION = 5,
  SALOHA_STATUS_CONVERGENCE_FAILURE = 6,
  SALOHA_STATUS_SINGULAR = 7,
  SALOHA_STATUS_BRACKET_FAILURE = 8,
  SALOHA_STATUS_POLICY_MISS = 9,
  SALOHA_STATUS_IO = 10,
  SALOHA_STATUS_PARSE = 11,
  SALOHA_STATUS_PANIC = 12,
} SalohaStatus;

/**
 * Simulator mode.
 */
typedef enum SalohaMode {
  SALOHA_MODE_DOMINANT = 0,
  SALOHA_MODE_ACTUAL = 1,
} SalohaMode;

/**
 * Opaque finite-state Markov channel.
 */
typedef struct SalohaChannel SalohaChannel;

/**
 * Opaque synthesized policy for a symmetric network.
 */
typedef struct SalohaPolicy SalohaPolicy;

/**
 * System parameters, field for field as in `saloha::SystemParams`.
 */
typedef struct SalohaParams {
  double tau_s;
  double bandwidth_hz;
  double noise_w_per_hz;
  double lambda_pkts_per_s;
  double mean_packet_bits;
  size_t buffer_pkts;
  size_t users;
} SalohaParams;

/**
 * Network-level simulation results.
 */
typedef struct SalohaMetrics {
  double avg_queue;
  double avg_queue_se;
  double avg_delay_slots;
  double throughput_pkts_per_slot;
  double drop_prob;
  double avg_power_w;
} SalohaMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *saloha_last_error(void);

/**
 * Static description of a status code.
 */
const char *saloha_status_str(enum SalohaStatus status);

/**
 * Build a channel from `j` gains and a row-major `j x j` transition matrix.
 *
 * # Safety
 * `states` must point to `j` doubles and `transition` to `j * j` doubles.
 */
enum SalohaStatus saloha_channel_new(const double *states,
                                     const double *transition,
                                     size_t j,
                                     struct SalohaChannel **out);

/**
 * One of the two bundled ten-state channel models (`user` is 1 or 2).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SalohaStatus saloha_channel_table1(uint32_t user, struct SalohaChannel **out);

/**
 * # Safety
 * `channel` must come from a `saloha_channel_*` constructor and not be freed twice.
 */
void saloha_channel_free(struct SalohaChannel *channel);

/**
 * Number of CSI states, or 0 for a null handle.
 *
 * # Safety
 * `channel` must be null or a live handle.
 */
size_t saloha_channel_len(const struct SalohaChannel *channel);

/**
 * Copy the stationary distribution into `out[0..len]`.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum SalohaStatus saloha_channel_stationary(const struct SalohaChannel *channel,
                                            double *out,
                                            size_t len);

/**
 * LCSIHP threshold for previous threshold `gamma_prev` and feedback `z_prev`
 * (0 = NAK, 1 = ACK, 2 = collision).
 *
 * # Safety
 * `channel` and `out` must be valid.
 */
enum SalohaStatus saloha_lcsihp_threshold(const struct SalohaChannel *channel,
                                          size_t gamma_prev,
                                          uint32_t z_prev,
                                          size_t users,
                                          size_t *out);

/**
 * Closed-form power for a given value difference `delta`.
 *
 * # Safety
 * `params` and `out` must be valid.
 */
enum SalohaStatus saloha_optimal_power(double delta,
                                       double p_ack,
                                       double gain,
                                       double xi,
                                       const struct SalohaParams *params,
                                       double *out);

/**
 * LCSIHP thresholds plus the calibrated optimal power table for a symmetric
 * network of `params.users` users sharing `channel`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SalohaStatus saloha_synthesize_symmetric(const struct SalohaChannel *channel,
                                              const struct SalohaParams *params,
                                              double budget_w,
                                              struct SalohaPolicy **out);

/**
 * # Safety
 * `policy` must come from [`saloha_synthesize_symmetric`] and not be freed twice.
 */
void saloha_policy_free(struct SalohaPolicy *policy);

/**
 * Calibrated Lagrange multiplier and average cost of user `user`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SalohaStatus saloha_policy_multiplier(const struct SalohaPolicy *policy,
                                           size_t user,
                                           double *xi,
                                           double *theta);

/**
 * Look up the transmit power of `user` in local state
 * `(q, h_prev, common, z_prev, h_cur)`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SalohaStatus saloha_policy_power(const struct SalohaPolicy *policy,
                                      size_t user,
                                      size_t q,
                                      size_t h_prev,
                                      size_t common,
                                      uint32_t z_prev,
                                      size_t h_cur,
                                      double *out);

/**
 * Policy in the text table format. Free the string with [`saloha_string_free`].
 *
 * # Safety
 * All pointers must be valid.
 */
enum SalohaStatus saloha_policy_table(const struct SalohaPolicy *policy, char **out);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void saloha_string_free(char *s);

/**
 * Simulate `policy` on the collision channel with every user on `channel`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SalohaStatus saloha_simulate(const struct SalohaPolicy *policy,
                                  const struct SalohaChannel *channel,
                                  const struct SalohaParams *params,
                                  enum SalohaMode mode,
                                  uint64_t horizon,
                                  uint64_t warmup,
                                  uint64_t seed,
                                  struct SalohaMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SALOHA_H */

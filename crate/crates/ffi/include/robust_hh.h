#ifndef ROBUST_HH_H
#define ROBUST_HH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every call.
 */
typedef enum RhhStatus {
  RHH_STATUS_OK = 0,
  RHH_STATUS_NULL_POINTER = 1,
  RHH_STATUS_INVALID_ARGUMENT = 2,
  RHH_STATUS_KEY_OUT_OF_RANGE = 3,
  RHH_STATUS_ESTIMATE_UNAVAILABLE = 4,
  RHH_STATUS_RANDOMNESS_MISMATCH = 5,
  RHH_STATUS_NON_INTEGRAL = 6,
  RHH_STATUS_OVERFLOW = 7,
  RHH_STATUS_SNAPSHOT = 8,
  RHH_STATUS_BUFFER_TOO_SMALL = 9,
  RHH_STATUS_PROTOCOL = 10,
  RHH_STATUS_PANIC = 11,
  RHH_STATUS_INTERNAL = 12,
} RhhStatus;

typedef enum RhhVariant {
  RHH_VARIANT_COUNT_SKETCH = 0,
  RHH_VARIANT_B_COUNT_SKETCH = 1,
} RhhVariant;

/**
 * The DP-robust threshold estimator over its own sketch.
 */
typedef struct RhhRobust RhhRobust;

/**
 * A sketch: randomness plus counters.
 */
typedef struct RhhSketch RhhSketch;

/**
 * Parameters of [`rhh_robust_new`].
 */
typedef struct RhhRobustParams {
  enum RhhVariant variant;
  uint64_t n;
  size_t d;
  size_t b;
  uint64_t sketch_seed;
  double c_a;
  double c_b;
  double tau_a;
  double tau_b;
  /**
   * Per-bucket budget L.
   */
  uint64_t limit;
  /**
   * Planned number of robust queries Q; enters the privacy delta.
   */
  uint64_t max_queries;
  /**
   * Seed of the Laplace noise; ignored when `zero_noise` is set.
   */
  uint64_t noise_seed;
  bool zero_noise;
} RhhRobustParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated, truncated
 * to `cap`). Returns the full message length without the NUL, 0 when there is none.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t rhh_last_error(char *buf, size_t cap);

/**
 * Static name of a status code.
 */
const char *rhh_status_name(enum RhhStatus status);

/**
 * Creates an empty sketch. `exact` selects integer counters.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum RhhStatus rhh_sketch_new(enum RhhVariant variant,
                              uint64_t n,
                              size_t d,
                              size_t b,
                              uint64_t seed,
                              bool exact,
                              struct RhhSketch **out);

/**
 * Releases a sketch; null is ignored.
 *
 * # Safety
 * `sketch` must come from this library and not be used afterwards.
 */
void rhh_sketch_free(struct RhhSketch *sketch);

/**
 * Adds `delta` to coordinate `key`.
 *
 * # Safety
 * `sketch` must be a live handle.
 */
enum RhhStatus rhh_sketch_update(struct RhhSketch *sketch, uint64_t key, double delta);

/**
 * `len` updates at once; stops at the first failing one.
 *
 * # Safety
 * `keys` and `deltas` must each point to `len` readable elements.
 */
enum RhhStatus rhh_sketch_update_batch(struct RhhSketch *sketch,
                                       const uint64_t *keys,
                                       const double *deltas,
                                       size_t len);

/**
 * `dst += alpha * src`; both must share randomness.
 *
 * # Safety
 * Both handles must be live.
 */
enum RhhStatus rhh_sketch_add_scaled(struct RhhSketch *dst,
                                     const struct RhhSketch *src,
                                     double alpha);

/**
 * Median-of-participating-buckets estimate of `key`.
 *
 * # Safety
 * `sketch` must be live and `out` writable.
 */
enum RhhStatus rhh_sketch_estimate(const struct RhhSketch *sketch, uint64_t key, double *out);

/**
 * Top `k` of `candidates` by estimate magnitude. Writes up to `cap` pairs and the
 * count to `out_len`.
 *
 * # Safety
 * `candidates` must hold `len` keys; `out_keys` and `out_values` must hold `cap` elements.
 */
enum RhhStatus rhh_sketch_top_k(const struct RhhSketch *sketch,
                                const uint64_t *candidates,
                                size_t len,
                                size_t k,
                                uint64_t *out_keys,
                                double *out_values,
                                size_t cap,
                                size_t *out_len);

/**
 * Serializes the sketch. With `buf` null or too small, only `out_len` is set and
 * the status is `BufferTooSmall` when `buf` was given.
 *
 * # Safety
 * `buf` must be null or hold `cap` writable bytes.
 */
enum RhhStatus rhh_sketch_serialize(const struct RhhSketch *sketch,
                                    uint8_t *buf,
                                    size_t cap,
                                    size_t *out_len);

/**
 * Restores a sketch from snapshot bytes.
 *
 * # Safety
 * `buf` must hold `len` readable bytes and `out` must be writable.
 */
enum RhhStatus rhh_sketch_deserialize(const uint8_t *buf, size_t len, struct RhhSketch **out);

/**
 * Creates a robust estimator over an empty float sketch.
 *
 * # Safety
 * `params` must be readable and `out` writable.
 */
enum RhhStatus rhh_robust_new(const struct RhhRobustParams *params, struct RhhRobust **out);

/**
 * # Safety
 * `robust` must come from this library and not be used afterwards.
 */
void rhh_robust_free(struct RhhRobust *robust);

/**
 * Adds `delta` to coordinate `key` of the estimator's sketch.
 *
 * # Safety
 * `robust` must be live.
 */
enum RhhStatus rhh_robust_update(struct RhhRobust *robust, uint64_t key, double delta);

/**
 * Robust threshold report over `candidates`. Reported keys go to `out_keys`
 * (ascending), their count to `out_len`.
 *
 * # Safety
 * `candidates` must hold `len` keys and `out_keys` `cap` elements.
 */
enum RhhStatus rhh_robust_report(struct RhhRobust *robust,
                                 const uint64_t *candidates,
                                 size_t len,
                                 uint64_t *out_keys,
                                 size_t cap,
                                 size_t *out_len);

/**
 * Threshold queries answered so far.
 *
 * # Safety
 * `robust` must be live and `out` writable.
 */
enum RhhStatus rhh_robust_queries(const struct RhhRobust *robust, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUST_HH_H */

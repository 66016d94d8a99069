#ifndef LFA_H
#define LFA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LfaAnchorMode {
  LFA_ANCHOR_MODE_EMA = 0,
  LFA_ANCHOR_MODE_FIXED = 1,
  LFA_ANCHOR_MODE_PREV = 2,
} LfaAnchorMode;

typedef enum LfaScope {
  LFA_SCOPE_LOW_ONLY = 0,
  LFA_SCOPE_HIGH_ONLY = 1,
  LFA_SCOPE_BOTH = 2,
} LfaScope;

/**
 * Result code of every fallible call. Codes 2 to 6 match the exit codes of
 * the `lfa` command.
 */
typedef enum LfaStatus {
  LFA_STATUS_OK = 0,
  LFA_STATUS_NULL_POINTER = 1,
  LFA_STATUS_FORMAT = 2,
  LFA_STATUS_NUMERIC = 3,
  LFA_STATUS_IO = 4,
  LFA_STATUS_SESSION = 5,
  LFA_STATUS_ADAPTER = 6,
  LFA_STATUS_PANIC = 7,
} LfaStatus;

/**
 * Alignment state carried across turns.
 */
typedef struct LfaAligner LfaAligner;

/**
 * A C×H×W float32 latent.
 */
typedef struct LfaTensor LfaTensor;

typedef struct LfaAlignmentConfig {
  /**
   * Odd box filter window.
   */
  size_t window;
  double alpha_mu;
  double alpha_sigma;
  double epsilon;
  enum LfaAnchorMode anchor_mode;
  enum LfaScope scope;
  bool allow_zero_sigma;
} LfaAlignmentConfig;

typedef struct LfaMetrics {
  double l1;
  double l2;
  double ssim;
} LfaMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *lfa_last_error_message(void);

const char *lfa_version(void);

/**
 * Default settings: window 9, α_μ 0.95, α_σ 0.85, ε 1e-5, ema, low band.
 */
struct LfaAlignmentConfig lfa_alignment_config_default(void);

/**
 * Copies `channels·height·width` floats from `data` into a new tensor.
 *
 * # Safety
 * `data` must point to that many readable floats; `out` must be writable.
 */
enum LfaStatus lfa_tensor_new(size_t channels,
                              size_t height,
                              size_t width,
                              const float *data,
                              struct LfaTensor **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LfaStatus lfa_tensor_load(const char *path, struct LfaTensor **out);

/**
 * # Safety
 * `tensor` must come from this library; `path` must be NUL-terminated.
 */
enum LfaStatus lfa_tensor_save(const struct LfaTensor *tensor, const char *path);

/**
 * # Safety
 * `tensor` must come from this library; the out pointers must be writable.
 */
enum LfaStatus lfa_tensor_shape(const struct LfaTensor *tensor,
                                size_t *channels,
                                size_t *height,
                                size_t *width);

/**
 * Read-only view of the values in channel, row, column order; null for a
 * null handle. Valid while the tensor lives.
 *
 * # Safety
 * `tensor` must be null or come from this library.
 */
const float *lfa_tensor_data(const struct LfaTensor *tensor);

/**
 * Number of values; 0 for a null handle.
 *
 * # Safety
 * `tensor` must be null or come from this library.
 */
size_t lfa_tensor_len(const struct LfaTensor *tensor);

/**
 * # Safety
 * `tensor` must be null or come from this library and not be used again.
 */
void lfa_tensor_free(struct LfaTensor *tensor);

/**
 * Per-channel spatial mean and population std. `capacity` is the length of
 * both output arrays and must be at least the channel count.
 *
 * # Safety
 * `means` and `stds` must hold `capacity` writable doubles.
 */
enum LfaStatus lfa_channel_stats(const struct LfaTensor *tensor,
                                 double *means,
                                 double *stds,
                                 size_t capacity);

/**
 * Replicate-padded box filter with an odd `window`.
 *
 * # Safety
 * `tensor` must come from this library; `out` must be writable.
 */
enum LfaStatus lfa_low_pass(const struct LfaTensor *tensor, size_t window, struct LfaTensor **out);

/**
 * Metrics of `a` against `b` (latent-space SSIM).
 *
 * # Safety
 * Both tensors must come from this library; `out` must be writable.
 */
enum LfaStatus lfa_latent_metrics(const struct LfaTensor *a,
                                  const struct LfaTensor *b,
                                  struct LfaMetrics *out);

/**
 * Anchors initialized from the round-0 latent `z0`.
 *
 * # Safety
 * `config` and `z0` must be valid; `out` must be writable.
 */
enum LfaStatus lfa_aligner_new(const struct LfaAlignmentConfig *config,
                               const struct LfaTensor *z0,
                               struct LfaAligner **out);

/**
 * Aligns `z_tilde` and advances the anchors. The aligner is unchanged on
 * failure.
 *
 * # Safety
 * Handles must come from this library; `z_hat` must be writable.
 */
enum LfaStatus lfa_aligner_step(struct LfaAligner *aligner,
                                const struct LfaTensor *z_tilde,
                                struct LfaTensor **z_hat);

/**
 * Turns completed so far; 0 for a null handle.
 *
 * # Safety
 * `aligner` must be null or come from this library.
 */
uint64_t lfa_aligner_turn(const struct LfaAligner *aligner);

/**
 * Anchor records (low band first) as a new string to release with
 * [`lfa_string_free`].
 *
 * # Safety
 * `aligner` must come from this library; `out` must be writable.
 */
enum LfaStatus lfa_aligner_serialize(const struct LfaAligner *aligner, char **out);

/**
 * # Safety
 * `aligner` must be null or come from this library and not be used again.
 */
void lfa_aligner_free(struct LfaAligner *aligner);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void lfa_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LFA_H */

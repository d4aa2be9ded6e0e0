#ifndef BITDIFF_H
#define BITDIFF_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum BdStatus {
  BD_STATUS_OK = 0,
  BD_STATUS_NULL_POINTER = 1,
  BD_STATUS_CONFIG = 2,
  BD_STATUS_INVARIANT = 3,
  BD_STATUS_IO = 4,
  BD_STATUS_FORMAT = 5,
  BD_STATUS_RANGE = 6,
  BD_STATUS_DOMAIN = 7,
  BD_STATUS_SHAPE = 8,
  BD_STATUS_UNSUPPORTED = 9,
  BD_STATUS_INVALID_ARGUMENT = 10,
  BD_STATUS_PANIC = 11,
} BdStatus;

/**
 * Values accepted as `kind` by `bd_codec_new`.
 */
typedef enum BdCodecKind {
  BD_CODEC_KIND_BASE2 = 0,
  BD_CODEC_KIND_GRAY = 1,
  BD_CODEC_KIND_PERMUTED_BASE2 = 2,
  BD_CODEC_KIND_ONE_HOT = 3,
} BdCodecKind;

/**
 * Values accepted as `BdSamplerConfig::step_rule`.
 */
typedef enum BdStepRule {
  BD_STEP_RULE_DDIM = 0,
  BD_STEP_RULE_DDPM = 1,
} BdStepRule;

/**
 * Values accepted as `BdSamplerConfig::strategy`.
 */
typedef enum BdStrategy {
  BD_STRATEGY_NONE = 0,
  BD_STRATEGY_DEFAULT = 1,
  /**
   * `strategy_param` is the momentum.
   */
  BD_STRATEGY_MOMENTUM = 2,
  /**
   * `strategy_param` is the guidance weight.
   */
  BD_STRATEGY_SELF_GUIDANCE = 3,
} BdStrategy;

/**
 * Symbol to analog-bit codec.
 */
typedef struct BdCodec BdCodec;

/**
 * Denoiser: either the exact oracle of a distribution or a trained network.
 */
typedef struct BdDenoiser BdDenoiser;

/**
 * Reverse-process settings for `bd_generate`.
 */
typedef struct BdSamplerConfig {
  uint32_t steps;
  /**
   * Time difference in step units.
   */
  double td;
  uint32_t step_rule;
  uint32_t strategy;
  double strategy_param;
  uint64_t seed;
} BdSamplerConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bd_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next `bd_*` call on the same thread.
 */
const char *bd_last_error_message(void);

/**
 * Default sampler settings: 100 DDIM steps, td 0, previous-estimate
 * self-conditioning, seed 0.
 */
struct BdSamplerConfig bd_sampler_config_default(void);

/**
 * Create a codec. `kind` is a `BdCodecKind`; the permuted kind uses the
 * built-in 256-entry table and needs `vocab_size == 256`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum BdStatus bd_codec_new(uint32_t kind, size_t vocab_size, double scale, struct BdCodec **out);

/**
 * Create a permuted-bit codec from an explicit table of `len` entries.
 *
 * # Safety
 * `table` must point to `len` readable values; `out` as in `bd_codec_new`.
 */
enum BdStatus bd_codec_new_permuted(const uint32_t *table,
                                    size_t len,
                                    double scale,
                                    struct BdCodec **out);

/**
 * # Safety
 * `codec` must be null or a handle from `bd_codec_new*` not yet freed.
 */
void bd_codec_free(struct BdCodec *codec);

/**
 * Vocabulary size, or 0 for a null handle.
 *
 * # Safety
 * `codec` must be null or a live codec handle.
 */
size_t bd_codec_vocab_size(const struct BdCodec *codec);

/**
 * Analog bits per symbol, or 0 for a null handle.
 *
 * # Safety
 * `codec` must be null or a live codec handle.
 */
size_t bd_codec_n_bits(const struct BdCodec *codec);

/**
 * Encode `n` symbols into `n * n_bits` analog bits, symbol-major.
 *
 * # Safety
 * `values` must hold `n` entries and `out` `out_len` writable entries.
 */
enum BdStatus bd_codec_encode(const struct BdCodec *codec,
                              const uint32_t *values,
                              size_t n,
                              double *out,
                              size_t out_len);

/**
 * Decode `n * n_bits` analog bits into `n` symbols.
 *
 * # Safety
 * `bits` must hold `bits_len` entries and `out` `n` writable entries.
 */
enum BdStatus bd_codec_decode(const struct BdCodec *codec,
                              const double *bits,
                              size_t bits_len,
                              uint32_t *out,
                              size_t n);

/**
 * Pearson correlation between symbol distance and code Hamming distance
 * over all symbol pairs.
 *
 * # Safety
 * `codec` must be a live handle and `out` writable.
 */
enum BdStatus bd_codec_hamming_correlation(const struct BdCodec *codec, double *out);

/**
 * Exact posterior-mean denoiser of a distribution over `positions`
 * symbols; `probs` has `vocab_size^positions` entries summing to 1 and is
 * indexed by `sum_p v_p * vocab_size^p`. Uses the default noise schedule.
 *
 * # Safety
 * `codec` must be live, `probs` must hold `n_probs` entries, `out` writable.
 */
enum BdStatus bd_denoiser_new_oracle(const struct BdCodec *codec,
                                     const double *probs,
                                     size_t n_probs,
                                     size_t positions,
                                     struct BdDenoiser **out);

/**
 * Load a trained network from a checkpoint file; samples with the EMA
 * weights when the file has them. The checkpoint must have been trained
 * with an identical codec.
 *
 * # Safety
 * `codec` must be live, `path` a NUL-terminated string, `out` writable.
 */
enum BdStatus bd_denoiser_load_checkpoint(const struct BdCodec *codec,
                                          const char *path,
                                          struct BdDenoiser **out);

/**
 * # Safety
 * `den` must be null or a denoiser handle not yet freed.
 */
void bd_denoiser_free(struct BdDenoiser *den);

/**
 * Analog bits per sample row, or 0 for a null handle.
 *
 * # Safety
 * `den` must be null or a live denoiser handle.
 */
size_t bd_denoiser_features(const struct BdDenoiser *den);

/**
 * Generate `batch` samples. `values` receives `batch * positions` symbols
 * (row-major) where `positions = features / n_bits`. `bits` may be null;
 * otherwise it receives the final `batch * features` raw analog bits.
 *
 * # Safety
 * Handles must be live; `cfg` readable; output buffers writable for their
 * stated lengths.
 */
enum BdStatus bd_generate(const struct BdDenoiser *den,
                          const struct BdCodec *codec,
                          const struct BdSamplerConfig *cfg,
                          size_t batch,
                          uint32_t *values,
                          size_t values_len,
                          double *bits,
                          size_t bits_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BITDIFF_H */

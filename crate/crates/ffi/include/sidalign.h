#ifndef SIDALIGN_H
#define SIDALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SidalignStatus {
  SIDALIGN_STATUS_OK = 0,
  SIDALIGN_STATUS_NULL_POINTER = 1,
  SIDALIGN_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad input: malformed JSON, SIDs, contexts or out-of-range parameters.
   */
  SIDALIGN_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Output buffer length does not match the number of results.
   */
  SIDALIGN_STATUS_BUFFER_SIZE = 4,
  /**
   * A backend or I/O failure.
   */
  SIDALIGN_STATUS_FAILURE = 5,
  SIDALIGN_STATUS_PANIC = 6,
} SidalignStatus;

/**
 * Opaque handle to a synthetic scoring model.
 */
typedef struct SidalignModel SidalignModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library from the same thread.
 */
const char *sidalign_last_error(void);

/**
 * Builds a synthetic model from a JSON config. `config_json` may be NULL
 * or empty for the defaults.
 *
 * # Safety
 * `config_json` must be NULL or a NUL-terminated string; `out` must be a
 * valid pointer to write the handle to.
 */
enum SidalignStatus sidalign_model_new(const char *config_json, struct SidalignModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from [`sidalign_model_new`] that has not
 * been freed.
 */
void sidalign_model_free(struct SidalignModel *model);

/**
 * Number of items (`C^L`) in the model's SID space, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t sidalign_model_item_count(const struct SidalignModel *model);

/**
 * Scores candidates after a context. `context` is whitespace-separated
 * tokens ending in `<|sid_begin|>`, e.g.
 * `<|hist_begin|> <s_0_1> <s_1_2> <|hist_end|> <|sid_begin|>`.
 * `candidates` is whitespace-separated SIDs such as `<s_0_1><s_1_2>`. Writes one log-probability per
 * candidate to `out`, which must hold exactly `out_len` values.
 *
 * # Safety
 * `model` must be a live handle, the strings NUL-terminated, and `out`
 * valid for `out_len` writes.
 */
enum SidalignStatus sidalign_score_candidates(const struct SidalignModel *model,
                                              const char *context,
                                              const char *candidates,
                                              double *out,
                                              size_t out_len);

/**
 * Z-score normalization with population std; `out` may alias `scores`.
 *
 * # Safety
 * `scores` and `out` must be valid for `n` reads and writes respectively.
 */
enum SidalignStatus sidalign_zscore_normalize(const double *scores,
                                              size_t n,
                                              double epsilon,
                                              double *out);

/**
 * `(1 + alpha)·zt_e − alpha·(zt_a − zt_b)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SidalignStatus sidalign_contrastive_score(double zt_e,
                                               double zt_a,
                                               double zt_b,
                                               double alpha,
                                               double *out);

/**
 * Rule-based compression of a reasoning chain under a token budget.
 *
 * # Safety
 * `cot` must be NUL-terminated and `out` a valid pointer. Free the result
 * with [`sidalign_string_free`].
 */
enum SidalignStatus sidalign_compress(const char *cot, size_t budget, char **out);

/**
 * Reranks one episode given as a dataset JSON line and returns the rerank
 * output line. `align_json` may be NULL for the default align settings.
 *
 * # Safety
 * `model` must be a live handle, the strings NUL-terminated and `out` a
 * valid pointer. Free the result with [`sidalign_string_free`].
 */
enum SidalignStatus sidalign_rerank_json(const struct SidalignModel *model,
                                         const char *episode_json,
                                         const char *align_json,
                                         char **out);

/**
 * Whitespace token count of `text` (the compression budget measure), or 0 for NULL or
 * invalid UTF-8.
 *
 * # Safety
 * `text` must be NULL or NUL-terminated.
 */
size_t sidalign_token_count(const char *text);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void sidalign_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIDALIGN_H */

#ifndef EGAIL_H
#define EGAIL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EgailStatus {
  EGAIL_STATUS_OK = 0,
  EGAIL_STATUS_NULL_POINTER = 1,
  EGAIL_STATUS_INVALID_UTF8 = 2,
  EGAIL_STATUS_INVALID_ARGUMENT = 3,
  // Unreadable, corrupt or incompatible files.
  EGAIL_STATUS_DATA = 4,
  // Numerical or model failure during inference.
  EGAIL_STATUS_RUNTIME = 5,
  EGAIL_STATUS_PANIC = 6,
} EgailStatus;

// A loaded checkpoint plus its conversation history.
typedef struct EgailModel EgailModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a checkpoint for dialogue. Sampling is seeded by `seed` and scaled
// by `temperature`, which must be positive. On success `*out` owns a model
// that must be released with [`egail_model_free`].
//
// # Safety
// `path` is a nul-terminated string and `out` is valid for writes.
enum EgailStatus egail_model_load(const char *path,
                                  double temperature,
                                  uint64_t seed,
                                  struct EgailModel **out);

// Releases a model. Null is accepted.
//
// # Safety
// `model` is null or was returned by [`egail_model_load`] and not yet freed.
void egail_model_free(struct EgailModel *model);

// Samples a reply to `prompt` given the conversation so far. A non-empty
// reply is appended to the history together with the prompt. `*out_text`
// receives the reply (free it with [`egail_string_free`]); `out_score`, if
// non-null, receives the discriminator probability that the exchange is
// generated.
//
// # Safety
// `model` is a live model, `prompt` a nul-terminated string, `out_text`
// valid for writes and `out_score` null or valid for writes.
enum EgailStatus egail_model_respond(struct EgailModel *model,
                                     const char *prompt,
                                     char **out_text,
                                     double *out_score);

// Clears the conversation history.
//
// # Safety
// `model` is null or a live model.
enum EgailStatus egail_model_reset(struct EgailModel *model);

// Number of utterances in the history (two per completed exchange).
//
// # Safety
// `model` is a live model and `out` is valid for writes.
enum EgailStatus egail_model_history_len(const struct EgailModel *model, size_t *out);

// Perplexity of a sequence of token probabilities in (0, 1].
//
// # Safety
// `probs` points to `len` readable doubles and `out` is valid for writes.
enum EgailStatus egail_perplexity(const double *probs, size_t len, double *out);

// Corpus BLEU (0 to 100) of one candidate against one reference, both
// tokenized the same way as training text.
//
// # Safety
// Both strings are nul-terminated and `out` is valid for writes.
enum EgailStatus egail_bleu(const char *candidate, const char *reference, double *out);

// The discriminator regularizer at `x`; infinite for `x >= 0`.
double egail_regularizer_g(double x);

// Releases a string returned by this library. Null is accepted.
//
// # Safety
// `s` is null or came from this library and was not yet freed.
void egail_string_free(char *s);

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on this thread; do not free it.
const char *egail_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EGAIL_H */

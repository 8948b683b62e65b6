#ifndef DETANT_H
#define DETANT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DetantStatus {
  DETANT_STATUS_OK = 0,
  DETANT_STATUS_NULL_POINTER = 1,
  DETANT_STATUS_INVALID_ARGUMENT = 2,
  DETANT_STATUS_SHAPE = 3,
  DETANT_STATUS_NON_FINITE = 4,
  DETANT_STATUS_ANNOTATION = 5,
  DETANT_STATUS_IO = 6,
  DETANT_STATUS_JSON = 7,
  DETANT_STATUS_UTF8 = 8,
  DETANT_STATUS_BUFFER_TOO_SMALL = 9,
  DETANT_STATUS_PANIC = 10,
} DetantStatus;

/**
 * Opaque result of one forward pass.
 */
typedef struct DetantForward DetantForward;

/**
 * Opaque model: configuration plus parameters.
 */
typedef struct DetantModel DetantModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *detant_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 */
void detant_string_free(char *s);

/**
 * Builds a model from a JSON `ModelConfig` (missing fields take defaults;
 * null means all defaults). Parameters are initialized from the config seed.
 */
enum DetantStatus detant_model_new(const char *config_json, struct DetantModel **out);

/**
 * Loads a model from a bundle JSON string.
 */
enum DetantStatus detant_model_from_bundle(const char *bundle_json, struct DetantModel **out);

/**
 * Releases a model. Null is ignored.
 */
void detant_model_free(struct DetantModel *model);

/**
 * Resolved configuration of a model as JSON.
 */
enum DetantStatus detant_model_config_json(const struct DetantModel *model, char **out);

/**
 * Runs the decoder on `tokens` (`n_tokens × hidden`).
 */
enum DetantStatus detant_model_forward(const struct DetantModel *model,
                                       const double *tokens,
                                       size_t n_tokens,
                                       size_t hidden,
                                       struct DetantForward **out);

/**
 * Runs the decoder on seeded Gaussian visual tokens.
 */
enum DetantStatus detant_model_forward_synthetic(const struct DetantModel *model,
                                                 uint64_t seed,
                                                 struct DetantForward **out);

/**
 * Releases a forward result. Null is ignored.
 */
void detant_forward_free(struct DetantForward *fwd);

/**
 * Number of pair slots, or 0 for null.
 */
size_t detant_forward_slots(const struct DetantForward *fwd);

/**
 * Number of anticipation horizons, or 0 for null.
 */
size_t detant_forward_horizon_count(const struct DetantForward *fwd);

/**
 * Horizon value at `index`, or 0 when out of range.
 */
uint32_t detant_forward_horizon(const struct DetantForward *fwd, size_t index);

/**
 * Subject (`role = 0`) or object (`role = 1`) boxes, `slots × 4` normalized
 * `(cx, cy, w, h)`.
 */
enum DetantStatus detant_forward_boxes(const struct DetantForward *fwd,
                                       uint32_t role,
                                       double *buf,
                                       size_t len);

/**
 * Object logits, `slots × (object_classes + 1)`; the last column is no-object.
 */
enum DetantStatus detant_forward_object_logits(const struct DetantForward *fwd,
                                               double *buf,
                                               size_t len);

/**
 * Verb logits, `slots × verb_classes`. `horizon_index = -1` selects the
 * current frame, otherwise an index into the horizon list.
 */
enum DetantStatus detant_forward_verb_logits(const struct DetantForward *fwd,
                                             int64_t horizon_index,
                                             double *buf,
                                             size_t len);

/**
 * Full forward result as JSON.
 */
enum DetantStatus detant_forward_to_json(const struct DetantForward *fwd, char **out);

/**
 * Minimum-cost assignment of a `rows × cols` cost matrix. `row_to_col`
 * (length `rows`) receives the matched column or -1.
 */
enum DetantStatus detant_hungarian(const double *cost,
                                   size_t rows,
                                   size_t cols,
                                   int64_t *row_to_col,
                                   double *total_cost);

/**
 * Focal verb loss of `probs` against multi-hot `targets`, both `rows × cols`.
 */
enum DetantStatus detant_focal_verb_loss(const double *probs,
                                         const double *targets,
                                         size_t rows,
                                         size_t cols,
                                         double *out);

/**
 * Horizon loss weights; `out` receives `n` values.
 */
enum DetantStatus detant_horizon_weights(double eta,
                                         double gamma,
                                         const uint32_t *horizons,
                                         size_t n,
                                         double *out);

/**
 * Warm-up ramp for the auxiliary-loss weight at `epoch`.
 */
enum DetantStatus detant_rampup(uint32_t epoch, double alpha0, uint32_t warmup_epochs, double *out);

/**
 * IoU of two `(cx, cy, w, h)` boxes.
 */
enum DetantStatus detant_iou(const double *a, const double *b, double *out);

/**
 * Generalized IoU of two `(cx, cy, w, h)` boxes.
 */
enum DetantStatus detant_giou(const double *a, const double *b, double *out);

/**
 * Benchmark construction on JSONL annotation streams. Supplements and params
 * may be null. The result is the full benchmark output as JSON.
 */
enum DetantStatus detant_bench_build(const char *streams_jsonl,
                                     const char *supplements_jsonl,
                                     const char *params_json,
                                     char **out);

/**
 * mAP and recall report from JSONL predictions and ground truth. The
 * frequency table (JSON list) and config may be null.
 */
enum DetantStatus detant_eval(const char *predictions_jsonl,
                              const char *ground_truth_jsonl,
                              const char *frequencies_json,
                              const char *config_json,
                              char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DETANT_H */

#ifndef TEP_H
#define TEP_H

#pragma once

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TepStatus {
  TEP_STATUS_OK = 0,
  TEP_STATUS_NULL_POINTER = 1,
  TEP_STATUS_INVALID_UTF8 = 2,
  TEP_STATUS_PARSE = 3,
  TEP_STATUS_VALIDATION = 4,
  TEP_STATUS_CONFIG = 5,
  TEP_STATUS_IO = 6,
  TEP_STATUS_NUMERICAL = 7,
  TEP_STATUS_PANIC = 8,
} TepStatus;

/**
 * A checkpoint with its vocabulary, ready for inference.
 */
typedef struct TepModel TepModel;

/**
 * A parsed, validated ontology.
 */
typedef struct TepOntology TepOntology;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *tep_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tep_version(void);

/**
 * Writes a new handle for the bundled seed ontology to `*out`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum TepStatus tep_ontology_seed(struct TepOntology **out);

/**
 * Loads and validates an ontology file.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string; `out` null or writable.
 */
enum TepStatus tep_ontology_load(const char *path, struct TepOntology **out);

/**
 * Number of conditions in the ontology.
 *
 * # Safety
 * `ont` must be null or a live handle; `out` null or writable.
 */
enum TepStatus tep_ontology_condition_count(const struct TepOntology *ont, size_t *out);

/**
 * # Safety
 * `ont` must be null or a handle not yet freed.
 */
void tep_ontology_free(struct TepOntology *ont);

/**
 * Loads a checkpoint and its vocabulary file.
 *
 * # Safety
 * Paths must be null or NUL-terminated strings; `out` null or writable.
 */
enum TepStatus tep_model_load(const char *checkpoint_path,
                              const char *vocab_path,
                              struct TepModel **out);

/**
 * Vocabulary size the model was trained with.
 *
 * # Safety
 * `model` must be null or a live handle; `out` null or writable.
 */
enum TepStatus tep_model_vocab_size(const struct TepModel *model, size_t *out);

/**
 * Classifies a rendered window pair. Writes the probabilities of
 * entail, contradict and neutral (in that order) to `probs[0..3]`.
 *
 * # Safety
 * `model` must be null or a live handle; texts null or NUL-terminated;
 * `probs` null or valid for three `float` writes.
 */
enum TepStatus tep_model_classify(const struct TepModel *model,
                                  const char *earlier,
                                  const char *later,
                                  double gap_days,
                                  float *probs);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void tep_model_free(struct TepModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEP_H */

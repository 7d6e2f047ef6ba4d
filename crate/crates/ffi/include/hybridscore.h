#ifndef HYBRIDSCORE_H
#define HYBRIDSCORE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HdStatus {
  HD_STATUS_OK = 0,
  HD_STATUS_NULL_POINTER = 1,
  HD_STATUS_INVALID_ARGUMENT = 2,
  HD_STATUS_IO = 3,
  HD_STATUS_FORMAT = 4,
  HD_STATUS_DIMENSION_MISMATCH = 5,
  HD_STATUS_NUMERIC = 6,
  HD_STATUS_INTERNAL = 7,
} HdStatus;

/**
 * A dense `rows x dim` float32 embedding matrix.
 */
typedef struct HdEmbeddings HdEmbeddings;

/**
 * A trained classifier head loaded from a checkpoint file.
 */
typedef struct HdModel HdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hd_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hd_version(void);

/**
 * Loads a checkpoint. On success `*out` receives a handle to free with [`hd_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HdStatus hd_model_load(const char *path, struct HdModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`hd_model_load`] not yet freed.
 */
void hd_model_free(struct HdModel *model);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hd_model_num_classes(const struct HdModel *model);

/**
 * Expected embedding dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hd_model_input_dim(const struct HdModel *model);

/**
 * Class probabilities for one embedding `x[0..dim]` into `probs[0..k]`.
 *
 * # Safety
 * `x` must point to `dim` floats and `probs` to `k` writable doubles.
 */
enum HdStatus hd_model_predict_proba(const struct HdModel *model,
                                     const float *x,
                                     size_t dim,
                                     double *probs,
                                     size_t k);

/**
 * Anomaly scores for `n` row-major embeddings of width `dim` into `scores[0..n]`.
 *
 * # Safety
 * `rows` must point to `n * dim` floats and `scores` to `n` writable doubles.
 */
enum HdStatus hd_model_score(const struct HdModel *model,
                             const float *rows,
                             size_t n,
                             size_t dim,
                             double threshold,
                             double *scores);

/**
 * Probability-filtering score of one probability vector.
 *
 * # Safety
 * `probs` must point to `k` doubles and `out` be a valid pointer.
 */
enum HdStatus hd_anomaly_score(const double *probs, size_t k, double threshold, double *out);

/**
 * Tie-aware ROC AUC of `scores` against `is_hybrid` (nonzero = hybrid).
 *
 * # Safety
 * `scores` and `is_hybrid` must each point to `n` elements; `out` must be valid.
 */
enum HdStatus hd_roc_auc(const double *scores, const uint8_t *is_hybrid, size_t n, double *out);

/**
 * Copies `n * dim` row-major floats into a new embedding handle.
 *
 * # Safety
 * `data` must point to `n * dim` floats and `out` be a valid pointer.
 */
enum HdStatus hd_embeddings_new(const float *data, size_t n, size_t dim, struct HdEmbeddings **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HdStatus hd_embeddings_read(const char *path, struct HdEmbeddings **out);

/**
 * # Safety
 * `emb` must be a live handle and `path` a NUL-terminated string.
 */
enum HdStatus hd_embeddings_write(const struct HdEmbeddings *emb, const char *path);

/**
 * # Safety
 * `emb` must be null or a live handle.
 */
size_t hd_embeddings_rows(const struct HdEmbeddings *emb);

/**
 * # Safety
 * `emb` must be null or a live handle.
 */
size_t hd_embeddings_dim(const struct HdEmbeddings *emb);

/**
 * Borrowed pointer to the `rows * dim` values, valid until the handle is freed.
 *
 * # Safety
 * `emb` must be null or a live handle.
 */
const float *hd_embeddings_data(const struct HdEmbeddings *emb);

/**
 * # Safety
 * `emb` must be null or a handle not yet freed.
 */
void hd_embeddings_free(struct HdEmbeddings *emb);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* HYBRIDSCORE_H */

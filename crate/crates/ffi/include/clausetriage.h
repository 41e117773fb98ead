#ifndef CLAUSETRIAGE_H
#define CLAUSETRIAGE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtStatus {
  CT_STATUS_OK = 0,
  CT_STATUS_NULL_POINTER = 1,
  CT_STATUS_INVALID_ARGUMENT = 2,
  CT_STATUS_DATA = 3,
  CT_STATUS_DOMAIN = 4,
  CT_STATUS_IO = 5,
  CT_STATUS_EMPTY_SET = 6,
  CT_STATUS_SINGLE_CLASS = 7,
  CT_STATUS_PANIC = 8,
} CtStatus;

typedef enum CtDomain {
  CT_DOMAIN_PROBABILITY = 0,
  CT_DOMAIN_SIMILARITY = 1,
} CtDomain;

typedef enum CtDecision {
  CT_DECISION_AUTO_NONCOMPLIANT = 0,
  CT_DECISION_REVIEW = 1,
  CT_DECISION_AUTO_COMPLIANT = 2,
} CtDecision;

/**
 * Trained heads with the projection they were trained on.
 */
typedef struct CtHeads CtHeads;

/**
 * A `PRJ1` projection checkpoint.
 */
typedef struct CtProjection CtProjection;

/**
 * An `EMB1` embedding store.
 */
typedef struct CtStore CtStore;

typedef struct CtThresholds CtThresholds;

/**
 * Similarity and both head probabilities of one pair.
 */
typedef struct CtPairScore {
  double score;
  double p_theta;
  double p_phi;
} CtPairScore;

/**
 * Result of [`ct_tune_thresholds`].
 */
typedef struct CtTuneResult {
  double low;
  double high;
  double coverage;
  double auto_error;
  /**
   * Nonzero when no band met the error cap.
   */
  uint8_t infeasible;
} CtTuneResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next `ct_*` call on the same thread.
 */
const char *ct_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ct_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CtStatus ct_store_open(const char *path, struct CtStore **out);

/**
 * # Safety
 * `store` must come from [`ct_store_open`] and not be used afterwards.
 */
void ct_store_free(struct CtStore *store);

/**
 * Base embedding dimension, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t ct_store_dim(const struct CtStore *store);

/**
 * Number of records, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t ct_store_len(const struct CtStore *store);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CtStatus ct_projection_open(const char *path, struct CtProjection **out);

/**
 * # Safety
 * `proj` must come from [`ct_projection_open`] and not be used afterwards.
 */
void ct_projection_free(struct CtProjection *proj);

/**
 * Cosine similarity of a rule and a clause under the projection.
 *
 * # Safety
 * Handles must be live; ids NUL-terminated; `out` valid.
 */
enum CtStatus ct_projection_score(const struct CtProjection *proj,
                                  const struct CtStore *store,
                                  const char *query_id,
                                  const char *clause_id,
                                  double *out);

/**
 * Opens a heads file. `rank_path` may be null, in which case the rank
 * checkpoint named in the heads file is loaded from its directory.
 *
 * # Safety
 * `path` must be NUL-terminated, `rank_path` null or NUL-terminated,
 * `out` valid.
 */
enum CtStatus ct_heads_open(const char *path, const char *rank_path, struct CtHeads **out);

/**
 * # Safety
 * `heads` must come from [`ct_heads_open`] and not be used afterwards.
 */
void ct_heads_free(struct CtHeads *heads);

/**
 * Scores a pair and runs both heads.
 *
 * # Safety
 * Handles must be live; ids NUL-terminated; `out` valid.
 */
enum CtStatus ct_heads_score(const struct CtHeads *heads,
                             const struct CtStore *store,
                             const char *query_id,
                             const char *clause_id,
                             struct CtPairScore *out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum CtStatus ct_thresholds_new(double low,
                                double high,
                                enum CtDomain domain_,
                                struct CtThresholds **out);

/**
 * Reads the band from a `thresholds.json` written by threshold tuning.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum CtStatus ct_thresholds_open(const char *path, struct CtThresholds **out);

/**
 * # Safety
 * `t` must come from a `ct_thresholds_*` constructor and not be used
 * afterwards.
 */
void ct_thresholds_free(struct CtThresholds *t);

/**
 * # Safety
 * `t` must be live; output pointers valid.
 */
enum CtStatus ct_thresholds_get(const struct CtThresholds *t,
                                double *low,
                                double *high,
                                enum CtDomain *domain_);

/**
 * `x < low` → auto-noncompliant, `low ≤ x ≤ high` → review,
 * `x > high` → auto-compliant.
 *
 * # Safety
 * `t` must be live and `out` valid.
 */
enum CtStatus ct_decide(double x, const struct CtThresholds *t, enum CtDecision *out);

/**
 * Grid search of the review band; see the Rust `tune_thresholds`.
 *
 * # Safety
 * `values` and `labels` must point to `n` elements; `out` valid.
 */
enum CtStatus ct_tune_thresholds(const double *values,
                                 const uint8_t *labels,
                                 size_t n,
                                 size_t grid_n,
                                 double error_cap,
                                 enum CtDomain domain_,
                                 struct CtTuneResult *out);

/**
 * NDCG@k of grades listed in ranked order. `defined` is set to 0 (and
 * `out` to 0) when the ideal DCG is zero.
 *
 * # Safety
 * `grades` must point to `n` elements; outputs valid.
 */
enum CtStatus ct_ndcg_at_k(const uint32_t *grades,
                           size_t n,
                           size_t k,
                           double gain_base,
                           double *out,
                           uint8_t *defined);

/**
 * Rank-statistic AUC; fails with `SingleClass` when one class is absent.
 *
 * # Safety
 * `scores` and `labels` must point to `n` elements; `out` valid.
 */
enum CtStatus ct_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLAUSETRIAGE_H */

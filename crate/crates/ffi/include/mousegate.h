#ifndef MOUSEGATE_H
#define MOUSEGATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MgStatus {
  MG_STATUS_OK = 0,
  MG_STATUS_NULL_POINTER = 1,
  MG_STATUS_INVALID_INPUT = 2,
  MG_STATUS_SHAPE_MISMATCH = 3,
  MG_STATUS_IO = 4,
  MG_STATUS_PARSE = 5,
  MG_STATUS_MISSING_CHECKPOINT = 6,
  MG_STATUS_DEGENERATE = 7,
  MG_STATUS_OUT_OF_RANGE = 8,
  MG_STATUS_INTERNAL = 9,
  MG_STATUS_PANIC = 10,
} MgStatus;

/**
 * Opaque authenticator handle with its calibrated threshold.
 */
typedef struct MgAuthenticator MgAuthenticator;

/**
 * Opaque corpus handle.
 */
typedef struct MgCorpus MgCorpus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). `*written` receives the full message length.
 */
enum MgStatus mg_last_error_message(char *buf, size_t len, size_t *written);

/**
 * `c(L) = (0.8 / L) Σ √i`, the mean tracking-distance coefficient.
 */
enum MgStatus mg_mean_distance_coefficient(size_t movement_length, double *out);

/**
 * Replication-noise σ for a movement given as separate `vx`, `vy` arrays.
 */
enum MgStatus mg_sigma_for_movement(const double *vx, const double *vy, size_t len, double *out);

/**
 * One-tailed paired t-test of `mean(a − b) > 0`.
 */
enum MgStatus mg_paired_t_test(const double *a,
                               const double *b,
                               size_t n,
                               double *t_out,
                               double *p_out);

enum MgStatus mg_corpus_load(const char *path, struct MgCorpus **out);

enum MgStatus mg_corpus_len(const struct MgCorpus *handle, size_t *out);

/**
 * Feature length of every trial: `2 · N_mov · L`.
 */
enum MgStatus mg_corpus_feature_len(const struct MgCorpus *handle, size_t *out);

/**
 * Copies trial `index` as channel-major features into `buf` and writes its
 * subject id.
 */
enum MgStatus mg_corpus_trial(const struct MgCorpus *handle,
                              size_t index,
                              double *buf,
                              size_t len,
                              uint32_t *subject_id);

void mg_corpus_free(struct MgCorpus *handle);

/**
 * Loads `<dir>/<stem>.bin` and `<dir>/<stem>.json`.
 */
enum MgStatus mg_authenticator_load(const char *dir,
                                    const char *stem,
                                    struct MgAuthenticator **out);

enum MgStatus mg_authenticator_feature_len(const struct MgAuthenticator *handle, size_t *out);

/**
 * Valid-user probability of `rows` feature rows laid out back to back;
 * `accepted` (optional) receives 1 where the threshold accepts.
 */
enum MgStatus mg_authenticator_score(const struct MgAuthenticator *handle,
                                     const double *features,
                                     size_t rows,
                                     double *scores,
                                     uint8_t *accepted);

void mg_authenticator_free(struct MgAuthenticator *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOUSEGATE_H */

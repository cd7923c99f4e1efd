#ifndef CORGAN_H
#define CORGAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum CorganStatus {
  CORGAN_STATUS_OK = 0,
  CORGAN_STATUS_NULL_POINTER = 1,
  CORGAN_STATUS_INVALID_ARGUMENT = 2,
  CORGAN_STATUS_SHAPE = 3,
  CORGAN_STATUS_NUMERIC = 4,
  CORGAN_STATUS_STATE = 5,
  CORGAN_STATUS_PRECONDITION = 6,
  CORGAN_STATUS_CONFIG = 7,
  CORGAN_STATUS_PARSE = 8,
  CORGAN_STATUS_CHECKPOINT = 9,
  CORGAN_STATUS_DIVERGED = 10,
  CORGAN_STATUS_IO = 11,
  CORGAN_STATUS_PANIC = 12,
} CorganStatus;

/**
 * A record matrix (binary or continuous, optionally labelled).
 */
typedef struct CorganMatrix CorganMatrix;

/**
 * A trained model checkpoint.
 */
typedef struct CorganModel CorganModel;

/**
 * Summary of a membership-inference attack at its best threshold.
 */
typedef struct CorganAttackSummary {
  /**
   * 0 when no threshold flagged any record.
   */
  int32_t any_flagged;
  double threshold;
  double precision;
  double recall;
  double f1;
} CorganAttackSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *corgan_last_error(void);

/**
 * Loads a `corgan-bin v1` file.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum CorganStatus corgan_matrix_load_binary(const char *path, struct CorganMatrix **out);

/**
 * Loads a continuous CSV whose last column is the label.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum CorganStatus corgan_matrix_load_csv(const char *path,
                                         int32_t header,
                                         struct CorganMatrix **out);

/**
 * Builds a binary matrix from `rows * cols` row-major values.
 *
 * # Safety
 * `values` must point to `rows * cols` doubles and `out` must be valid.
 */
enum CorganStatus corgan_matrix_new_binary(size_t rows,
                                           size_t cols,
                                           const double *values,
                                           struct CorganMatrix **out);

/**
 * Writes a binary matrix as `corgan-bin v1`.
 *
 * # Safety
 * `m` must be a live handle and `path` a valid C string.
 */
enum CorganStatus corgan_matrix_write_binary(const struct CorganMatrix *m, const char *path);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t corgan_matrix_rows(const struct CorganMatrix *m);

/**
 * Number of columns, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t corgan_matrix_cols(const struct CorganMatrix *m);

/**
 * Copies the row-major values into `buf`, which must hold `len >= rows * cols` doubles.
 *
 * # Safety
 * `m` must be a live handle and `buf` must point to `len` doubles.
 */
enum CorganStatus corgan_matrix_copy_values(const struct CorganMatrix *m, double *buf, size_t len);

/**
 * Releases a matrix. Null is ignored.
 *
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void corgan_matrix_free(struct CorganMatrix *m);

/**
 * Samples a banded correlated binary corpus with marginals drawn uniformly
 * from `[marginal_lo, marginal_hi]`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CorganStatus corgan_synth_corpus(size_t n,
                                      size_t m,
                                      size_t band,
                                      double marginal_lo,
                                      double marginal_hi,
                                      uint64_t seed,
                                      struct CorganMatrix **out);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum CorganStatus corgan_model_load(const char *path, struct CorganModel **out);

/**
 * Saves a model checkpoint.
 *
 * # Safety
 * `model` must be a live handle and `path` a valid C string.
 */
enum CorganStatus corgan_model_save(const struct CorganModel *model, const char *path);

/**
 * Record width produced by the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t corgan_model_record_width(const struct CorganModel *model);

/**
 * Draws `count` synthetic records.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum CorganStatus corgan_model_generate(const struct CorganModel *model,
                                        size_t count,
                                        uint64_t seed,
                                        struct CorganMatrix **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void corgan_model_free(struct CorganModel *model);

/**
 * Mean absolute and maximum deviation of per-column positive rates.
 *
 * # Safety
 * Handles must be live; output pointers must be valid.
 */
enum CorganStatus corgan_dimension_wise_probability(const struct CorganMatrix *real,
                                                    const struct CorganMatrix *syn,
                                                    double *mean_abs_dev,
                                                    double *max_dev);

/**
 * Area under the ROC curve for 0/1 `labels` and `scores` of length `n`.
 *
 * # Safety
 * `labels` and `scores` must point to `n` elements; `out` must be valid.
 */
enum CorganStatus corgan_auroc(const uint8_t *labels, const double *scores, size_t n, double *out);

/**
 * Runs the membership-inference attack with `u / 2` known members drawn
 * from `train` and `u / 2` known non-members from `test`.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
enum CorganStatus corgan_attack(const struct CorganMatrix *train,
                                const struct CorganMatrix *test,
                                const struct CorganMatrix *syn,
                                size_t u,
                                size_t threshold_count,
                                double threshold_mean,
                                double threshold_std,
                                uint64_t seed,
                                struct CorganAttackSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORGAN_H */

#ifndef CHESTRAG_H
#define CHESTRAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ChestragStatus {
  CHESTRAG_STATUS_OK = 0,
  CHESTRAG_STATUS_NULL_POINTER = 1,
  CHESTRAG_STATUS_INVALID_ARGUMENT = 2,
  CHESTRAG_STATUS_CONFIG = 3,
  CHESTRAG_STATUS_RUNTIME = 4,
  CHESTRAG_STATUS_PANIC = 5,
} ChestragStatus;

/**
 * A validated experiment config plus the results of its last run.
 */
typedef struct ChestragExperiment ChestragExperiment;

/**
 * Exact nearest-neighbour index.
 */
typedef struct ChestragIndex ChestragIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call on this thread.
 */
const char *chestrag_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *chestrag_version(void);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void chestrag_string_free(char *s);

/**
 * Build an index from `n` row-major vectors of length `dim` and their labels.
 * Vectors are normalised; ids are the row positions.
 *
 * # Safety
 * `vectors` must hold `n * dim` doubles and `labels` `n` values.
 */
enum ChestragStatus chestrag_index_new(const double *vectors,
                                       const uint32_t *labels,
                                       size_t n,
                                       size_t dim,
                                       struct ChestragIndex **out);

/**
 * # Safety
 * `index` must be a live handle or null.
 */
size_t chestrag_index_len(const struct ChestragIndex *index);

/**
 * The `k` nearest stored rows to `query`, closest first; ties go to the lower row.
 *
 * # Safety
 * `query` must hold `dim` doubles; `positions` and `distances` must each hold `k` entries.
 */
enum ChestragStatus chestrag_index_query(const struct ChestragIndex *index,
                                         const double *query,
                                         size_t dim,
                                         size_t k,
                                         size_t *positions,
                                         double *distances);

/**
 * # Safety
 * `index` must come from [`chestrag_index_new`] and not be freed twice.
 */
void chestrag_index_free(struct ChestragIndex *index);

/**
 * Expected calibration error of `n` (confidence, correct) pairs over `bins` bins.
 *
 * # Safety
 * `confidences` and `correct` must each hold `n` entries; `out` must be writable.
 */
enum ChestragStatus chestrag_ece(const double *confidences,
                                 const uint8_t *correct,
                                 size_t n,
                                 size_t bins,
                                 double *out);

/**
 * Resolve free text to a class position in `classes`, or -1 for a hallucination.
 *
 * # Safety
 * `classes` must hold `n_classes` strings and `excluded` `n_excluded` strings
 * (may be null when zero); `out` must be writable.
 */
enum ChestragStatus chestrag_parse_label(const char *text,
                                         const char *const *classes,
                                         size_t n_classes,
                                         const char *const *excluded,
                                         size_t n_excluded,
                                         int *out);

/**
 * Parse and validate an experiment config given as JSON. Relative paths in
 * it resolve against the current directory.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum ChestragStatus chestrag_experiment_from_json(const char *json,
                                                  struct ChestragExperiment **out);

/**
 * Run every condition and write the result tree to `out_dir`.
 * A non-empty `out_dir` is refused unless `force` is non-zero.
 *
 * # Safety
 * `experiment` must be a live handle and `out_dir` a NUL-terminated path.
 */
enum ChestragStatus chestrag_experiment_run(struct ChestragExperiment *experiment,
                                            const char *out_dir,
                                            int force,
                                            size_t jobs);

/**
 * Per-condition summary of the last run as a JSON array. Free the string
 * with [`chestrag_string_free`].
 *
 * # Safety
 * `experiment` must be a live handle; `out` must be writable.
 */
enum ChestragStatus chestrag_experiment_summary_json(const struct ChestragExperiment *experiment,
                                                     char **out);

/**
 * # Safety
 * `experiment` must come from [`chestrag_experiment_from_json`] and not be freed twice.
 */
void chestrag_experiment_free(struct ChestragExperiment *experiment);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHESTRAG_H */

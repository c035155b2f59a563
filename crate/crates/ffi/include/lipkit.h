/* C interface to the lipkit kernel-machine toolkit. */

#pragma once

/* Generated by cbindgen from the lipkit-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this interface.
typedef enum LipkitStatus {
  // The call succeeded.
  LIPKIT_STATUS_OK = 0,
  // A required pointer argument was null.
  LIPKIT_STATUS_NULL_ARGUMENT = 1,
  // An argument was out of range, inconsistent, or otherwise rejected.
  LIPKIT_STATUS_INVALID_ARGUMENT = 2,
  // A JSON configuration or serialized model could not be parsed.
  LIPKIT_STATUS_BAD_FORMAT = 3,
  // A file could not be read or written.
  LIPKIT_STATUS_IO_FAILED = 4,
  // Training finished without reaching its stop condition.
  LIPKIT_STATUS_NOT_CONVERGED = 5,
  // One of the certification suites exceeded its tolerance.
  LIPKIT_STATUS_CERTIFY_FAILED = 6,
  // An internal invariant failed; the library state is still usable.
  LIPKIT_STATUS_PANICKED = 7,
} LipkitStatus;

// In-memory training or evaluation data: points with one label each.
typedef struct LipkitDataset LipkitDataset;

// A trained scorer bundle: per-class models, input scaling, and the raw
// label value behind each score index.
typedef struct LipkitModel LipkitModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the library as a static string; never freed by the caller.
const char *lipkit_version(void);

// Message describing the most recent failure on the calling thread. Never
// null; empty before the first failure. The pointer stays valid until the
// next failing call on the same thread.
const char *lipkit_last_error(void);

// Releases a string returned through a `char**` out-parameter.
//
// # Safety
// `s` must be null or a pointer previously returned by this library and
// not yet freed.
void lipkit_string_free(char *s);

// Builds a dataset from a row-major array of `n * dim` coordinates and
// `n` label values.
//
// # Safety
// `points` must hold `n * dim` doubles, `labels` must hold `n` doubles,
// and `out` must be a valid location for the handle.
enum LipkitStatus lipkit_dataset_new(const double *points,
                                     size_t n,
                                     size_t dim,
                                     const double *labels,
                                     struct LipkitDataset **out);

// Draws a labelled synthetic dataset; `task` is `"blobs"` or
// `"two-moons"` (the latter ignores `classes` and `dim`).
//
// # Safety
// `task` must be a NUL-terminated string and `out` a valid location for
// the handle.
enum LipkitStatus lipkit_dataset_synthetic(const char *task,
                                           size_t per_class,
                                           size_t classes,
                                           size_t dim,
                                           uint64_t seed,
                                           struct LipkitDataset **out);

// Number of examples, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t lipkit_dataset_len(const struct LipkitDataset *ds);

// Coordinates per example, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t lipkit_dataset_dim(const struct LipkitDataset *ds);

// Releases a dataset handle; null is ignored.
//
// # Safety
// `ds` must be null or a live dataset handle, not freed twice.
void lipkit_dataset_free(struct LipkitDataset *ds);

// Trains a scorer under the slope budget `lip_budget` and returns a model
// handle, plus optionally the structured training report as JSON.
//
// Inputs are min-max scaled to the unit box and the scaling is stored in
// the model. Two distinct label values give one real-valued scorer, more
// give one scorer per class. `config_json`, when non-null, is a full
// training configuration as found in the `train.config` field of a
// report; a positive `lip_budget` overrides the configured budget.
// `kernel_json`, when non-null, is a kernel specification as found in
// reports; the default is a Gaussian product kernel at the median
// pairwise distance.
//
// Returns [`LipkitStatus::NotConverged`] when the optimiser exhausts its
// iterations; the model and report are still produced in that case.
//
// # Safety
// `ds` must be a live dataset handle, the strings null or NUL-terminated,
// `out_model` a valid location for the handle, and `out_report_json` null
// or a valid location for a string.
enum LipkitStatus lipkit_train(const struct LipkitDataset *ds,
                               double lip_budget,
                               const char *config_json,
                               const char *kernel_json,
                               struct LipkitModel **out_model,
                               char **out_report_json);

// Serializes a model to its portable text form.
//
// # Safety
// `m` must be a live model handle and `out_text` a valid location for a
// string.
enum LipkitStatus lipkit_model_to_text(const struct LipkitModel *m, char **out_text);

// Rebuilds a model from its portable text form.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid location for
// the handle.
enum LipkitStatus lipkit_model_from_text(const char *text, struct LipkitModel **out);

// Writes a model to a file.
//
// # Safety
// `m` must be a live model handle and `path` a NUL-terminated string.
enum LipkitStatus lipkit_model_save(const struct LipkitModel *m, const char *path);

// Reads a model from a file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid location for
// the handle.
enum LipkitStatus lipkit_model_load(const char *path, struct LipkitModel **out);

// Input dimension the model expects, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live model handle.
size_t lipkit_model_dim(const struct LipkitModel *m);

// Number of classes the model scores, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live model handle.
size_t lipkit_model_n_classes(const struct LipkitModel *m);

// Per-class scores for one raw (unscaled) input point; `out_scores` must
// hold one double per class.
//
// # Safety
// `m` must be a live model handle, `x` must hold `dim` doubles matching
// the model dimension, and `out_scores` must hold
// [`lipkit_model_n_classes`] doubles.
enum LipkitStatus lipkit_model_scores(const struct LipkitModel *m,
                                      const double *x,
                                      size_t dim,
                                      double *out_scores);

// Predicted raw label values for `n` raw input points.
//
// # Safety
// `m` must be a live model handle, `points` must hold `n * dim` doubles,
// and `out_labels` must hold `n` doubles.
enum LipkitStatus lipkit_model_predict(const struct LipkitModel *m,
                                       const double *points,
                                       size_t n,
                                       size_t dim,
                                       double *out_labels);

// Releases a model handle; null is ignored.
//
// # Safety
// `m` must be null or a live model handle, not freed twice.
void lipkit_model_free(struct LipkitModel *m);

// Projected-gradient robustness sweep of a model over a dataset whose
// labels must all appear among the model's classes. Radii are attacked in
// ascending order; `out_accuracy`, when non-null, receives one robust
// accuracy per radius in that order, and `out_report_json`, when
// non-null, receives the full report. `config_json`, when non-null, is an
// attack configuration as found in reports; the default attacks the
// Euclidean ball of the largest radius.
//
// # Safety
// `m` and `ds` must be live handles, `deltas` must hold `n_deltas`
// doubles, `config_json` must be null or NUL-terminated,
// `out_report_json` null or a valid location for a string, and
// `out_accuracy` null or a location for `n_deltas` doubles.
enum LipkitStatus lipkit_attack(const struct LipkitModel *m,
                                const struct LipkitDataset *ds,
                                const double *deltas,
                                size_t n_deltas,
                                const char *config_json,
                                char **out_report_json,
                                double *out_accuracy);

// Runs the four numerical certification suites (`cases` instances each)
// on the robust-risk oracles: convex equality, tent tightness, defect
// bounds, and primal–dual agreement. Returns
// [`LipkitStatus::CertifyFailed`] if any suite exceeds its tolerance;
// `out_report_json`, when non-null, receives per-suite results either
// way.
//
// # Safety
// `out_report_json` must be null or a valid location for a string.
enum LipkitStatus lipkit_certify(size_t cases, uint64_t seed, char **out_report_json);

// Slope estimates for every scorer in the model by all applicable
// methods, against the Euclidean gradient norm on the model's natural
// box domain. `out_json` receives, per scorer, an array of
// `{method, value, squared, n_witness}` records.
//
// # Safety
// `m` must be a live model handle and `out_json` a valid location for a
// string.
enum LipkitStatus lipkit_lipschitz_estimates(const struct LipkitModel *m,
                                             size_t n_witness,
                                             size_t restarts,
                                             uint64_t seed,
                                             char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

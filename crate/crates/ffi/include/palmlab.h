/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PALMLAB_H
#define PALMLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PalmStatus {
  PALM_STATUS_OK = 0,
  PALM_STATUS_NULL_POINTER = 1,
  PALM_STATUS_INVALID_ARGUMENT = 2,
  PALM_STATUS_IO = 3,
  PALM_STATUS_DATA = 4,
  PALM_STATUS_NUMERICAL = 5,
  PALM_STATUS_BUFFER_TOO_SMALL = 6,
  PALM_STATUS_PANIC = 7,
} PalmStatus;

// Opaque dataset handle.
typedef struct PalmDataset PalmDataset;

typedef struct PalmSyntheticSpec {
  size_t classes;
  size_t dim;
  size_t samples_per_class;
  uint64_t text_anchor_seed;
  uint64_t audio_seed;
  double alignment_noise;
  double modality_gap;
  double within_class_spread;
} PalmSyntheticSpec;

// Training recipe; `seeds` points at `num_seeds` values. `folds` 0 means
// train/test mode.
typedef struct PalmRunConfig {
  size_t shots;
  size_t epochs;
  double lr;
  double temperature;
  const uint64_t *seeds;
  size_t num_seeds;
  size_t folds;
  size_t jobs;
} PalmRunConfig;

typedef struct PalmShape {
  size_t classes;
  size_t dim;
  size_t context_len;
  size_t embed_dim;
  size_t hidden;
} PalmShape;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message, NUL-terminated, into
// `buf`. `*needed` receives the size including the terminator.
//
// # Safety
// `buf` must point to `cap` writable bytes or be null with `cap` 0;
// `needed` must be null or writable.
enum PalmStatus palm_last_error(char *buf, size_t cap, size_t *needed);

// The reference synthetic configuration.
struct PalmSyntheticSpec palm_synthetic_spec_default(void);

// Default recipe with no seeds attached; set `seeds`/`num_seeds` before use.
struct PalmRunConfig palm_run_config_default(void);

// Generates a synthetic dataset together with its text anchors.
//
// # Safety
// `spec` must be readable and `out` writable.
enum PalmStatus palm_dataset_generate(const struct PalmSyntheticSpec *spec,
                                      struct PalmDataset **out);

// Loads a dataset file; `anchors` may be null.
//
// # Safety
// `path` (and `anchors` if non-null) must be NUL-terminated strings;
// `out` must be writable.
enum PalmStatus palm_dataset_load(const char *path, const char *anchors, struct PalmDataset **out);

// Releases a handle; null is ignored.
//
// # Safety
// `ds` must come from this library and not be used afterwards.
void palm_dataset_free(struct PalmDataset *ds);

// Record count, class count and embedding width; any out pointer may be null.
//
// # Safety
// `ds` must be a live handle; non-null out pointers must be writable.
enum PalmStatus palm_dataset_shape(const struct PalmDataset *ds,
                                   size_t *records,
                                   size_t *classes,
                                   size_t *dim);

// Learnable parameters of `method` for `shape`.
//
// # Safety
// `method` must be a NUL-terminated string, `shape` readable, `out` writable.
enum PalmStatus palm_param_count(const char *method, const struct PalmShape *shape, size_t *out);

// Most cosine-similar row of the row-major `classes × dim` matrix.
//
// # Safety
// `audio` must hold `dim` values, `text_features` `classes * dim`, `out`
// must be writable.
enum PalmStatus palm_zero_shot_predict(const double *audio,
                                       const double *text_features,
                                       size_t classes,
                                       size_t dim,
                                       size_t *out);

// Runs `method` over every seed (and fold) and writes one accuracy per
// run into `accuracies`, in seed-then-fold order, plus their mean.
//
// # Safety
// `ds` must be a live handle, `method` a NUL-terminated string, `config`
// readable with `seeds` pointing at `num_seeds` values, `accuracies`
// writable for `cap` values (or null with `cap` 0); `written` and `mean`
// must be null or writable.
enum PalmStatus palm_run_experiment(const struct PalmDataset *ds,
                                    const char *method,
                                    const struct PalmRunConfig *config,
                                    double *accuracies,
                                    size_t cap,
                                    size_t *written,
                                    double *mean_accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PALMLAB_H */

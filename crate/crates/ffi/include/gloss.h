#ifndef GLOSS_H
#define GLOSS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum GlossStatus {
  GLOSS_STATUS_OK = 0,
  GLOSS_STATUS_NULL_POINTER = 1,
  GLOSS_STATUS_INVALID_ARGUMENT = 2,
  GLOSS_STATUS_PARSE = 3,
  GLOSS_STATUS_VALIDATION = 4,
  GLOSS_STATUS_SINGULAR = 5,
  GLOSS_STATUS_NON_CONVERGENCE = 6,
  GLOSS_STATUS_IO = 7,
  GLOSS_STATUS_INTERNAL = 8,
} GlossStatus;

// Opaque training configuration handle.
typedef struct GlossConfig GlossConfig;

// Opaque dataset handle.
typedef struct GlossDataset GlossDataset;

// Opaque result of one training run.
typedef struct GlossReport GlossReport;

typedef struct GlossMetrics {
  double accuracy;
  double macro_f1;
  double macro_silhouette;
} GlossMetrics;

typedef struct GlossTTest {
  double mean_diff;
  double t_stat;
  double p_value;
  size_t dof;
} GlossTTest;

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *gloss_last_error(void);

// Library version as a static NUL-terminated string.
const char *gloss_version(void);

// Free a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from a `gloss_*` function that documents ownership transfer.
void gloss_string_free(char *s);

// Load a dataset: `.csv` files as text, anything else as the binary format.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum GlossStatus gloss_dataset_load(const char *path, struct GlossDataset **out);

// Isotropic Gaussian blobs with every pair of centers `sep` apart.
//
// # Safety
// `out` must be writable.
enum GlossStatus gloss_dataset_blobs(size_t n,
                                     size_t dim,
                                     size_t num_classes,
                                     double sep,
                                     uint64_t seed,
                                     struct GlossDataset **out);

// Dataset from an `n × dim` row-major feature buffer and `n` labels.
//
// # Safety
// `features` must hold `n * dim` doubles and `labels` `n` entries.
enum GlossStatus gloss_dataset_from_arrays(const double *features,
                                           size_t n,
                                           size_t dim,
                                           const size_t *labels,
                                           size_t num_classes,
                                           struct GlossDataset **out);

// Stratified train/val/test split; the three outputs are new handles.
//
// # Safety
// `ds` must be a live handle; the outputs must be writable.
enum GlossStatus gloss_dataset_split(const struct GlossDataset *ds,
                                     double train_frac,
                                     double val_frac,
                                     uint64_t seed,
                                     struct GlossDataset **out_train,
                                     struct GlossDataset **out_val,
                                     struct GlossDataset **out_test);

// Row count, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t gloss_dataset_len(const struct GlossDataset *ds);

// # Safety
// `ds` must be null or a live handle.
size_t gloss_dataset_dim(const struct GlossDataset *ds);

// # Safety
// `ds` must be null or a live handle.
size_t gloss_dataset_num_classes(const struct GlossDataset *ds);

// # Safety
// `ds` must be null or a handle not yet freed.
void gloss_dataset_free(struct GlossDataset *ds);

// Default configuration.
//
// # Safety
// `out` must be writable.
enum GlossStatus gloss_config_default(struct GlossConfig **out);

// Configuration from TOML text. Unknown keys give `INVALID_ARGUMENT`.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum GlossStatus gloss_config_from_toml(const char *toml, struct GlossConfig **out);

// Apply one `key=value` override, e.g. `"gamma=0.4"` or `"loss=\"scl\""`.
//
// # Safety
// `cfg` must be a live handle and `assignment` a NUL-terminated string.
enum GlossStatus gloss_config_set(struct GlossConfig *cfg, const char *assignment);

// Configuration as TOML; free the result with [`gloss_string_free`].
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum GlossStatus gloss_config_to_toml(const struct GlossConfig *cfg, char **out);

// # Safety
// `cfg` must be null or a handle not yet freed.
void gloss_config_free(struct GlossConfig *cfg);

// Train per `cfg` (integrated or standalone) and return the report.
//
// # Safety
// All handles must be live; `out` must be writable.
enum GlossStatus gloss_train(const struct GlossConfig *cfg,
                             const struct GlossDataset *train_ds,
                             const struct GlossDataset *val,
                             const struct GlossDataset *test,
                             struct GlossReport **out);

// Final test metrics of a run.
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum GlossStatus gloss_report_test_metrics(const struct GlossReport *report,
                                           struct GlossMetrics *out);

// Number of epochs run, or 0 for a null handle.
//
// # Safety
// `report` must be null or a live handle.
size_t gloss_report_epochs(const struct GlossReport *report);

// Run summary as JSON, as written to `summary.json`, with the per-epoch
// records added back under `epochs`. Free with [`gloss_string_free`].
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum GlossStatus gloss_report_to_json(const struct GlossReport *report, char **out);

// # Safety
// `report` must be null or a handle not yet freed.
void gloss_report_free(struct GlossReport *report);

// Closed-form propagation `(I - T_uu)^{-1} T_ul Y_l`, clamped at zero and
// not yet row-normalized. `out` receives `n_u × num_classes` values.
//
// # Safety
// Buffers must hold `n_u*n_u`, `n_u*n_l`, `n_l*num_classes` and
// `n_u*num_classes` doubles respectively.
enum GlossStatus gloss_propagate(const double *t_uu,
                                 const double *t_ul,
                                 const double *y_l,
                                 size_t n_u,
                                 size_t n_l,
                                 size_t num_classes,
                                 double *out);

// Class-balanced silhouette of `n × dim` embeddings.
//
// # Safety
// `z` must hold `n*dim` doubles, `labels` `n` entries; `out` must be writable.
enum GlossStatus gloss_macro_silhouette(const double *z,
                                        size_t n,
                                        size_t dim,
                                        const size_t *labels,
                                        double *out);

// Two-sided paired t-test on `a - b`.
//
// # Safety
// `a` and `b` must hold `n` doubles; `out` must be writable.
enum GlossStatus gloss_paired_t_test(const double *a,
                                     const double *b,
                                     size_t n,
                                     struct GlossTTest *out);

#endif  /* GLOSS_H */

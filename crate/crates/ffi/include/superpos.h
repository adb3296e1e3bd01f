#ifndef SUPERPOS_H
#define SUPERPOS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Prompt reparameterization selector for [`sp_trainable_count`].
typedef enum SpMethod {
  SP_METHOD_SIMPLE = 0,
  SP_METHOD_SUPERPOS = 1,
  SP_METHOD_SOFTMAX_MIXTURE = 2,
  SP_METHOD_RESIDUAL = 3,
} SpMethod;

// Metric selector for [`sp_compute_metric`].
typedef enum SpMetric {
  SP_METRIC_ACCURACY = 0,
  SP_METRIC_F1 = 1,
  SP_METRIC_MCC = 2,
  SP_METRIC_PEARSON = 3,
  SP_METRIC_SPEARMAN = 4,
} SpMetric;

// Result code of every fallible call.
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_UTF8 = 2,
  SP_STATUS_IO = 3,
  SP_STATUS_PARSE = 4,
  SP_STATUS_INVALID_PARAMETER = 5,
  SP_STATUS_CONTRACT = 6,
  SP_STATUS_NUMERICAL = 7,
  SP_STATUS_INTEGRITY = 8,
  SP_STATUS_PANIC = 9,
} SpStatus;

// A frozen, loaded backbone.
typedef struct SpBackbone SpBackbone;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL,
// or 0 if there is none.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t sp_last_error_message(char *buf, uintptr_t len);

// Loads and verifies a backbone checkpoint, then freezes it.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SpStatus sp_backbone_load(const char *path, struct SpBackbone **out);

// Releases a backbone. Null is ignored.
//
// # Safety
// `handle` must come from [`sp_backbone_load`] and not be used afterwards.
void sp_backbone_free(struct SpBackbone *handle);

// Total number of backbone weights.
//
// # Safety
// `handle` must be a live backbone; `out` must be writable.
enum SpStatus sp_backbone_parameter_count(const struct SpBackbone *handle, uintptr_t *out);

// Content hash of the backbone weights, as recorded in run summaries.
//
// # Safety
// `handle` must be a live backbone; `out` must be writable.
enum SpStatus sp_backbone_weights_hash(const struct SpBackbone *handle, uint64_t *out);

// Trains one configuration against a loaded backbone.
//
// `config_json` is an experiment configuration; missing fields take their
// defaults and `backbone_path` is ignored. On success `*summary_json`
// receives the run summary, to be released with [`sp_string_free`].
//
// # Safety
// `handle` must be a live backbone, `config_json` NUL-terminated, and
// `summary_json` writable.
enum SpStatus sp_run_experiment(const struct SpBackbone *handle,
                                const char *config_json,
                                char **summary_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void sp_string_free(char *s);

// Closed-form trainable parameter count of a prompt method.
//
// `m` is only read for the superposition variants and `bottleneck` only for
// the residual method.
//
// # Safety
// `out` must be writable.
enum SpStatus sp_trainable_count(enum SpMethod method,
                                 uintptr_t model_dim,
                                 uintptr_t n,
                                 uintptr_t m,
                                 uintptr_t bottleneck,
                                 uintptr_t *out);

// Computes one metric in `[-1, 1]` or `[0, 1]`.
//
// Classification metrics read `predictions` and `targets` as class indices
// (rounded); correlations read them as real values. `valid[i] == 0` marks
// prediction `i` as an invalid label; `valid` may be null when all are
// valid. `*undefined` is set to 1 when the metric is undefined (e.g. zero
// variance) and the reported value is 0.
//
// # Safety
// Array arguments must hold `len` elements; `out` and `undefined` must be
// writable (`undefined` may be null).
enum SpStatus sp_compute_metric(enum SpMetric metric,
                                const double *predictions,
                                const uint8_t *valid,
                                const double *targets,
                                uintptr_t len,
                                double *out,
                                uint8_t *undefined);

// Standardized overall scoring of a row-major `methods x tasks` table.
//
// NaN cells count as missing. Writes one mean and one standard deviation
// per method.
//
// # Safety
// `table` must hold `methods * tasks` values; `means` and `stds` must each
// have room for `methods` values.
enum SpStatus sp_standardized_scores(const double *table,
                                     uintptr_t methods,
                                     uintptr_t tasks,
                                     double *means,
                                     double *stds);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUPERPOS_H */

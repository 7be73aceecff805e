#ifndef BINLOC_H
#define BINLOC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Non-zero values mirror the command-line exit codes.
 */
typedef enum BinlocStatus {
  BINLOC_STATUS_OK = 0,
  BINLOC_STATUS_INVALID_INPUT = 2,
  BINLOC_STATUS_CONFIG = 3,
  BINLOC_STATUS_IO = 4,
  BINLOC_STATUS_FORMAT = 5,
  BINLOC_STATUS_FINGERPRINT_MISMATCH = 6,
  BINLOC_STATUS_NUMERICAL = 7,
  BINLOC_STATUS_NULL_POINTER = 8,
  BINLOC_STATUS_PANIC = 9,
} BinlocStatus;

/**
 * A run configuration and a model ladder, coarse to fine.
 */
typedef struct BinlocModel BinlocModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *binloc_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *binloc_version(void);

/**
 * Loads `n_paths` model files, ordered coarse to fine. `config_json` may be
 * null for the default configuration; the models must carry its cue-layout
 * fingerprint.
 *
 * # Safety
 * `paths` must point to `n_paths` nul-terminated strings and `out` must be
 * writable.
 */
enum BinlocStatus binloc_model_load(const char *const *paths,
                                    uintptr_t n_paths,
                                    const char *config_json,
                                    struct BinlocModel **out);

/**
 * Releases a handle from [`binloc_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a live handle not freed before.
 */
void binloc_model_free(struct BinlocModel *model);

/**
 * Component count of the finest model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t binloc_model_components(const struct BinlocModel *model);

/**
 * Localizes the single source of a stereo signal with the finest model and
 * writes `[azimuth, elevation]` in degrees to `out_direction`.
 *
 * # Safety
 * `left` and `right` must hold `n_samples` values each; `out_direction`
 * must have room for two.
 */
enum BinlocStatus binloc_localize(const struct BinlocModel *model,
                                  const double *left,
                                  const double *right,
                                  uintptr_t n_samples,
                                  uint32_t sample_rate,
                                  double *out_direction);

/**
 * Localizes and separates `n_sources` sources. Writes `2·n_sources`
 * directions and, when the buffers are non-null, each separated source's
 * left and right channels, source after source, `n_sources·n_samples`
 * values per buffer.
 *
 * # Safety
 * Buffer sizes must match the description above.
 */
enum BinlocStatus binloc_separate(const struct BinlocModel *model,
                                  const double *left,
                                  const double *right,
                                  uintptr_t n_samples,
                                  uint32_t sample_rate,
                                  uintptr_t n_sources,
                                  double *out_directions,
                                  double *out_left,
                                  double *out_right);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BINLOC_H */

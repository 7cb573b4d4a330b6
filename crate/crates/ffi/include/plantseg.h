#ifndef PLANTSEG_H
#define PLANTSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PsStatus {
  PS_STATUS_OK = 0,
  /**
   * Null pointer or non-UTF-8 string argument.
   */
  PS_STATUS_INVALID_ARGUMENT = 1,
  PS_STATUS_SCHEMA = 2,
  PS_STATUS_CONFIG = 3,
  PS_STATUS_IO = 4,
  PS_STATUS_DIMENSION_MISMATCH = 5,
  PS_STATUS_INFEASIBLE = 6,
  PS_STATUS_INTERNAL = 7,
  PS_STATUS_PANIC = 8,
} PsStatus;

/**
 * Opaque pipeline configuration.
 */
typedef struct PsConfig PsConfig;

/**
 * Opaque segmentation result.
 */
typedef struct PsResult PsResult;

/**
 * Opaque loaded scene.
 */
typedef struct PsScene PsScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ps_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *ps_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void ps_string_free(char *s);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PsStatus ps_config_default(struct PsConfig **out);

/**
 * Configuration from a JSON document; missing fields take their defaults.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PsStatus ps_config_from_json(const char *json, struct PsConfig **out);

/**
 * # Safety
 * `cfg` must come from this library and not be freed twice.
 */
void ps_config_free(struct PsConfig *cfg);

/**
 * Loads `scene.json` (or a directory holding it) with its attention files.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PsStatus ps_scene_load(const char *path, struct PsScene **out);

/**
 * Number of candidate masks in a scene.
 *
 * # Safety
 * `scene` must be a live handle.
 */
size_t ps_scene_candidate_count(const struct PsScene *scene);

/**
 * # Safety
 * `scene` must come from this library and not be freed twice.
 */
void ps_scene_free(struct PsScene *scene);

/**
 * Runs the full pipeline. A null `cfg` uses the defaults.
 *
 * # Safety
 * `scene` must be a live handle, `cfg` null or a live handle, `out` a valid pointer.
 */
enum PsStatus ps_segment(const struct PsScene *scene,
                         const struct PsConfig *cfg,
                         struct PsResult **out);

/**
 * Loads a result file (also used for ground truth).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PsStatus ps_result_load(const char *path, struct PsResult **out);

/**
 * # Safety
 * `result` must be a live handle; `leaves`, `plants` and `stems` may be null.
 */
enum PsStatus ps_result_counts(const struct PsResult *result,
                               size_t *leaves,
                               size_t *plants,
                               size_t *stems);

/**
 * Result document as JSON; free with [`ps_string_free`].
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum PsStatus ps_result_to_json(const struct PsResult *result, char **out);

/**
 * # Safety
 * `result` must be a live handle and `path` a NUL-terminated string.
 */
enum PsStatus ps_result_save(const struct PsResult *result, const char *path);

/**
 * # Safety
 * `result` must come from this library and not be freed twice.
 */
void ps_result_free(struct PsResult *result);

/**
 * Metrics report for one prediction/ground-truth pair as JSON.
 *
 * # Safety
 * `pred` and `gt` must be live handles and `out` a valid pointer.
 */
enum PsStatus ps_evaluate(const struct PsResult *pred, const struct PsResult *gt, char **out);

/**
 * IoU of two run-length masks of the same size (runs start with background).
 *
 * # Safety
 * `runs_a`/`runs_b` must point to `len_a`/`len_b` values and `out` must be valid.
 */
enum PsStatus ps_mask_iou(uint32_t width,
                          uint32_t height,
                          const uint32_t *runs_a,
                          size_t len_a,
                          const uint32_t *runs_b,
                          size_t len_b,
                          double *out);

/**
 * Generates a synthetic scene from a JSON spec (fields optional) into `out_dir`.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum PsStatus ps_generate_scene(const char *spec_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLANTSEG_H */

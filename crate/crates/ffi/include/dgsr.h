#ifndef DGSR_H
#define DGSR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DgsrStatus {
  DGSR_STATUS_OK = 0,
  DGSR_STATUS_NULL_POINTER = 1,
  DGSR_STATUS_INVALID_ARGUMENT = 2,
  DGSR_STATUS_IO = 3,
  DGSR_STATUS_FORMAT = 4,
  DGSR_STATUS_CONFIG = 5,
  DGSR_STATUS_PIPELINE = 6,
  DGSR_STATUS_BUFFER_TOO_SMALL = 7,
  DGSR_STATUS_PANIC = 8,
} DgsrStatus;

/**
 * A pinhole camera.
 */
typedef struct DgsrCamera DgsrCamera;

/**
 * A run configuration.
 */
typedef struct DgsrConfig DgsrConfig;

/**
 * A Gaussian model.
 */
typedef struct DgsrModel DgsrModel;

typedef struct DgsrFScore {
  double precision;
  double recall;
  double f;
} DgsrFScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *dgsr_last_error(void);

/**
 * Loads a serialized model file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum DgsrStatus dgsr_model_load(const char *path, struct DgsrModel **out);

/**
 * Decodes a model from serialized bytes.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` be a valid pointer.
 */
enum DgsrStatus dgsr_model_from_bytes(const uint8_t *bytes, size_t len, struct DgsrModel **out);

/**
 * Writes a model in the serialized format.
 *
 * # Safety
 * `model` must come from this library and `path` be nul-terminated.
 */
enum DgsrStatus dgsr_model_save(const struct DgsrModel *model, const char *path);

/**
 * Number of primitives, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t dgsr_model_len(const struct DgsrModel *model);

/**
 * Spherical-harmonics degree, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
uint8_t dgsr_model_sh_degree(const struct DgsrModel *model);

/**
 * # Safety
 * `model` must be null or come from this library and not be used again.
 */
void dgsr_model_free(struct DgsrModel *model);

/**
 * Camera at `eye` looking at `target`, with `up` roughly opposite the image y axis.
 *
 * # Safety
 * `id` must be nul-terminated, the vectors point to 3 doubles and `out` be valid.
 */
enum DgsrStatus dgsr_camera_look_at(const char *id,
                                    const double *eye,
                                    const double *target,
                                    const double *up,
                                    double focal,
                                    uint32_t width,
                                    uint32_t height,
                                    struct DgsrCamera **out);

/**
 * # Safety
 * `camera` must be null or come from this library and not be used again.
 */
void dgsr_camera_free(struct DgsrCamera *camera);

/**
 * Renders `model` from `camera` into `rgb`, row-major interleaved RGB in
 * [0, 1]. `len` must be at least `3 · width · height`.
 *
 * # Safety
 * Handles must come from this library and `rgb` hold `len` floats.
 */
enum DgsrStatus dgsr_render_rgb(const struct DgsrModel *model,
                                const struct DgsrCamera *camera,
                                float *rgb,
                                size_t len);

/**
 * PSNR in decibels between two RGB images of `width · height` pixels.
 *
 * # Safety
 * `a` and `b` must each hold `3 · width · height` floats.
 */
enum DgsrStatus dgsr_psnr(const float *a, const float *b, size_t width, size_t height, double *out);

/**
 * Precision, recall and F-score of `pred` against `gt` at threshold `eps`.
 * Clouds are packed `x y z` triples.
 *
 * # Safety
 * `pred` must hold `3 · n_pred` doubles and `gt` hold `3 · n_gt`.
 */
enum DgsrStatus dgsr_fscore(const double *pred,
                            size_t n_pred,
                            const double *gt,
                            size_t n_gt,
                            double eps,
                            struct DgsrFScore *out);

/**
 * Built-in defaults.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DgsrStatus dgsr_config_default(struct DgsrConfig **out);

/**
 * Parses a TOML configuration.
 *
 * # Safety
 * `toml` must be nul-terminated and `out` valid.
 */
enum DgsrStatus dgsr_config_parse(const char *toml, struct DgsrConfig **out);

/**
 * # Safety
 * `config` must be null or come from this library and not be used again.
 */
void dgsr_config_free(struct DgsrConfig *config);

/**
 * Synthesizes the configured scene, partitions it per `spec` (for example
 * `"(2x2)*1"`) and runs the full pipeline under `run_root`. The cloud model
 * is written to `run_root/cloud/artifact.csgs`.
 *
 * # Safety
 * `config` must come from this library; strings must be nul-terminated.
 */
enum DgsrStatus dgsr_run_pipeline(const struct DgsrConfig *config,
                                  const char *spec,
                                  const char *run_root,
                                  size_t workers);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DGSR_H */

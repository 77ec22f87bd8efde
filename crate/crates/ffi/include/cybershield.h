#ifndef CYBERSHIELD_H
#define CYBERSHIELD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Signature layout, mirrors the library's signature modes.
 */
typedef enum {
  CS_SIGNATURE_MODE_ALL_CLASSES = 0,
  CS_SIGNATURE_MODE_PREDICTED_CLASS = 1,
} CsSignatureMode;

typedef enum {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Shapes or fingerprints do not fit together.
   */
  CS_STATUS_CONTRACT = 3,
  CS_STATUS_IO = 4,
  /**
   * Malformed or incompatible file.
   */
  CS_STATUS_FORMAT = 5,
  CS_STATUS_NUMERIC = 6,
  CS_STATUS_BUFFER_TOO_SMALL = 7,
  CS_STATUS_INTERNAL = 8,
} CsStatus;

/**
 * Benign background bound to one classifier.
 */
typedef struct CsBackground CsBackground;

/**
 * Trained attack detector.
 */
typedef struct CsDetector CsDetector;

/**
 * Trained severity classifier.
 */
typedef struct CsModel CsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cs_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length.
 *
 * # Safety
 * `buf` must be NULL or point to `len` writable bytes.
 */
size_t cs_last_error(char *buf, size_t len);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
CsStatus cs_model_load(const char *path, CsModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from [`cs_model_load`] not yet freed.
 */
void cs_model_free(CsModel *model);

/**
 * # Safety
 * `model` must be a live handle; the out pointers must be writable.
 */
CsStatus cs_model_shape(const CsModel *model,
                        size_t *timestep,
                        size_t *n_features,
                        size_t *n_classes);

/**
 * Classifies one row-major `timestep × n_features` window of normalized
 * values. Writes `n_classes` probabilities and the predicted class index.
 *
 * # Safety
 * `values` must hold `len` floats, `probs` `probs_len` doubles; `label` must be writable.
 */
CsStatus cs_model_predict(const CsModel *model,
                          const float *values,
                          size_t len,
                          double *probs,
                          size_t probs_len,
                          uint32_t *label);

/**
 * Builds a background from `n_windows` consecutive windows of normalized values.
 *
 * # Safety
 * `windows` must hold `n_windows · timestep · n_features` floats; `out` must be writable.
 */
CsStatus cs_background_new(const CsModel *model,
                           const float *windows,
                           size_t n_windows,
                           CsBackground **out);

/**
 * # Safety
 * `bg` must be NULL or a handle from [`cs_background_new`] not yet freed.
 */
void cs_background_free(CsBackground *bg);

/**
 * Signature of one window. Writes up to `out_len` values and the signature
 * length to `written`; a too small buffer yields `BufferTooSmall` with
 * `written` set to the required length.
 *
 * # Safety
 * Handles must be live; `values` must hold `len` floats, `out` `out_len` doubles.
 */
CsStatus cs_signature(const CsModel *model,
                      const CsBackground *bg,
                      CsSignatureMode mode,
                      const float *values,
                      size_t len,
                      double *out,
                      size_t out_len,
                      size_t *written);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
CsStatus cs_detector_load(const char *path, CsDetector **out);

/**
 * # Safety
 * `det` must be NULL or a handle from [`cs_detector_load`] not yet freed.
 */
void cs_detector_free(CsDetector *det);

/**
 * Signature length the detector expects.
 *
 * # Safety
 * `det` must be a live handle; `dim` must be writable.
 */
CsStatus cs_detector_dim(const CsDetector *det, size_t *dim);

/**
 * Scores a signature; `attack` is set when the score exceeds the detector's threshold.
 *
 * # Safety
 * `det` must be a live handle; `sig` must hold `len` doubles; out pointers writable.
 */
CsStatus cs_detector_score(const CsDetector *det,
                           const double *sig,
                           size_t len,
                           double *score,
                           bool *attack);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CYBERSHIELD_H */

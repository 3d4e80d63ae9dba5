#ifndef ANATOMY_NET_H
#define ANATOMY_NET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AnStatus {
  AN_STATUS_OK = 0,
  AN_STATUS_NULL_POINTER = 1,
  AN_STATUS_INVALID_ARGUMENT = 2,
  AN_STATUS_IO = 3,
  AN_STATUS_FORMAT = 4,
  AN_STATUS_SHAPE = 5,
  AN_STATUS_DATA = 6,
  AN_STATUS_NUMERICAL = 7,
  AN_STATUS_PANIC = 8,
} AnStatus;

// A trained network loaded from a checkpoint.
typedef struct AnModel AnModel;

// A trained one-vs-rest linear SVM.
typedef struct AnSvm AnSvm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *an_version(void);

// Message for the most recent failure on this thread, or null after a success.
// The pointer stays valid until the next call into this library on the same thread.
const char *an_last_error(void);

// Static name of a status code.
const char *an_status_name(enum AnStatus status);

// Load a network checkpoint. On success `*out` receives a handle to free with [`an_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer to writable storage.
enum AnStatus an_model_load(const char *path, struct AnModel **out);

// # Safety
// `model` must be null or a handle from [`an_model_load`] not yet freed.
void an_model_free(struct AnModel *model);

// Number of output classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t an_model_num_classes(const struct AnModel *model);

// Writes channels, height, width of one input image to `out[0..3]`.
//
// # Safety
// `model` must be a live handle and `out` must point to three writable `size_t`.
enum AnStatus an_model_input_shape(const struct AnModel *model, size_t *out);

// Inference-mode logits for `n` images laid out `[n, C, H, W]` in `pixels`.
// `out` receives `n * num_classes` values.
//
// # Safety
// `pixels` must hold `n * C * H * W` floats and `out` `n * num_classes` writable floats.
enum AnStatus an_model_logits(const struct AnModel *model,
                              const float *pixels,
                              size_t n,
                              float *out);

// Predicted class of each of `n` images, written to `out[0..n]`.
//
// # Safety
// `pixels` must hold `n * C * H * W` floats and `out` `n` writable `size_t`.
enum AnStatus an_model_classify(const struct AnModel *model,
                                const float *pixels,
                                size_t n,
                                size_t *out);

// Load a saved SVM. On success `*out` receives a handle to free with [`an_svm_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer to writable storage.
enum AnStatus an_svm_load(const char *path, struct AnSvm **out);

// # Safety
// `svm` must be null or a handle from [`an_svm_load`] not yet freed.
void an_svm_free(struct AnSvm *svm);

// Feature dimension, or 0 for a null handle.
//
// # Safety
// `svm` must be null or a live handle.
size_t an_svm_dim(const struct AnSvm *svm);

// Number of classes, or 0 for a null handle.
//
// # Safety
// `svm` must be null or a live handle.
size_t an_svm_num_classes(const struct AnSvm *svm);

// Predicted class of each of `n` feature rows of width `dim`, written to `out[0..n]`.
//
// # Safety
// `features` must hold `n * dim` floats and `out` `n` writable `size_t`.
enum AnStatus an_svm_classify(const struct AnSvm *svm,
                              const float *features,
                              size_t n,
                              size_t dim,
                              size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANATOMY_NET_H */

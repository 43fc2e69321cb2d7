#ifndef CGL_MHA_H
#define CGL_MHA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes shared by every entry point.
 */
typedef enum CglStatus {
  CGL_STATUS_OK = 0,
  CGL_STATUS_NULL_ARGUMENT = 1,
  CGL_STATUS_INVALID_UTF8 = 2,
  CGL_STATUS_CONFIG = 3,
  CGL_STATUS_DATA = 4,
  CGL_STATUS_CHECKPOINT = 5,
  CGL_STATUS_IO = 6,
  CGL_STATUS_NUMERIC = 7,
  CGL_STATUS_SHAPE = 8,
  /*
   The text has no tokens after normalization.
   */
  CGL_STATUS_UNCLASSIFIABLE = 9,
  CGL_STATUS_BUFFER_TOO_SMALL = 10,
  CGL_STATUS_PANIC = 11,
} CglStatus;

/*
 A loaded model and its vocabulary.
 */
typedef struct CglClassifier CglClassifier;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads a checkpoint and the vocabulary written with it. `vocab` may be
 null, in which case `vocab.txt` next to the checkpoint is used. On
 success `*out` receives a new handle.

 # Safety
 String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum CglStatus cgl_classifier_load(const char *checkpoint,
                                   const char *vocab,
                                   struct CglClassifier **out);

/*
 Number of output classes (the length `probs` must have).

 # Safety
 `handle` must be null or a live handle.
 */
size_t cgl_classifier_num_classes(const struct CglClassifier *handle);

/*
 Classifies one headline. Writes the predicted class to `*label`
 (1 = sarcastic) and the class probabilities to `probs[0..probs_len]`.
 `probs` may be null when `probs_len` is 0.

 # Safety
 `handle` must be a live handle, `text` NUL-terminated, `label`
 writable, and `probs` valid for `probs_len` doubles.
 */
enum CglStatus cgl_classifier_predict(const struct CglClassifier *handle,
                                      const char *text,
                                      uint32_t *label,
                                      double *probs,
                                      size_t probs_len);

/*
 Releases a handle. Null is ignored.

 # Safety
 `handle` must be null or a handle not yet freed.
 */
void cgl_classifier_free(struct CglClassifier *handle);

/*
 Macro-averaged F1 of a binary confusion matrix (class 1 positive).

 # Safety
 `out` must be writable.
 */
enum CglStatus cgl_macro_f1(uint64_t true_pos,
                            uint64_t false_pos,
                            uint64_t false_neg,
                            uint64_t true_neg,
                            double *out);

/*
 Message of the last failed call on this thread, or "" after a
 success. The pointer stays valid until the next call on this thread.
 */
const char *cgl_last_error(void);

/*
 Library version, static string.
 */
const char *cgl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CGL_MHA_H */

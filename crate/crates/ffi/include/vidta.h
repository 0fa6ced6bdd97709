#ifndef VIDTA_H
#define VIDTA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Affinity reported as pK_d (passed through).
#define VIDTA_SPACE_PKD 0

// Affinity reported as a KIBA score (passed through).
#define VIDTA_SPACE_KIBA 1

// Affinity in the Metz dataset's native units (passed through).
#define VIDTA_SPACE_METZ_NATIVE 2

// Dissociation constant in nanomolar; converted to pK_d.
#define VIDTA_SPACE_RAW_KD_NM 3

// Model size presets for [`vidta_model_new`].
#define VIDTA_PRESET_PAPER 0

#define VIDTA_PRESET_TOY 1

// Result of every call.
typedef enum VidtaStatus {
  VIDTA_STATUS_OK = 0,
  VIDTA_STATUS_NULL_POINTER = 1,
  VIDTA_STATUS_INVALID_UTF8 = 2,
  VIDTA_STATUS_INVALID_ARGUMENT = 3,
  VIDTA_STATUS_PARSE_ERROR = 4,
  VIDTA_STATUS_IO = 5,
  VIDTA_STATUS_VERSION_MISMATCH = 6,
  VIDTA_STATUS_MODEL_ERROR = 7,
  VIDTA_STATUS_PANIC = 8,
} VidtaStatus;

// Opaque model handle.
typedef struct VidtaModel VidtaModel;

// Evaluation metrics of a prediction vector against ground truth.
typedef struct VidtaMetrics {
  double ci;
  double rm2;
  double pcc;
  double mse;
  size_t n;
} VidtaMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or null if
// the last call succeeded. Valid until the next call on this thread.
const char *vidta_last_error(void);

// Library version as a static NUL-terminated string.
const char *vidta_version(void);

// Loads a checkpoint file into a new handle stored in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum VidtaStatus vidta_model_load(const char *path, struct VidtaModel **out);

// Creates a freshly initialized (untrained) model of the given preset.
//
// # Safety
// `out` must be writable.
enum VidtaStatus vidta_model_new(uint32_t preset, uint64_t seed, struct VidtaModel **out);

// Writes `model` to a checkpoint file.
//
// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum VidtaStatus vidta_model_save(const struct VidtaModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void vidta_model_free(struct VidtaModel *model);

// Predicted affinity of one drug (SMILES) and protein (sequence or FASTA).
//
// # Safety
// `model` must be a live handle; strings NUL-terminated; `out` writable.
enum VidtaStatus vidta_model_predict(const struct VidtaModel *model,
                                     const char *smiles,
                                     const char *protein,
                                     double *out);

// Predictions for `n` pairs; `out` receives `n` values.
//
// # Safety
// `smiles` and `proteins` must each point to `n` NUL-terminated strings;
// `out` must have room for `n` doubles.
enum VidtaStatus vidta_model_predict_batch(const struct VidtaModel *model,
                                           const char *const *smiles,
                                           const char *const *proteins,
                                           size_t n,
                                           double *out);

// Heavy-atom and bond counts of a SMILES string.
//
// # Safety
// `smiles` NUL-terminated; `atoms` and `bonds` writable.
enum VidtaStatus vidta_parse_smiles_counts(const char *smiles, size_t *atoms, size_t *bonds);

// Converts an affinity to the training target space (`VIDTA_SPACE_*`).
//
// # Safety
// `out` must be writable.
enum VidtaStatus vidta_transform_affinity(double value, uint32_t space_code, double *out);

// CI, r_m², Pearson correlation and MSE of `pred` against `truth`.
//
// # Safety
// `pred` and `truth` must hold `n` doubles; `out` must be writable.
enum VidtaStatus vidta_metrics(const double *pred,
                               const double *truth,
                               size_t n,
                               struct VidtaMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIDTA_H */

#ifndef FPPG_FPPG_H
#define FPPG_FPPG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FPPG_API __declspec(dllexport)
#else
#define FPPG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Every function returning fppg_status stores a message for
   fppg_last_error() on failure (per thread). */
typedef enum fppg_status {
  FPPG_OK = 0,
  FPPG_ERR_INVALID_ARGUMENT = 1,
  FPPG_ERR_DIM_MISMATCH = 2,
  FPPG_ERR_SYMMETRY_VIOLATION = 3,
  FPPG_ERR_DIVISION_BY_ZERO_BIN = 4,
  FPPG_ERR_NEGATIVE_THRESHOLD = 5,
  FPPG_ERR_SVD_FAILURE = 6,
  FPPG_ERR_NONPOSITIVE_EPSILON = 7,
  FPPG_ERR_ZERO_LAMBDA = 8,
  FPPG_ERR_ZERO_FRAME_COUNTS = 9,
  FPPG_ERR_ZERO_TRUTH_MEAN = 10,
  FPPG_ERR_NON_FINITE = 11,
  FPPG_ERR_BAD_BINNING = 12,
  FPPG_ERR_BAD_SPEC = 13,
  FPPG_ERR_BAD_FRACTIONS = 14,
  FPPG_ERR_BAD_SCHEDULE = 15,
  FPPG_ERR_BAD_WEIGHTS = 16,
  FPPG_ERR_FIT_DIVERGED = 17,
  FPPG_ERR_SEED_OUT_OF_BOUNDS = 18,
  FPPG_ERR_OUT_OF_BOUNDS = 19,
  FPPG_ERR_TOO_FEW_REALIZATIONS = 20,
  FPPG_ERR_CONFIG = 21,
  FPPG_ERR_IO = 22,
  FPPG_ERR_MISSING_INPUT = 23,
  FPPG_ERR_NULL_POINTER = 90,
  FPPG_ERR_INTERNAL = 99
} fppg_status;

FPPG_API const char* fppg_version(void);
FPPG_API const char* fppg_status_name(fppg_status status);
/* Message of the last failure on this thread, "" if none. */
FPPG_API const char* fppg_last_error(void);
/* 1 for errors caused by the configuration or missing/invalid inputs. */
FPPG_API int fppg_status_is_input_error(fppg_status status);

/* ---- tensors: rows × cols × frames doubles, row index fastest ---- */

typedef struct fppg_tensor fppg_tensor;

/* data may be NULL for zeros; otherwise rows·cols·frames values are copied. */
FPPG_API fppg_status fppg_tensor_create(size_t rows, size_t cols, size_t frames, const double* data,
                                        fppg_tensor** out);
FPPG_API fppg_status fppg_tensor_read(const char* path, fppg_tensor** out);
FPPG_API fppg_status fppg_tensor_write(const fppg_tensor* t, const char* path);
FPPG_API void fppg_tensor_free(fppg_tensor* t);
FPPG_API fppg_status fppg_tensor_dims(const fppg_tensor* t, size_t* rows, size_t* cols, size_t* frames);
/* Borrowed pointer, valid until the tensor is freed. */
FPPG_API double* fppg_tensor_data(fppg_tensor* t);

/* ---- projector ---- */

typedef struct fppg_projector fppg_projector;

/* n_radial = 0 or n_angles = 0 picks the default geometry for the side.
   atten may be NULL (no attenuation). */
FPPG_API fppg_status fppg_projector_create(size_t image_side, size_t n_radial, size_t n_angles, double fov_mm,
                                           const fppg_tensor* atten, fppg_projector** out);
FPPG_API void fppg_projector_free(fppg_projector* p);
FPPG_API fppg_status fppg_projector_geometry(const fppg_projector* p, size_t* n_radial, size_t* n_angles);
FPPG_API fppg_status fppg_forward(const fppg_projector* p, const fppg_tensor* image, fppg_tensor** out);
FPPG_API fppg_status fppg_backward(const fppg_projector* p, const fppg_tensor* sino, fppg_tensor** out);

/* ---- reconstruction ---- */

typedef struct fppg_recon_options {
  const char* algorithm; /* osem, fppg_dct, fppg_tnn, fppg_dct_patch, fppg_tnn_patch */
  double lambda;
  double beta;
  size_t iterations;
  size_t subsets;
  size_t patch[3];
  size_t span[3];
  int rotation;
  double postfilter_fwhm_mm;
} fppg_recon_options;

FPPG_API void fppg_recon_options_default(fppg_recon_options* opts);

/* additive and atten may be NULL (zeros / none). The projector's own
   attenuation is replaced by atten when given. */
FPPG_API fppg_status fppg_reconstruct(const fppg_projector* p, const fppg_tensor* counts, const fppg_tensor* additive,
                                      const fppg_tensor* atten, const fppg_recon_options* opts, fppg_tensor** out);

/* ---- metrics ---- */

FPPG_API fppg_status fppg_ssim(const fppg_tensor* recon, const fppg_tensor* truth, double dynamic_range, double* out);
FPPG_API fppg_status fppg_rrmse(const fppg_tensor* recon, const fppg_tensor* truth, double* out);

/* ---- pipeline ---- */

typedef struct fppg_run fppg_run;
typedef void (*fppg_log_fn)(const char* text, void* user);

FPPG_API fppg_status fppg_run_load(const char* config_path, fppg_run** out);
FPPG_API fppg_status fppg_run_parse(const char* text, const char* source, fppg_run** out);
FPPG_API void fppg_run_free(fppg_run* run);
FPPG_API fppg_status fppg_run_set_realizations(fppg_run* run, size_t n);
FPPG_API fppg_status fppg_run_set_seed(fppg_run* run, uint64_t seed);
FPPG_API fppg_status fppg_run_set_out(fppg_run* run, const char* dir);
FPPG_API fppg_status fppg_run_set_threads(fppg_run* run, int threads);
/* SHA-256 of the config text as 64 hex characters plus NUL. */
FPPG_API fppg_status fppg_run_config_hash(const fppg_run* run, char out[65]);
/* stage: simulate, sweep, recon, analyze, fit, report or all. log may be
   NULL (silent). */
FPPG_API fppg_status fppg_run_execute(fppg_run* run, const char* stage, fppg_log_fn log, void* user);

#ifdef __cplusplus
}
#endif

#endif

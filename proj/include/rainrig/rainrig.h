#ifndef RAINRIG_RAINRIG_H
#define RAINRIG_RAINRIG_H

/* C interface to the rainrig pipeline: calibration, simulated capture,
   dataset building, training, deraining and evaluation.

   Functions return RR_OK on success. On failure the message is available from
   rr_pipeline_last_error() for pipeline calls, or rr_last_error() for the
   stateless helpers; both strings stay valid until the next call on the same
   pipeline / thread. */

#include <stddef.h>

#if defined(_WIN32)
#  if defined(RAINRIG_BUILDING)
#    define RAINRIG_API __declspec(dllexport)
#  else
#    define RAINRIG_API __declspec(dllimport)
#  endif
#else
#  define RAINRIG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rr_status {
  RR_OK = 0,
  RR_INVALID_ARGUMENT = 1,
  RR_CONFIG = 2,
  RR_IO = 3,
  RR_MATRIX = 4,
  RR_INSUFFICIENT_DATA = 5,
  RR_RANK_DEFICIENT = 6,
  RR_DETECTION = 7,
  RR_SHAPE = 8,
  RR_DEVICE = 9,
  RR_PAIRING = 10,
  RR_SAMPLING = 11,
  RR_PRECONDITION = 12,
  RR_DIVERGENCE = 13,
  RR_UNDEFINED = 14,
  RR_INTERNAL = 99
} rr_status;

typedef enum rr_capture_pass { RR_PASS_CLEAR = 0, RR_PASS_RAINY = 1, RR_PASS_BOTH = 2 } rr_capture_pass;

typedef struct rr_pipeline rr_pipeline;

RAINRIG_API const char* rr_version(void);
RAINRIG_API const char* rr_status_string(rr_status status);
/* Message of the last failed stateless call on this thread ("" if none). */
RAINRIG_API const char* rr_last_error(void);

/* config_path may be NULL for built-in defaults. Unknown keys are rejected. */
RAINRIG_API rr_status rr_pipeline_create(const char* config_path, rr_pipeline** out);
RAINRIG_API void rr_pipeline_destroy(rr_pipeline* p);
RAINRIG_API const char* rr_pipeline_last_error(const rr_pipeline* p);

/* key is "section.key", e.g. "train.epochs". */
RAINRIG_API rr_status rr_pipeline_set(rr_pipeline* p, const char* key, const char* value);
/* Copies the value into buf (NUL-terminated). *needed, when given, receives
   the full length plus one; a short buffer yields RR_INVALID_ARGUMENT. */
RAINRIG_API rr_status rr_pipeline_get(const rr_pipeline* p, const char* key, char* buf, size_t cap, size_t* needed);
RAINRIG_API rr_status rr_resolved_config(const rr_pipeline* p, char* buf, size_t cap, size_t* needed);

RAINRIG_API rr_status rr_calibrate(rr_pipeline* p, double* mean_reprojection_error_px);
RAINRIG_API rr_status rr_capture(rr_pipeline* p, rr_capture_pass pass);
RAINRIG_API rr_status rr_build_dataset(rr_pipeline* p);
RAINRIG_API rr_status rr_train(rr_pipeline* p);
RAINRIG_API rr_status rr_finetune(rr_pipeline* p);
/* input: a PNG file or a directory of PNGs; one output per input, same name. */
RAINRIG_API rr_status rr_derain(rr_pipeline* p, const char* input, const char* output, size_t* written);
RAINRIG_API rr_status rr_evaluate(rr_pipeline* p, int segmentation);
/* Rendered tables of the stored report. */
RAINRIG_API rr_status rr_report(rr_pipeline* p, char* buf, size_t cap, size_t* needed);

/* Stateless helpers. Images are interleaved float pixels in [0, 1],
   width * height * channels values, channels 1 or 3. */
RAINRIG_API rr_status rr_psnr(const float* a, const float* b, int width, int height, int channels, double* out);
RAINRIG_API rr_status rr_ssim(const float* a, const float* b, int width, int height, int channels, double* out);

/* screen_xy / image_xy: n interleaved (x, y) points. h_out receives the
   screen -> image homography in row-major order with h[8] = 1. */
RAINRIG_API rr_status rr_homography_estimate(const double* screen_xy, const double* image_xy, size_t n, int robust,
                                             double h_out[9], double* mean_reprojection_error_px);

#ifdef __cplusplus
}
#endif

#endif

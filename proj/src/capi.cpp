#include "rainrig/rainrig.h"

#include <cstring>
#include <exception>
#include <string>
#include <vector>

#include "calibration.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "pipeline.hpp"

struct rr_pipeline {
  rainrig::Pipeline pipeline;
  std::string last_error;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
rr_status guarded(std::string& err, F&& f) {
  try {
    f();
    err.clear();
    return RR_OK;
  } catch (const rainrig::Error& e) {
    err = e.what();
    return static_cast<rr_status>(e.code());
  } catch (const std::exception& e) {
    err = e.what();
    return RR_INTERNAL;
  } catch (...) {
    err = "unknown failure";
    return RR_INTERNAL;
  }
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf) {
    rainrig::require(needed != nullptr, rainrig::ErrorCode::kInvalidArgument, "need a buffer or a length pointer");
    return;
  }
  rainrig::require(cap > s.size(), rainrig::ErrorCode::kInvalidArgument,
                   "buffer too small: need " + std::to_string(s.size() + 1) + " bytes");
  std::memcpy(buf, s.c_str(), s.size() + 1);
}

rainrig::Image wrap(const float* px, int w, int h, int ch) {
  rainrig::require(px != nullptr, rainrig::ErrorCode::kInvalidArgument, "null image pointer");
  rainrig::require(w > 0 && h > 0 && (ch == 1 || ch == 3), rainrig::ErrorCode::kInvalidArgument,
                   "image must be positive-sized with 1 or 3 channels");
  rainrig::Image img(w, h, ch);
  std::memcpy(img.data().data(), px, sizeof(float) * static_cast<size_t>(w) * h * ch);
  return img;
}

}  // namespace

extern "C" {

const char* rr_version(void) { return "0.1.0"; }

const char* rr_status_string(rr_status status) {
  switch (status) {
    case RR_OK: return "ok";
    case RR_INVALID_ARGUMENT: return "invalid argument";
    case RR_CONFIG: return "configuration error";
    case RR_IO: return "i/o error";
    case RR_MATRIX: return "matrix error";
    case RR_INSUFFICIENT_DATA: return "insufficient data";
    case RR_RANK_DEFICIENT: return "rank deficient";
    case RR_DETECTION: return "pattern detection failed";
    case RR_SHAPE: return "shape error";
    case RR_DEVICE: return "device error";
    case RR_PAIRING: return "pairing error";
    case RR_SAMPLING: return "sampling error";
    case RR_PRECONDITION: return "precondition not met";
    case RR_DIVERGENCE: return "training diverged";
    case RR_UNDEFINED: return "undefined result";
    case RR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* rr_last_error(void) { return g_last_error.c_str(); }

rr_status rr_pipeline_create(const char* config_path, rr_pipeline** out) {
  if (!out) {
    g_last_error = "out pointer is null";
    return RR_INVALID_ARGUMENT;
  }
  *out = nullptr;
  return guarded(g_last_error, [&] {
    rainrig::PipelineConfig cfg = config_path ? rainrig::PipelineConfig::load(config_path) : rainrig::PipelineConfig();
    *out = new rr_pipeline{rainrig::Pipeline(std::move(cfg)), {}};
  });
}

void rr_pipeline_destroy(rr_pipeline* p) { delete p; }

const char* rr_pipeline_last_error(const rr_pipeline* p) { return p ? p->last_error.c_str() : "null pipeline"; }

#define RR_CHECK_PIPELINE(p)                 \
  do {                                       \
    if (!(p)) {                              \
      g_last_error = "pipeline is null";     \
      return RR_INVALID_ARGUMENT;            \
    }                                        \
  } while (0)

rr_status rr_pipeline_set(rr_pipeline* p, const char* key, const char* value) {
  RR_CHECK_PIPELINE(p);
  return guarded(p->last_error, [&] {
    rainrig::require(key && value, rainrig::ErrorCode::kInvalidArgument, "key and value must be non-null");
    rainrig::PipelineConfig cfg = p->pipeline.config();
    cfg.set(key, value);
    p->pipeline = rainrig::Pipeline(std::move(cfg));
  });
}

rr_status rr_pipeline_get(const rr_pipeline* p, const char* key, char* buf, size_t cap, size_t* needed) {
  RR_CHECK_PIPELINE(p);
  return guarded(const_cast<rr_pipeline*>(p)->last_error, [&] {
    rainrig::require(key != nullptr, rainrig::ErrorCode::kInvalidArgument, "key must be non-null");
    copy_out(p->pipeline.config().get(key), buf, cap, needed);
  });
}

rr_status rr_resolved_config(const rr_pipeline* p, char* buf, size_t cap, size_t* needed) {
  RR_CHECK_PIPELINE(p);
  return guarded(const_cast<rr_pipeline*>(p)->last_error,
                 [&] { copy_out(p->pipeline.config().resolved(), buf, cap, needed); });
}

rr_status rr_calibrate(rr_pipeline* p, double* err) {
  RR_CHECK_PIPELINE(p);
  return guarded(p->last_error, [&] {
    const auto out = p->pipeline.calibrate();
    if (err) *err = out.result.screen_to_image.mean_reprojection_error;
  });
}

rr_status rr_capture(rr_pipeline* p, rr_capture_pass pass) {
  RR_CHECK_PIPELINE(p);
  return guarded(p->last_error, [&] {
    rainrig::CapturePass cp = rainrig::CapturePass::kBoth;
    if (pass == RR_PASS_CLEAR)
      cp = rainrig::CapturePass::kClear;
    else if (pass == RR_PASS_RAINY)
      cp = rainrig::CapturePass::kRainy;
    else
      rainrig::require(pass == RR_PASS_BOTH, rainrig::ErrorCode::kInvalidArgument, "unknown capture pass");
    p->pipeline.capture(cp);
  });
}

rr_status rr_build_dataset(rr_pipeline* p) {
  RR_CHECK_PIPELINE(p);
  return guarded(p->last_error, [&] { p->pipeline.build_dataset(); });
}

rr_status rr_train(rr_pipeline* p) {
  RR_CHECK_PIPELINE(p);
  return guarded(p->last_error, [&] { p->pipeline.train(); });
}

rr_status rr_finetune(rr_pipeline* p) {
  RR_CHECK_PIPELINE(p);
  return guarded(p->last_error, [&] { p->pipeline.finetune(); });
}

rr_status rr_derain(rr_pipeline* p, const char* input, const char* output, size_t* written) {
  RR_CHECK_PIPELINE(p);
  return guarded(p->last_error, [&] {
    rainrig::require(input && output, rainrig::ErrorCode::kInvalidArgument, "input and output must be non-null");
    const auto files = p->pipeline.derain(input, output);
    if (written) *written = files.size();
  });
}

rr_status rr_evaluate(rr_pipeline* p, int segmentation) {
  RR_CHECK_PIPELINE(p);
  return guarded(p->last_error, [&] { p->pipeline.evaluate(segmentation != 0); });
}

rr_status rr_report(rr_pipeline* p, char* buf, size_t cap, size_t* needed) {
  RR_CHECK_PIPELINE(p);
  return guarded(p->last_error, [&] { copy_out(p->pipeline.report(), buf, cap, needed); });
}

rr_status rr_psnr(const float* a, const float* b, int width, int height, int channels, double* out) {
  return guarded(g_last_error, [&] {
    rainrig::require(out != nullptr, rainrig::ErrorCode::kInvalidArgument, "out pointer is null");
    *out = rainrig::eval::psnr(wrap(a, width, height, channels), wrap(b, width, height, channels));
  });
}

rr_status rr_ssim(const float* a, const float* b, int width, int height, int channels, double* out) {
  return guarded(g_last_error, [&] {
    rainrig::require(out != nullptr, rainrig::ErrorCode::kInvalidArgument, "out pointer is null");
    *out = rainrig::eval::ssim(wrap(a, width, height, channels), wrap(b, width, height, channels));
  });
}

rr_status rr_homography_estimate(const double* screen_xy, const double* image_xy, size_t n, int robust,
                                 double h_out[9], double* err) {
  return guarded(g_last_error, [&] {
    rainrig::require(screen_xy && image_xy && h_out, rainrig::ErrorCode::kInvalidArgument, "null pointer argument");
    std::vector<rainrig::calib::Correspondence> c(n);
    for (size_t i = 0; i < n; ++i)
      c[i] = {{screen_xy[2 * i], screen_xy[2 * i + 1]}, {image_xy[2 * i], image_xy[2 * i + 1]}};
    rainrig::calib::EstimateOptions opt;
    opt.robust = robust != 0;
    const auto est = rainrig::calib::estimate_homography(c, opt);
    const auto h = est.h.row_major();
    for (int i = 0; i < 9; ++i) h_out[i] = h[i];
    if (err) *err = est.mean_reprojection_error;
  });
}

}  // extern "C"

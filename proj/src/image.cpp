#include "image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "error.hpp"

namespace rainrig {

Image::Image(int width, int height, int channels, float fill)
    : width_(width), height_(height), channels_(channels) {
  require(width > 0 && height > 0, ErrorCode::kInvalidArgument, "image dimensions must be positive");
  require(channels == 1 || channels == 3, ErrorCode::kInvalidArgument, "image must have 1 or 3 channels");
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

float luminance(const Image& img, int x, int y) {
  if (img.channels() == 1) return img.at(x, y, 0);
  return 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) + 0.114f * img.at(x, y, 2);
}

Image to_gray(const Image& img) {
  if (img.channels() == 1) return img;
  Image out(img.width(), img.height(), 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(x, y, 0) = luminance(img, x, y);
  return out;
}

double mean_luminance(const Image& img) {
  double sum = 0.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) sum += luminance(img, x, y);
  return sum / static_cast<double>(img.pixel_count());
}

namespace {

void bilinear_core(const Image& img, double x, double y, std::span<float> out) {
  const int w = img.width();
  const int h = img.height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  for (int c = 0; c < img.channels(); ++c) {
    // Integer positions take the exact source value.
    if (fx == 0.0 && fy == 0.0) {
      out[c] = img.at(x0, y0, c);
      continue;
    }
    const double top = img.at(x0, y0, c) * (1.0 - fx) + img.at(x1, y0, c) * fx;
    const double bot = img.at(x0, y1, c) * (1.0 - fx) + img.at(x1, y1, c) * fx;
    out[c] = static_cast<float>(top * (1.0 - fy) + bot * fy);
  }
}

}  // namespace

bool sample_bilinear(const Image& img, double x, double y, std::span<float> out) {
  if (!std::isfinite(x) || !std::isfinite(y)) return false;
  if (x < -0.5 || y < -0.5 || x > img.width() - 0.5 || y > img.height() - 0.5) return false;
  bilinear_core(img, x, y, out);
  return true;
}

void sample_clamped(const Image& img, double x, double y, std::span<float> out) {
  if (!std::isfinite(x)) x = 0.0;
  if (!std::isfinite(y)) y = 0.0;
  bilinear_core(img, x, y, out);
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;

  const int w = img.width();
  const int h = img.height();
  const int ch = img.channels();
  Image tmp(w, h, ch);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * img.at(std::clamp(x + i, 0, w - 1), y, c);
        tmp.at(x, y, c) = static_cast<float>(acc);
      }
  Image out(w, h, ch);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp.at(x, std::clamp(y + i, 0, h - 1), c);
        out.at(x, y, c) = static_cast<float>(acc);
      }
  return out;
}

void clamp_unit(Image& img) {
  for (float& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
}

double mean_abs_diff(const Image& a, const Image& b, int margin) {
  require(a.size() == b.size() && a.channels() == b.channels(), ErrorCode::kShape, "image shapes differ");
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = margin; y < a.height() - margin; ++y)
    for (int x = margin; x < a.width() - margin; ++x)
      for (int c = 0; c < a.channels(); ++c) {
        sum += std::abs(static_cast<double>(a.at(x, y, c)) - b.at(x, y, c));
        ++n;
      }
  require(n > 0, ErrorCode::kShape, "margin leaves no pixels");
  return sum / static_cast<double>(n);
}

namespace {

std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
  const int type = img.channels() == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat mat(img.height(), img.width(), type);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x) {
      if (img.channels() == 1) {
        row[x] = to_u8(img.at(x, y, 0));
      } else {
        // OpenCV stores BGR.
        row[3 * x + 0] = to_u8(img.at(x, y, 2));
        row[3 * x + 1] = to_u8(img.at(x, y, 1));
        row[3 * x + 2] = to_u8(img.at(x, y, 0));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) fail(ErrorCode::kIo, "cannot write image " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) fail(ErrorCode::kIo, "cannot read image " + path.string());
  if (mat.depth() != CV_8U) mat.convertTo(mat, CV_8U, mat.depth() == CV_16U ? 1.0 / 257.0 : 255.0);
  if (mat.channels() == 4) cv::cvtColor(mat, mat, cv::COLOR_BGRA2BGR);
  Image img(mat.cols, mat.rows, mat.channels() == 1 ? 1 : 3);
  for (int y = 0; y < mat.rows; ++y) {
    const auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < mat.cols; ++x) {
      if (img.channels() == 1) {
        img.at(x, y, 0) = row[x] / 255.0f;
      } else {
        img.at(x, y, 0) = row[3 * x + 2] / 255.0f;
        img.at(x, y, 1) = row[3 * x + 1] / 255.0f;
        img.at(x, y, 2) = row[3 * x + 0] / 255.0f;
      }
    }
  }
  return img;
}

void write_class_png(const std::filesystem::path& path, const ClassMap& map) {
  cv::Mat mat(map.height, map.width, CV_8UC1);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      const auto v = map.at(x, y);
      require(v >= 0 && v <= 255, ErrorCode::kInvalidArgument, "class id does not fit 8-bit label PNG");
      mat.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(v);
    }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) fail(ErrorCode::kIo, "cannot write label map " + path.string());
}

ClassMap read_class_png(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) fail(ErrorCode::kIo, "cannot read label map " + path.string());
  require(mat.channels() == 1, ErrorCode::kIo, "label map must be single-channel: " + path.string());
  ClassMap map{mat.cols, mat.rows, std::vector<std::int32_t>(static_cast<std::size_t>(mat.cols) * mat.rows)};
  for (int y = 0; y < mat.rows; ++y)
    for (int x = 0; x < mat.cols; ++x)
      map.at(x, y) = mat.depth() == CV_16U ? mat.at<std::uint16_t>(y, x) : mat.at<std::uint8_t>(y, x);
  return map;
}

Image quantize8(const Image& img) {
  Image out = img;
  for (float& v : out.data()) v = to_u8(v) / 255.0f;
  return out;
}

}  // namespace rainrig

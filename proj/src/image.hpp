#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rainrig {

struct Size {
  int width = 0;
  int height = 0;
  bool operator==(const Size&) const = default;
};

// Interleaved (HWC) float image, nominal intensity range [0, 1], RGB order.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  Size size() const { return {width_, height_}; }
  bool empty() const { return data_.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  float& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  float at(int x, int y, int c) const { return data_[index(x, y, c)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

// Integer class map for segmentation labels and predictions.
struct ClassMap {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;

  std::int32_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
};

// ITU-R BT.601 luma.
float luminance(const Image& img, int x, int y);
Image to_gray(const Image& img);
double mean_luminance(const Image& img);

// Bilinear sample; coordinates are pixel centers. Returns false (leaving `out`
// untouched) if the point lies more than half a pixel outside the image.
bool sample_bilinear(const Image& img, double x, double y, std::span<float> out);
// Bilinear sample with edge clamping, always succeeds.
void sample_clamped(const Image& img, double x, double y, std::span<float> out);

// Separable Gaussian blur with edge clamping; sigma <= 0 returns a copy.
Image gaussian_blur(const Image& img, double sigma);

void clamp_unit(Image& img);
double mean_abs_diff(const Image& a, const Image& b, int margin = 0);

// 8-bit PNG I/O. Values are quantized with round-to-nearest.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);
void write_class_png(const std::filesystem::path& path, const ClassMap& map);
ClassMap read_class_png(const std::filesystem::path& path);

// Round-trips an image through 8-bit quantization without touching disk.
Image quantize8(const Image& img);

}  // namespace rainrig

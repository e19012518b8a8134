#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "image.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("rainrig_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Plain 3x3 projective map, row major; kept apart from the library's class.
using Mat3 = std::array<double, 9>;

inline std::array<double, 2> project(const Mat3& h, double x, double y) {
  const double w = h[6] * x + h[7] * y + h[8];
  return {(h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w};
}

inline Mat3 canonical(Mat3 h) {
  const double s = h[8];
  for (double& v : h) v /= s;
  return h;
}

inline double frob_rel(const Mat3& a, const Mat3& b) {
  double num = 0, den = 0;
  for (int i = 0; i < 9; ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

// Smooth, textured RGB test image.
inline rainrig::Image natural_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double f[3][4];
  for (auto& row : f)
    for (double& v : row) v = u(rng);
  rainrig::Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = 0.5 + 0.2 * std::sin(0.11 * x * (1 + f[c][0]) + 6 * f[c][1]) +
                         0.2 * std::cos(0.07 * y * (1 + f[c][2]) + 6 * f[c][3]) +
                         0.08 * std::sin(0.05 * (x + y));
        img.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return img;
}

inline rainrig::Image noise_image(int w, int h, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  rainrig::Image img(w, h, c);
  for (float& v : img.data()) v = u(rng);
  return img;
}

}  // namespace testutil

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "image.hpp"

namespace rainrig::calib {

enum class MarkerStyle { kCheckerboard, kCircles };

// For checkerboards, grid_rows x grid_cols counts inner corners; for circles,
// it counts circle markers.
struct TestPatternSpec {
  int grid_rows = 7;
  int grid_cols = 5;
  int cell_px = 32;
  int margin_px = 32;
  MarkerStyle marker_style = MarkerStyle::kCheckerboard;

  void validate() const;
  // Minimal image size that holds the grid plus margins.
  Size required_size() const;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct Correspondence {
  Point2 screen_pt;  // monitor pixel coordinates
  Point2 image_pt;   // camera pixel coordinates
};

// Non-singular projective map kept in canonical form h(2,2) = 1.
class Homography {
 public:
  Homography() : h_(Eigen::Matrix3d::Identity()) {}
  // Throws kMatrix if m is singular or cannot be brought to canonical form.
  explicit Homography(const Eigen::Matrix3d& m);

  static Homography identity() { return Homography(); }
  static Homography translation(double tx, double ty);
  static Homography from_row_major(std::span<const double> values);

  const Eigen::Matrix3d& matrix() const { return h_; }
  std::array<double, 9> row_major() const;

  Point2 apply(Point2 p) const;
  Homography inverse() const;
  // (a * b).apply(p) == a.apply(b.apply(p))
  Homography operator*(const Homography& rhs) const;

 private:
  Eigen::Matrix3d h_;
};

// Relative Frobenius distance between canonical forms.
double frobenius_relative(const Homography& a, const Homography& b);

Image generate_test_pattern(const TestPatternSpec& spec, Size size);
// Marker centers (inner corners for checkerboards) in row-major order.
std::vector<Point2> pattern_points(const TestPatternSpec& spec);

// Detects the pattern and returns points in pattern_points() order.
// Throws kDetection when fewer markers are found than the TestPatternSpec asks for.
std::vector<Point2> detect_pattern_points(const Image& image, const TestPatternSpec& spec);

struct EstimateOptions {
  bool robust = false;
  double inlier_threshold_px = 1.5;
  double confidence = 0.999;
  int max_iterations = 5000;
  std::uint64_t seed = 0;
};

struct HomographyEstimate {
  Homography h;  // maps screen_pt -> image_pt
  std::vector<bool> inliers;
  double mean_reprojection_error = 0.0;  // over inliers
};

HomographyEstimate estimate_homography(std::span<const Correspondence> correspondences,
                                       const EstimateOptions& options = {});

// Inverse-mapped bilinear resampling: output pixel p takes the source value at
// h^-1(p). Pixels mapping outside the source get `fill`.
Image warp_image(const Image& image, const Homography& h, Size out_size, float fill = 0.0f);

double reprojection_error(const Homography& h, const Correspondence& c);

// Optional mapping applied to detected image points before estimation, e.g. a
// lens undistortion model supplied by the caller.
using PointHook = std::function<Point2(Point2)>;

struct CalibrationResult {
  HomographyEstimate screen_to_image;
  Homography alignment;  // camera image -> monitor coordinates
  std::size_t point_count = 0;
};

CalibrationResult calibrate_from_capture(const Image& capture, const TestPatternSpec& spec,
                                         const EstimateOptions& options = {}, const PointHook& undistort = {});

}  // namespace rainrig::calib

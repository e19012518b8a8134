#include "calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <opencv2/calib3d.hpp>
#include <opencv2/imgproc.hpp>

#include "error.hpp"
#include "random.hpp"

namespace rainrig::calib {

void TestPatternSpec::validate() const {
  require(grid_rows >= 3 && grid_cols >= 3, ErrorCode::kConfig, "test pattern grid must be at least 3x3");
  require(cell_px >= 8, ErrorCode::kConfig, "test pattern cell_px must be >= 8");
  require(margin_px >= 0, ErrorCode::kConfig, "test pattern margin_px must be >= 0");
}

Size TestPatternSpec::required_size() const {
  const int extra = marker_style == MarkerStyle::kCheckerboard ? 1 : 0;
  return {(grid_cols + extra) * cell_px + 2 * margin_px, (grid_rows + extra) * cell_px + 2 * margin_px};
}

// --- Homography -------------------------------------------------------------

Homography::Homography(const Eigen::Matrix3d& m) {
  require(m.allFinite(), ErrorCode::kMatrix, "homography has non-finite entries");
  const double scale = m.cwiseAbs().maxCoeff();
  require(scale > 0.0, ErrorCode::kMatrix, "homography is zero");
  require(std::abs(m(2, 2)) > 1e-12 * scale, ErrorCode::kMatrix, "homography cannot be normalized (h22 = 0)");
  h_ = m / m(2, 2);
  const double s = h_.cwiseAbs().maxCoeff();
  require(std::abs(h_.determinant()) > 1e-12 * s * s * s, ErrorCode::kMatrix, "homography is singular");
}

Homography Homography::translation(double tx, double ty) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return Homography(m);
}

Homography Homography::from_row_major(std::span<const double> values) {
  require(values.size() == 9, ErrorCode::kInvalidArgument, "homography needs 9 values");
  Eigen::Matrix3d m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = values[i];
  return Homography(m);
}

std::array<double, 9> Homography::row_major() const {
  std::array<double, 9> out{};
  for (int i = 0; i < 9; ++i) out[i] = h_(i / 3, i % 3);
  return out;
}

Point2 Homography::apply(Point2 p) const {
  const Eigen::Vector3d q = h_ * Eigen::Vector3d(p.x, p.y, 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

Homography Homography::inverse() const { return Homography(h_.inverse()); }

Homography Homography::operator*(const Homography& rhs) const { return Homography(h_ * rhs.h_); }

double frobenius_relative(const Homography& a, const Homography& b) {
  return (a.matrix() - b.matrix()).norm() / b.matrix().norm();
}

double reprojection_error(const Homography& h, const Correspondence& c) {
  const Point2 p = h.apply(c.screen_pt);
  return std::hypot(p.x - c.image_pt.x, p.y - c.image_pt.y);
}

// --- Test pattern -------------------------------------------------------------

namespace {

// Length of [a0, a1] ∩ [b0, b1].
double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace

std::vector<Point2> pattern_points(const TestPatternSpec& spec) {
  spec.validate();
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(spec.grid_rows) * spec.grid_cols);
  const double m = spec.margin_px;
  const double c = spec.cell_px;
  for (int r = 0; r < spec.grid_rows; ++r)
    for (int k = 0; k < spec.grid_cols; ++k) {
      if (spec.marker_style == MarkerStyle::kCheckerboard)
        pts.push_back({m + (k + 1) * c, m + (r + 1) * c});
      else
        pts.push_back({m + (k + 0.5) * c, m + (r + 0.5) * c});
    }
  return pts;
}

Image generate_test_pattern(const TestPatternSpec& spec, Size size) {
  spec.validate();
  const Size need = spec.required_size();
  require(size.width >= need.width && size.height >= need.height, ErrorCode::kConfig,
          "image " + std::to_string(size.width) + "x" + std::to_string(size.height) + " too small for pattern (needs " +
              std::to_string(need.width) + "x" + std::to_string(need.height) + ")");

  Image img(size.width, size.height, 1, 1.0f);
  const double m = spec.margin_px;
  const double cell = spec.cell_px;

  if (spec.marker_style == MarkerStyle::kCheckerboard) {
    // Pixel (x, y) covers [x-0.5, x+0.5]^2; value is the exact area average,
    // which puts every inner corner on an integer pixel center.
    const int squares_x = spec.grid_cols + 1;
    const int squares_y = spec.grid_rows + 1;
    for (int y = 0; y < size.height; ++y)
      for (int x = 0; x < size.width; ++x) {
        double black = 0.0;
        for (int sy = 0; sy < squares_y; ++sy) {
          const double fy = overlap(y - 0.5, y + 0.5, m + sy * cell, m + (sy + 1) * cell);
          if (fy == 0.0) continue;
          for (int sx = 0; sx < squares_x; ++sx) {
            if ((sx + sy) % 2 != 0) continue;
            black += fy * overlap(x - 0.5, x + 0.5, m + sx * cell, m + (sx + 1) * cell);
          }
        }
        img.at(x, y, 0) = static_cast<float>(1.0 - black);
      }
    return img;
  }

  // Circles: 8x8 supersampling per pixel.
  constexpr int kSub = 8;
  const double radius = 0.3 * cell;
  const auto centers = pattern_points(spec);
  for (const Point2& c : centers) {
    const int x0 = static_cast<int>(std::floor(c.x - radius - 1));
    const int x1 = static_cast<int>(std::ceil(c.x + radius + 1));
    const int y0 = static_cast<int>(std::floor(c.y - radius - 1));
    const int y1 = static_cast<int>(std::ceil(c.y + radius + 1));
    for (int y = std::max(0, y0); y <= std::min(size.height - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(size.width - 1, x1); ++x) {
        int hits = 0;
        for (int j = 0; j < kSub; ++j)
          for (int i = 0; i < kSub; ++i) {
            const double sx = x - 0.5 + (i + 0.5) / kSub;
            const double sy = y - 0.5 + (j + 0.5) / kSub;
            if (std::hypot(sx - c.x, sy - c.y) <= radius) ++hits;
          }
        img.at(x, y, 0) = static_cast<float>(1.0 - static_cast<double>(hits) / (kSub * kSub));
      }
  }
  return img;
}

// --- Detection ----------------------------------------------------------------

namespace {

cv::Mat to_gray8(const Image& image) {
  const Image gray = to_gray(image);
  cv::Mat mat(gray.height(), gray.width(), CV_8UC1);
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < gray.width(); ++x)
      mat.at<std::uint8_t>(y, x) =
          static_cast<std::uint8_t>(std::lround(std::clamp(gray.at(x, y, 0), 0.0f, 1.0f) * 255.0f));
  return mat;
}

// The detector reports the grid in one of its symmetric orderings; pick the
// relabeling closest to the canonical layout (camera roughly fronto-parallel).
std::vector<Point2> canonical_order(const std::vector<cv::Point2f>& found, int rows, int cols,
                                    const std::vector<Point2>& reference) {
  std::vector<Point2> best;
  double best_cost = std::numeric_limits<double>::infinity();
  const auto consider = [&](auto&& index_of) {
    std::vector<Point2> cand(found.size());
    double cost = 0.0;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const cv::Point2f p = found[index_of(r, c)];
        cand[static_cast<std::size_t>(r) * cols + c] = {p.x, p.y};
        const Point2& q = reference[static_cast<std::size_t>(r) * cols + c];
        cost += (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y);
      }
    if (cost < best_cost) {
      best_cost = cost;
      best = std::move(cand);
    }
  };
  // Detector layout rows x cols, row-major.
  for (int flip = 0; flip < 4; ++flip) {
    const bool fr = flip & 1;
    const bool fc = flip & 2;
    consider([&](int r, int c) { return (fr ? rows - 1 - r : r) * cols + (fc ? cols - 1 - c : c); });
  }
  // Detector may also transpose the grid (cols x rows).
  for (int flip = 0; flip < 4; ++flip) {
    const bool fr = flip & 1;
    const bool fc = flip & 2;
    consider([&](int r, int c) { return (fc ? cols - 1 - c : c) * rows + (fr ? rows - 1 - r : r); });
  }
  return best;
}

}  // namespace

std::vector<Point2> detect_pattern_points(const Image& image, const TestPatternSpec& spec) {
  spec.validate();
  const cv::Mat gray = to_gray8(image);
  const int expected = spec.grid_rows * spec.grid_cols;
  std::vector<cv::Point2f> found;
  bool ok = false;

  if (spec.marker_style == MarkerStyle::kCheckerboard) {
    for (const cv::Size& pattern : {cv::Size(spec.grid_cols, spec.grid_rows), cv::Size(spec.grid_rows, spec.grid_cols)}) {
      found.clear();
      ok = cv::findChessboardCorners(gray, pattern, found, cv::CALIB_CB_ADAPTIVE_THRESH | cv::CALIB_CB_NORMALIZE_IMAGE);
      if (ok) break;
    }
    if (ok) {
      const int win = std::max(2, std::min(spec.cell_px / 3, 11));
      cv::cornerSubPix(gray, found, cv::Size(win, win), cv::Size(-1, -1),
                       cv::TermCriteria(cv::TermCriteria::EPS + cv::TermCriteria::COUNT, 100, 1e-4));
    }
  } else {
    for (const cv::Size& pattern : {cv::Size(spec.grid_cols, spec.grid_rows), cv::Size(spec.grid_rows, spec.grid_cols)}) {
      found.clear();
      ok = cv::findCirclesGrid(gray, pattern, found, cv::CALIB_CB_SYMMETRIC_GRID);
      if (ok) break;
    }
  }

  if (!ok || static_cast<int>(found.size()) != expected) {
    fail(ErrorCode::kDetection, "pattern detection failed: found " + std::to_string(ok ? found.size() : 0) + " of " +
                                    std::to_string(expected) + " markers");
  }
  return canonical_order(found, spec.grid_rows, spec.grid_cols, pattern_points(spec));
}

// --- Estimation ---------------------------------------------------------------

namespace {

// Hartley isotropic normalization: centroid to origin, mean distance sqrt(2).
Eigen::Matrix3d normalizer(const std::vector<Point2>& pts) {
  double cx = 0.0;
  double cy = 0.0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const auto& p : pts) dist += std::hypot(p.x - cx, p.y - cy);
  dist /= static_cast<double>(pts.size());
  require(dist > 0.0, ErrorCode::kRankDeficient, "all points coincide");
  const double s = std::sqrt(2.0) / dist;
  Eigen::Matrix3d t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

bool collinear(const Point2& a, const Point2& b, const Point2& c, double scale) {
  const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  return std::abs(cross) <= 1e-9 * scale * scale;
}

bool degenerate_minimal(const Correspondence* const* pts) {
  double scale = 0.0;
  for (int i = 0; i < 4; ++i) scale = std::max({scale, std::abs(pts[i]->screen_pt.x), std::abs(pts[i]->screen_pt.y), 1.0});
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      for (int k = j + 1; k < 4; ++k) {
        if (collinear(pts[i]->screen_pt, pts[j]->screen_pt, pts[k]->screen_pt, scale)) return true;
        if (collinear(pts[i]->image_pt, pts[j]->image_pt, pts[k]->image_pt, scale)) return true;
      }
  return false;
}

Homography dlt(const std::vector<const Correspondence*>& pts) {
  std::vector<Point2> src;
  std::vector<Point2> dst;
  for (const auto* c : pts) {
    src.push_back(c->screen_pt);
    dst.push_back(c->image_pt);
  }
  const Eigen::Matrix3d ts = normalizer(src);
  const Eigen::Matrix3d td = normalizer(dst);

  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d s = ts * Eigen::Vector3d(src[i].x, src[i].y, 1.0);
    const Eigen::Vector3d d = td * Eigen::Vector3d(dst[i].x, dst[i].y, 1.0);
    const double x = s.x() / s.z();
    const double y = s.y() / s.z();
    const double u = d.x() / d.z();
    const double v = d.y() / d.z();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A one-dimensional null space is required; a second (near-)zero singular
  // value means the configuration does not pin down H.
  if (sv.size() >= 8 && sv(7) <= 1e-10 * sv(0)) fail(ErrorCode::kRankDeficient, "degenerate correspondence configuration");
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d m = td.inverse() * hn * ts;
  try {
    return Homography(m);
  } catch (const Error&) {
    fail(ErrorCode::kRankDeficient, "degenerate correspondence configuration");
  }
}

// Gauss-Newton on forward reprojection error with h22 fixed to 1.
Homography refine(const Homography& init, const std::vector<const Correspondence*>& pts) {
  if (pts.size() <= 4) return init;
  Eigen::Matrix<double, 8, 1> p;
  const auto rm = init.row_major();
  for (int i = 0; i < 8; ++i) p(i) = rm[i];

  const auto cost_of = [&](const Eigen::Matrix<double, 8, 1>& q) {
    double c = 0.0;
    for (const auto* cr : pts) {
      const double x = cr->screen_pt.x;
      const double y = cr->screen_pt.y;
      const double w = q(6) * x + q(7) * y + 1.0;
      const double u = (q(0) * x + q(1) * y + q(2)) / w - cr->image_pt.x;
      const double v = (q(3) * x + q(4) * y + q(5)) / w - cr->image_pt.y;
      c += u * u + v * v;
    }
    return c;
  };

  double cost = cost_of(p);
  double lambda = 1e-3;
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::Matrix<double, 8, 8> jtj = Eigen::Matrix<double, 8, 8>::Zero();
    Eigen::Matrix<double, 8, 1> jtr = Eigen::Matrix<double, 8, 1>::Zero();
    for (const auto* cr : pts) {
      const double x = cr->screen_pt.x;
      const double y = cr->screen_pt.y;
      const double w = p(6) * x + p(7) * y + 1.0;
      const double nu = p(0) * x + p(1) * y + p(2);
      const double nv = p(3) * x + p(4) * y + p(5);
      const double ru = nu / w - cr->image_pt.x;
      const double rv = nv / w - cr->image_pt.y;
      Eigen::Matrix<double, 8, 1> ju;
      Eigen::Matrix<double, 8, 1> jv;
      ju << x / w, y / w, 1 / w, 0, 0, 0, -nu * x / (w * w), -nu * y / (w * w);
      jv << 0, 0, 0, x / w, y / w, 1 / w, -nv * x / (w * w), -nv * y / (w * w);
      jtj += ju * ju.transpose() + jv * jv.transpose();
      jtr += ju * ru + jv * rv;
    }
    Eigen::Matrix<double, 8, 8> damped = jtj;
    damped.diagonal() *= (1.0 + lambda);
    const Eigen::Matrix<double, 8, 1> step = damped.ldlt().solve(-jtr);
    if (!step.allFinite()) break;
    const Eigen::Matrix<double, 8, 1> cand = p + step;
    const double cand_cost = cost_of(cand);
    if (cand_cost < cost) {
      const double gain = cost - cand_cost;
      p = cand;
      cost = cand_cost;
      lambda = std::max(lambda * 0.3, 1e-12);
      if (gain <= 1e-15 * (1.0 + cost)) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e8) break;
    }
  }
  Eigen::Matrix3d m;
  m << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), 1.0;
  try {
    return Homography(m);
  } catch (const Error&) {
    return init;
  }
}

void validate_points(std::span<const Correspondence> cs) {
  for (const auto& c : cs) {
    require(std::isfinite(c.screen_pt.x) && std::isfinite(c.screen_pt.y) && std::isfinite(c.image_pt.x) &&
                std::isfinite(c.image_pt.y),
            ErrorCode::kInvalidArgument, "correspondence coordinates must be finite");
  }
}

}  // namespace

HomographyEstimate estimate_homography(std::span<const Correspondence> correspondences, const EstimateOptions& options) {
  const std::size_t n = correspondences.size();
  if (n < 4) fail(ErrorCode::kInsufficientData, "need at least 4 correspondences, got " + std::to_string(n));
  validate_points(correspondences);

  std::vector<const Correspondence*> all;
  all.reserve(n);
  for (const auto& c : correspondences) all.push_back(&c);

  if (n == 4) {
    if (degenerate_minimal(all.data())) fail(ErrorCode::kRankDeficient, "three of the four points are collinear");
  }

  std::vector<bool> inliers(n, true);

  if (options.robust && n > 4) {
    Rng rng(options.seed);
    std::size_t best_count = 0;
    double best_err = std::numeric_limits<double>::infinity();
    std::vector<bool> best_mask;
    const double log_fail = std::log(1.0 - options.confidence);
    double needed = static_cast<double>(options.max_iterations);
    for (int iter = 0; iter < options.max_iterations && iter < needed; ++iter) {
      std::array<std::size_t, 4> idx{};
      for (int k = 0; k < 4; ++k) {
        bool dup = true;
        while (dup) {
          idx[k] = rng.below(n);
          dup = std::find(idx.begin(), idx.begin() + k, idx[k]) != idx.begin() + k;
        }
      }
      const Correspondence* sample[4] = {all[idx[0]], all[idx[1]], all[idx[2]], all[idx[3]]};
      if (degenerate_minimal(sample)) continue;
      Homography h;
      try {
        h = dlt({sample[0], sample[1], sample[2], sample[3]});
      } catch (const Error&) {
        continue;
      }
      std::vector<bool> mask(n);
      std::size_t count = 0;
      double err_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = reprojection_error(h, correspondences[i]);
        mask[i] = std::isfinite(e) && e < options.inlier_threshold_px;
        if (mask[i]) {
          ++count;
          err_sum += e;
        }
      }
      if (count > best_count || (count == best_count && count > 0 && err_sum < best_err)) {
        best_count = count;
        best_err = err_sum;
        best_mask = std::move(mask);
        const double w = static_cast<double>(count) / static_cast<double>(n);
        const double p_good = std::pow(w, 4.0);
        if (p_good >= 1.0) {
          needed = 0;
        } else if (p_good > 0.0) {
          needed = std::min(needed, std::ceil(log_fail / std::log(1.0 - p_good)));
        }
      }
    }
    if (best_count < 4) fail(ErrorCode::kRankDeficient, "no consensus set with at least 4 inliers");
    inliers = best_mask;
  }

  Homography h;
  for (int round = 0; round < (options.robust ? 2 : 1); ++round) {
    std::vector<const Correspondence*> used;
    for (std::size_t i = 0; i < n; ++i)
      if (inliers[i]) used.push_back(all[i]);
    if (used.size() < 4) fail(ErrorCode::kRankDeficient, "fewer than 4 inliers after consensus");
    h = refine(dlt(used), used);
    if (options.robust) {
      // Re-derive the inlier set from the refit model.
      std::vector<bool> mask(n);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        mask[i] = reprojection_error(h, correspondences[i]) < options.inlier_threshold_px;
        count += mask[i];
      }
      if (count >= 4) inliers = mask;
    }
  }

  HomographyEstimate out{h, inliers, 0.0};
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (inliers[i]) {
      sum += reprojection_error(h, correspondences[i]);
      ++count;
    }
  out.mean_reprojection_error = sum / static_cast<double>(count);
  return out;
}

Image warp_image(const Image& image, const Homography& h, Size out_size, float fill) {
  require(out_size.width > 0 && out_size.height > 0, ErrorCode::kInvalidArgument, "output size must be positive");
  const Homography inv = h.inverse();
  const Eigen::Matrix3d& m = inv.matrix();
  Image out(out_size.width, out_size.height, image.channels(), fill);
  std::vector<float> px(image.channels());
  for (int y = 0; y < out_size.height; ++y)
    for (int x = 0; x < out_size.width; ++x) {
      const double w = m(2, 0) * x + m(2, 1) * y + m(2, 2);
      if (w <= 0.0) continue;
      const double sx = (m(0, 0) * x + m(0, 1) * y + m(0, 2)) / w;
      const double sy = (m(1, 0) * x + m(1, 1) * y + m(1, 2)) / w;
      // Snap round-off so that integer-preserving maps resample exactly.
      const double rx = std::round(sx);
      const double ry = std::round(sy);
      const double qx = std::abs(sx - rx) < 1e-9 ? rx : sx;
      const double qy = std::abs(sy - ry) < 1e-9 ? ry : sy;
      if (sample_bilinear(image, qx, qy, px))
        for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = px[c];
    }
  return out;
}

CalibrationResult calibrate_from_capture(const Image& capture, const TestPatternSpec& spec,
                                         const EstimateOptions& options, const PointHook& undistort) {
  const auto screen = pattern_points(spec);
  auto detected = detect_pattern_points(capture, spec);
  if (undistort)
    for (auto& p : detected) p = undistort(p);
  std::vector<Correspondence> cs;
  cs.reserve(screen.size());
  for (std::size_t i = 0; i < screen.size(); ++i) cs.push_back({screen[i], detected[i]});
  CalibrationResult result;
  result.screen_to_image = estimate_homography(cs, options);
  result.alignment = result.screen_to_image.h.inverse();
  result.point_count = cs.size();
  return result;
}

}  // namespace rainrig::calib

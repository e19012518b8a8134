#include "droplet_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "error.hpp"
#include "random.hpp"

namespace rainrig::sim {

void Droplet::validate() const {
  require(radius > 0.0, ErrorCode::kInvalidArgument, "droplet radius must be positive");
  require(height_ratio > 0.0 && height_ratio <= 1.0, ErrorCode::kInvalidArgument, "droplet height_ratio must be in (0, 1]");
  require(blur_sigma >= 0.0, ErrorCode::kInvalidArgument, "droplet blur_sigma must be >= 0");
  require(opacity >= 0.0 && opacity <= 1.0, ErrorCode::kInvalidArgument, "droplet opacity must be in [0, 1]");
  require(elongation >= 1.0, ErrorCode::kInvalidArgument, "droplet elongation must be >= 1");
}

// Angle-proportional fish-eye: the cap's edge slope grows with height_ratio,
// widening the field the droplet gathers light from.
double Droplet::source_scale() const { return 1.0 + 3.0 * height_ratio; }

double Droplet::area() const { return std::numbers::pi * radius * radius * elongation; }

double Droplet::normalized_radius(double x, double y) const {
  const double dx = x - center.x;
  const double dy = y - center.y;
  const double c = std::cos(angle_rad);
  const double s = std::sin(angle_rad);
  const double u = (dx * c + dy * s) / (radius * elongation);
  const double v = (-dx * s + dy * c) / radius;
  return std::sqrt(u * u + v * v);
}

void SceneGeometry::validate() const {
  require(pane_offset_mm < screen_distance_mm, ErrorCode::kConfig, "pane offset must be smaller than screen distance");
  require(pane_tilt_deg >= 0.0 && pane_tilt_deg < 90.0, ErrorCode::kConfig, "pane tilt must be in [0, 90)");
  require(pane_thickness_mm >= 0.0, ErrorCode::kConfig, "pane thickness must be >= 0");
  require(pane_refractive_index >= 1.0, ErrorCode::kConfig, "refractive index must be >= 1");
  require(monitor_width_mm > 0.0, ErrorCode::kConfig, "monitor width must be positive");
}

calib::Point2 SceneGeometry::refraction_shift(int width_px) const {
  const double theta = pane_tilt_deg * std::numbers::pi / 180.0;
  const double s = std::sin(theta);
  const double n = pane_refractive_index;
  const double shift_mm = pane_thickness_mm * s * (1.0 - std::cos(theta) / std::sqrt(n * n - s * s));
  // The pane tilts about a horizontal axis, so the displacement is vertical.
  return {0.0, shift_mm * width_px / monitor_width_mm};
}

// --- Sampling -------------------------------------------------------------------

namespace {

struct Box {
  int x0, y0, x1, y1;  // inclusive
};

Box footprint_box(const Droplet& d, Size plane) {
  const double reach = d.radius * d.elongation + 1.0;
  return {std::max(0, static_cast<int>(std::floor(d.center.x - reach))),
          std::max(0, static_cast<int>(std::floor(d.center.y - reach))),
          std::min(plane.width - 1, static_cast<int>(std::ceil(d.center.x + reach))),
          std::min(plane.height - 1, static_cast<int>(std::ceil(d.center.y + reach)))};
}

template <typename F>
void for_each_inside(const Droplet& d, Size plane, F&& f) {
  const Box b = footprint_box(d, plane);
  for (int y = b.y0; y <= b.y1; ++y)
    for (int x = b.x0; x <= b.x1; ++x) {
      const double rho = d.normalized_radius(x, y);
      if (rho < 1.0) f(x, y, rho);
    }
}

}  // namespace

std::vector<std::uint8_t> field_mask(const DropletField& field, Size plane) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(plane.width) * plane.height, 0);
  for (const auto& d : field.droplets)
    for_each_inside(d, plane, [&](int x, int y, double) { mask[static_cast<std::size_t>(y) * plane.width + x] = 1; });
  return mask;
}

double field_coverage(const DropletField& field) {
  if (field.plane.width <= 0 || field.plane.height <= 0) return 0.0;
  const auto mask = field_mask(field, field.plane);
  std::size_t on = 0;
  for (auto m : mask) on += m;
  return static_cast<double>(on) / static_cast<double>(mask.size());
}

DropletField sample_droplet_field(std::uint64_t seed, double density, Size plane, const SamplingParams& params) {
  require(density >= 0.0 && density <= 0.5, ErrorCode::kConfig, "droplet density must be in [0, 0.5]");
  require(params.min_radius > 0.0 && params.min_radius <= params.max_radius, ErrorCode::kConfig,
          "droplet radius range must satisfy 0 < min <= max");
  require(params.streak_fraction >= 0.0 && params.streak_fraction <= 1.0, ErrorCode::kConfig,
          "streak fraction must be in [0, 1]");
  require(plane.width > 0 && plane.height > 0, ErrorCode::kConfig, "droplet plane must be non-empty");

  DropletField field;
  field.seed = seed;
  field.density = density;
  field.plane = plane;
  if (density == 0.0) return field;

  Rng rng(seed);
  const double total = static_cast<double>(plane.width) * plane.height;
  const double lo = density * 0.97;
  const double hi = density * 1.03;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(plane.width) * plane.height, 0);
  std::size_t covered = 0;
  const double log_min = std::log(params.min_radius);
  const double log_max = std::log(params.max_radius);

  for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
    Droplet d;
    d.center = {rng.uniform(0.0, plane.width), rng.uniform(0.0, plane.height)};
    d.radius = std::exp(rng.uniform(log_min, log_max));
    d.height_ratio = rng.uniform(0.3, 0.9);
    d.blur_sigma = rng.uniform(0.0, 1.5);
    d.opacity = rng.uniform(0.85, 1.0);
    if (rng.uniform() < params.streak_fraction) {
      // Streaks run downward with a small sideways wobble.
      d.elongation = rng.uniform(2.0, 5.0);
      d.angle_rad = std::numbers::pi / 2.0 + 0.2 * rng.normal();
      d.radius = std::max(params.min_radius, d.radius * 0.5);
    } else {
      d.elongation = rng.uniform(1.0, 1.3);
      d.angle_rad = rng.uniform(0.0, std::numbers::pi);
    }

    std::size_t added = 0;
    for_each_inside(d, plane, [&](int x, int y, double) { added += mask[static_cast<std::size_t>(y) * plane.width + x] == 0; });
    if (added == 0) continue;
    if ((covered + added) / total > hi) continue;
    for_each_inside(d, plane, [&](int x, int y, double) { mask[static_cast<std::size_t>(y) * plane.width + x] = 1; });
    covered += added;
    field.droplets.push_back(d);
    if (covered / total >= lo) return field;
  }
  fail(ErrorCode::kSampling, "could not reach droplet density " + std::to_string(density) + " (reached " +
                                 std::to_string(covered / total) + ") within " + std::to_string(params.max_attempts) +
                                 " attempts");
}

// --- Rendering ------------------------------------------------------------------

namespace {

// Applies `d` to `canvas` in place; `scene_mean` is the gray level a droplet
// fades to when it gathers light from most of the frame.
void apply_droplet(Image& canvas, const Image& source, const Droplet& d, double scene_mean, const OpticsParams& optics,
                   std::vector<std::uint8_t>* mask) {
  d.validate();
  const Size plane = canvas.size();
  const Box b = footprint_box(d, plane);
  if (b.x0 > b.x1 || b.y0 > b.y1) return;

  const double k = d.source_scale();
  const double frame = static_cast<double>(plane.width) * plane.height;
  const double source_fraction = k * k * d.area() / frame;
  const double gray = std::clamp((source_fraction - optics.gray_threshold) / (1.0 - optics.gray_threshold), 0.0, 1.0);

  // Lens image over the box plus a blur margin.
  const int margin = d.blur_sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * d.blur_sigma)) + 1 : 0;
  const int ox = std::max(0, b.x0 - margin);
  const int oy = std::max(0, b.y0 - margin);
  const int ex = std::min(plane.width - 1, b.x1 + margin);
  const int ey = std::min(plane.height - 1, b.y1 + margin);
  const int ch = canvas.channels();
  Image lens(ex - ox + 1, ey - oy + 1, ch);
  std::vector<float> px(ch);
  for (int y = oy; y <= ey; ++y)
    for (int x = ox; x <= ex; ++x) {
      // Inverted, magnified view: offset r samples the scene at -k * r.
      const double sx = d.center.x - k * (x - d.center.x);
      const double sy = d.center.y - k * (y - d.center.y);
      sample_clamped(source, sx, sy, px);
      for (int c = 0; c < ch; ++c)
        lens.at(x - ox, y - oy, c) = static_cast<float>((1.0 - gray) * px[c] + gray * scene_mean);
    }
  if (d.blur_sigma > 0.0) lens = gaussian_blur(lens, d.blur_sigma);

  const double rim_start = 1.0 - optics.rim_width;
  for_each_inside(d, plane, [&](int x, int y, double rho) {
    double shade = 1.0;
    if (rho > rim_start) shade -= optics.rim_darkening * (1.0 - gray) * (rho - rim_start) / optics.rim_width;
    // One-pixel antialiased edge, still strictly inside the footprint.
    const double edge = std::clamp((1.0 - rho) * d.radius, 0.0, 1.0);
    const double alpha = d.opacity * edge;
    for (int c = 0; c < ch; ++c) {
      const double under = canvas.at(x, y, c);
      const double v = under + alpha * (shade * lens.at(x - ox, y - oy, c) - under);
      canvas.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    if (mask) (*mask)[static_cast<std::size_t>(y) * plane.width + x] = 1;
  });
}

}  // namespace

RenderedDroplet render_droplet(const Image& scene, const Droplet& d, const OpticsParams& optics) {
  RenderedDroplet out{scene, std::vector<std::uint8_t>(scene.pixel_count(), 0)};
  apply_droplet(out.patch, scene, d, mean_luminance(scene), optics, &out.mask);
  return out;
}

Image composite_rainy(const Image& scene, const DropletField& field, const OpticsParams& optics) {
  require(!scene.empty(), ErrorCode::kInvalidArgument, "scene must be non-empty");
  Image out = scene;
  if (field.droplets.empty()) return out;
  std::vector<const Droplet*> order;
  for (const auto& d : field.droplets) order.push_back(&d);
  std::stable_sort(order.begin(), order.end(), [](const Droplet* a, const Droplet* b) { return a->radius > b->radius; });
  const double mean = mean_luminance(scene);
  // Every droplet refracts the dry scene behind the glass.
  for (const Droplet* d : order) apply_droplet(out, scene, *d, mean, optics, nullptr);
  return out;
}

Image simulate_capture(const Image& displayed, PassKind pass, const DropletField* field, const SceneGeometry& geom,
                       const CaptureNoise& noise, Size expected_display, const OpticsParams& optics) {
  geom.validate();
  require(displayed.size() == expected_display, ErrorCode::kConfig,
          "displayed image " + std::to_string(displayed.width()) + "x" + std::to_string(displayed.height()) +
              " does not match virtual monitor " + std::to_string(expected_display.width) + "x" +
              std::to_string(expected_display.height));
  Image through_glass = (pass == PassKind::kRainy && field != nullptr) ? composite_rainy(displayed, *field, optics)
                                                                        : displayed;
  const calib::Point2 shift = geom.refraction_shift(displayed.width());
  const calib::Homography camera = geom.capture_perturbation * calib::Homography::translation(shift.x, shift.y);
  Image captured = calib::warp_image(through_glass, camera, displayed.size());
  if (noise.sigma > 0.0) {
    Rng rng(noise.seed);
    for (float& v : captured.data()) v = static_cast<float>(v + noise.sigma * rng.normal());
    clamp_unit(captured);
  }
  return captured;
}

nlohmann::ordered_json to_json(const DropletField& field) {
  nlohmann::ordered_json j;
  j["seed"] = field.seed;
  j["density"] = field.density;
  j["plane"] = {field.plane.width, field.plane.height};
  auto arr = nlohmann::ordered_json::array();
  for (const auto& d : field.droplets) {
    nlohmann::ordered_json e;
    e["cx"] = d.center.x;
    e["cy"] = d.center.y;
    e["radius"] = d.radius;
    e["height_ratio"] = d.height_ratio;
    e["blur_sigma"] = d.blur_sigma;
    e["opacity"] = d.opacity;
    e["elongation"] = d.elongation;
    e["angle"] = d.angle_rad;
    arr.push_back(std::move(e));
  }
  j["droplets"] = std::move(arr);
  return j;
}

DropletField droplet_field_from_json(const nlohmann::ordered_json& j) {
  try {
    DropletField f;
    f.seed = j.at("seed").get<std::uint64_t>();
    f.density = j.at("density").get<double>();
    f.plane = {j.at("plane").at(0).get<int>(), j.at("plane").at(1).get<int>()};
    for (const auto& e : j.at("droplets")) {
      Droplet d;
      d.center = {e.at("cx").get<double>(), e.at("cy").get<double>()};
      d.radius = e.at("radius").get<double>();
      d.height_ratio = e.at("height_ratio").get<double>();
      d.blur_sigma = e.at("blur_sigma").get<double>();
      d.opacity = e.at("opacity").get<double>();
      d.elongation = e.at("elongation").get<double>();
      d.angle_rad = e.at("angle").get<double>();
      d.validate();
      f.droplets.push_back(d);
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed droplet field: ") + e.what());
  }
}

}  // namespace rainrig::sim

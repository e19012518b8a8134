#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "calibration.hpp"
#include "image.hpp"

namespace rainrig::sim {

struct Droplet {
  calib::Point2 center;      // glass-plane pixels (aligned with the displayed image)
  double radius = 1.0;       // minor semi-axis, px
  double height_ratio = 0.5; // spherical-cap height / radius, (0, 1]
  double blur_sigma = 0.0;   // px
  double opacity = 1.0;      // blend weight of the lens image, [0, 1]
  double elongation = 1.0;   // major/minor axis ratio, >= 1
  double angle_rad = 0.0;    // orientation of the major axis; pi/2 points down

  void validate() const;
  // Magnification of the sampled source footprint along each axis (k > 1).
  double source_scale() const;
  // Footprint area in px^2.
  double area() const;
  // Normalized elliptical radius of (x, y); <= 1 inside the footprint.
  double normalized_radius(double x, double y) const;
};

struct DropletField {
  std::vector<Droplet> droplets;
  std::uint64_t seed = 0;
  double density = 0.0;
  Size plane;
};

struct SceneGeometry {
  double screen_distance_mm = 320.0;
  double pane_offset_mm = 170.0;
  double pane_tilt_deg = 20.0;
  double pane_thickness_mm = 4.0;
  double pane_refractive_index = 1.52;
  double monitor_width_mm = 597.0;  // 27" 16:9 panel
  calib::Homography capture_perturbation;

  void validate() const;
  // Lateral image shift (px) of a thin tilted plate, for a display `width_px` wide.
  calib::Point2 refraction_shift(int width_px) const;
};

// Lens-model constants.
struct OpticsParams {
  double gray_threshold = 0.6;  // source footprint / frame area at which gray-out begins
  double rim_width = 0.12;      // dark band width as a fraction of the radius
  double rim_darkening = 0.45;  // multiplicative darkening at the outer edge
};

struct SamplingParams {
  double min_radius = 8.0;
  double max_radius = 40.0;
  double streak_fraction = 0.2;
  int max_attempts = 20000;
};

// Rejection-samples droplets on a `plane`-sized pane until the union mask
// covers `density` of the area (within 5% relative). Throws kSampling when the
// target cannot be reached within the attempt budget.
DropletField sample_droplet_field(std::uint64_t seed, double density, Size plane, const SamplingParams& params = {});

// Union coverage of the field's footprints on its plane.
double field_coverage(const DropletField& field);
std::vector<std::uint8_t> field_mask(const DropletField& field, Size plane);

struct RenderedDroplet {
  Image patch;                     // full-frame image with the droplet applied
  std::vector<std::uint8_t> mask;  // 1 inside the footprint
};

// Renders one droplet over `scene`. Outside the mask the result equals `scene`.
RenderedDroplet render_droplet(const Image& scene, const Droplet& d, const OpticsParams& optics = {});

// Composites the whole field, larger droplets first. Pixels outside the union
// mask are bit-identical to the scene.
Image composite_rainy(const Image& scene, const DropletField& field, const OpticsParams& optics = {});

enum class PassKind { kClear, kRainy };

struct CaptureNoise {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

// Virtual camera: optional rainy compositing, pane refraction shift, capture
// perturbation, additive Gaussian sensor noise. Output matches the display size.
Image simulate_capture(const Image& displayed, PassKind pass, const DropletField* field, const SceneGeometry& geom,
                       const CaptureNoise& noise, Size expected_display, const OpticsParams& optics = {});

nlohmann::ordered_json to_json(const DropletField& field);
DropletField droplet_field_from_json(const nlohmann::ordered_json& j);

}  // namespace rainrig::sim

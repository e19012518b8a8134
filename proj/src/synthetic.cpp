#include "synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "error.hpp"
#include "random.hpp"

namespace rainrig::synth {

Palette default_palette(int classes) {
  static const Palette kColors = {
      {0.20f, 0.35f, 0.80f}, {0.85f, 0.15f, 0.15f}, {0.15f, 0.70f, 0.20f}, {0.95f, 0.85f, 0.15f},
      {0.60f, 0.15f, 0.75f}, {0.10f, 0.80f, 0.80f}, {0.95f, 0.50f, 0.10f}, {0.95f, 0.95f, 0.95f},
  };
  require(classes >= 2 && classes <= static_cast<int>(kColors.size()), ErrorCode::kConfig,
          "synthetic class count must be in [2, 8]");
  return Palette(kColors.begin(), kColors.begin() + classes);
}

Scene color_class_scene(std::uint64_t seed, Size size, const Palette& palette) {
  require(size.width > 0 && size.height > 0, ErrorCode::kInvalidArgument, "scene size must be positive");
  require(palette.size() >= 2, ErrorCode::kInvalidArgument, "palette needs at least two classes");
  Rng rng(seed);
  ClassMap labels{size.width, size.height, std::vector<std::int32_t>(static_cast<std::size_t>(size.width) * size.height, 0)};

  const int shapes = 3 + static_cast<int>(rng.below(4));
  const double minor = std::min(size.width, size.height);
  for (int s = 0; s < shapes; ++s) {
    const int cls = 1 + static_cast<int>(rng.below(palette.size() - 1));
    const bool ellipse = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.0, size.width - 1.0);
    const double cy = rng.uniform(0.0, size.height - 1.0);
    const double rx = rng.uniform(0.12, 0.3) * minor;
    const double ry = rng.uniform(0.12, 0.3) * minor;
    for (int y = 0; y < size.height; ++y)
      for (int x = 0; x < size.width; ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside) labels.at(x, y) = cls;
      }
  }

  // A gentle vertical shading keeps scenes from being perfectly flat without
  // moving any pixel closer to another class color.
  const double tilt = rng.uniform(-0.05, 0.05);
  Image img(size.width, size.height, 3);
  for (int y = 0; y < size.height; ++y) {
    const double shade = 1.0 + tilt * (2.0 * y / std::max(1, size.height - 1) - 1.0);
    for (int x = 0; x < size.width; ++x) {
      const auto& c = palette[static_cast<std::size_t>(labels.at(x, y))];
      for (int k = 0; k < 3; ++k) img.at(x, y, k) = static_cast<float>(std::clamp(c[k] * shade, 0.0, 1.0));
    }
  }
  return {std::move(img), std::move(labels)};
}

void write_source(const std::filesystem::path& root, const SourceOptions& options) {
  require(options.count >= 1, ErrorCode::kConfig, "synthetic source count must be >= 1");
  const Palette palette = default_palette(options.classes);
  for (int i = 0; i < options.count; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%04d", i);
    const Scene scene = color_class_scene(mix_seed(options.seed, static_cast<std::uint64_t>(i)), options.size, palette);
    write_png(root / "images" / (std::string(id) + ".png"), scene.image);
    write_class_png(root / "labels" / "semantic" / (std::string(id) + ".png"), scene.labels);
  }
  write_palette(root / "palette.json", palette);
}

Palette read_palette(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot read palette " + path.string());
  Palette p;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& c : j.at("colors")) p.push_back(c.get<std::array<float, 3>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "malformed palette " + path.string() + ": " + e.what());
  }
  require(p.size() >= 2, ErrorCode::kIo, "palette needs at least two colors: " + path.string());
  return p;
}

void write_palette(const std::filesystem::path& path, const Palette& palette) {
  nlohmann::ordered_json j;
  j["colors"] = palette;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write palette " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace rainrig::synth

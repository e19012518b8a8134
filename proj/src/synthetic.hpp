#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "image.hpp"

namespace rainrig::synth {

using Palette = std::vector<std::array<float, 3>>;

// Up to eight well separated saturated colors; class 0 is the background.
Palette default_palette(int classes);

struct Scene {
  Image image;
  ClassMap labels;
};

// Flat-colored ellipses and rectangles over a background, with a mild
// brightness gradient. Pixel labels index the palette.
Scene color_class_scene(std::uint64_t seed, Size size, const Palette& palette);

struct SourceOptions {
  int count = 8;
  Size size{64, 64};
  int classes = 4;
  std::uint64_t seed = 0;
};

// Writes <root>/images/sNNNN.png, <root>/labels/semantic/sNNNN.png and
// <root>/palette.json.
void write_source(const std::filesystem::path& root, const SourceOptions& options);

Palette read_palette(const std::filesystem::path& path);
void write_palette(const std::filesystem::path& path, const Palette& palette);

}  // namespace rainrig::synth

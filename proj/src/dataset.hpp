#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "calibration.hpp"
#include "image.hpp"
#include "rig.hpp"

namespace rainrig::dataset {

namespace fs = std::filesystem;

struct SourceEntry {
  std::string source_id;
  std::string clear_image_path;
  std::map<std::string, std::string> label_paths;  // task name -> path
};

class SourceAdapter {
 public:
  virtual ~SourceAdapter() = default;
  // Entries in a stable order; ids must be unique.
  virtual std::vector<SourceEntry> entries() const = 0;
};

// <root>/images/<id>.png with labels at <root>/labels/<task>/<id>.png.
class DirectorySource final : public SourceAdapter {
 public:
  explicit DirectorySource(fs::path root) : root_(std::move(root)) {}
  std::vector<SourceEntry> entries() const override;

 private:
  fs::path root_;
};

// In-memory adapter, mostly for tests and the synthetic pipeline.
class ListSource final : public SourceAdapter {
 public:
  explicit ListSource(std::vector<SourceEntry> entries) : entries_(std::move(entries)) {}
  std::vector<SourceEntry> entries() const override { return entries_; }

 private:
  std::vector<SourceEntry> entries_;
};

enum class Split { kTrain, kVal, kTest, kNone };
const char* to_string(Split split);
Split split_from_string(std::string_view s);

struct PairRecord {
  std::string source_id;
  std::string rainy_path;
  std::string clear_path;           // photographed clear, aligned
  std::string original_clear_path;  // source image
  std::map<std::string, std::string> label_paths;
  std::array<double, 9> homography{1, 0, 0, 0, 1, 0, 0, 0, 1};
  double alignment_residual = 0.0;
  bool alignment_ok = true;
  Split split = Split::kNone;
  bool finetune_sample = false;  // only ever set on train records
};

struct DatasetManifest {
  static constexpr int kVersion = 1;
  std::vector<PairRecord> records;
  nlohmann::ordered_json rig_config = nlohmann::ordered_json::object();
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
};

std::string serialize(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text);
void write_manifest(const fs::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const fs::path& path);

struct BuildOptions {
  fs::path out_dir;
  Size aligned_size;                    // monitor/source resolution
  double residual_threshold_px = 1.0;   // records above are flagged
  bool copy_labels = false;
  std::uint64_t seed = 0;
  nlohmann::ordered_json rig_config = nlohmann::ordered_json::object();
};

// Pairs clear and rainy passes by source id, aligns and writes both images,
// attaches the source's labels (referenced relative to out_dir, or copied
// under it), and measures alignment. Throws kPairing
// listing orphan ids when the passes do not match.
DatasetManifest build_pairs(std::span<const rig::CaptureRecord> clear, std::span<const rig::CaptureRecord> rainy,
                            const SourceAdapter& source, const calib::Homography& alignment,
                            const BuildOptions& options);

// Translation between two images by phase correlation (b relative to a).
calib::Point2 phase_correlation_shift(const Image& a, const Image& b);

// Sets record.alignment_residual (px) from the photographed-clear vs.
// original-clear pair and flags it against `threshold_px`.
double validate_alignment(PairRecord& record, double threshold_px = 1.0, const fs::path& base = {});

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

enum class SplitStatus { kOk, kEmptyManifest };

// Uniform shuffle by seed; sizes are floor(f * N) with the remainder handed
// out by largest fractional part. Clears finetune marks.
SplitStatus split(DatasetManifest& manifest, std::uint64_t seed, SplitFractions fractions);

// Marks `count` train records as finetune_sample, uniformly at random.
void sample_finetune_subset(DatasetManifest& manifest, std::uint64_t seed, std::size_t count);

std::size_t count_split(const DatasetManifest& manifest, Split split);
std::size_t count_finetune(const DatasetManifest& manifest);

// Resolves a manifest path relative to the manifest's directory.
fs::path resolve(const fs::path& base, const std::string& p);
// Inverse of resolve: `p` (absolute or cwd-relative) expressed relative to `base`.
std::string relative_to(const std::string& p, const fs::path& base);

}  // namespace rainrig::dataset

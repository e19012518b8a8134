#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "image.hpp"

namespace rainrig::eval {

inline constexpr double kPsnrCap = 99.0;

// 10 log10(peak^2 / MSE) over all samples; kPsnrCap when the images match.
double psnr(const Image& a, const Image& b, double peak = 1.0);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

// Mean SSIM over all fully-contained Gaussian windows, on BT.601 luma for
// color input.
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

// Confusion matrix accumulated over an evaluation set; rows are ground truth.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int class_count, std::optional<int> ignore_label = std::nullopt);

  void add(const ClassMap& pred, const ClassMap& gt);
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * classes_ + pred]; }
  int class_count() const { return classes_; }
  std::uint64_t total() const;

  // Per-class IoU for classes present in the ground truth.
  std::map<int, double> class_iou() const;
  // Mean over classes present in the ground truth; nullopt when every pixel
  // was ignored.
  std::optional<double> miou() const;

 private:
  int classes_;
  std::optional<int> ignore_;
  std::vector<std::uint64_t> counts_;
};

std::optional<double> miou(const ClassMap& pred, const ClassMap& gt, int class_count,
                           std::optional<int> ignore_label = std::nullopt);

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual ClassMap segment(const Image& image) = 0;
  virtual int class_count() const = 0;
};

// Nearest-palette-color classifier, a stand-in for an external segmentation
// network on synthetic color-coded scenes.
class PaletteSegmenter final : public Segmenter {
 public:
  explicit PaletteSegmenter(std::vector<std::array<float, 3>> palette) : palette_(std::move(palette)) {}
  ClassMap segment(const Image& image) override;
  int class_count() const override { return static_cast<int>(palette_.size()); }

 private:
  std::vector<std::array<float, 3>> palette_;
};

using Derainer = std::function<Image(const Image&)>;

enum class Condition { kClearOriginal, kClearPhotographed, kRainy, kDerained };
const char* to_string(Condition c);

struct QualityPair {
  double psnr = 0.0;
  double ssim = 0.0;
};

struct RecordMetrics {
  std::string source_id;
  // Keyed by reference variant: "clear_original" / "clear_photographed".
  std::map<std::string, QualityPair> rainy;
  std::map<std::string, QualityPair> derained;
};

struct ReconstructionRow {
  std::string dataset;
  std::string model;
  std::string reference;  // clear_original | clear_photographed
  QualityPair rainy;
  std::optional<QualityPair> derained;
  std::size_t count = 0;
};

struct SegmentationRow {
  Condition condition = Condition::kClearOriginal;
  std::optional<double> miou;
  std::size_t count = 0;
  std::size_t failures = 0;
};

struct MetricsReport {
  std::vector<RecordMetrics> records;
  std::vector<ReconstructionRow> reconstruction;
  std::vector<SegmentationRow> segmentation;
  std::vector<std::string> errors;
};

struct ReconstructionOptions {
  std::string dataset = "simulated";
  std::string model = "rainrig";
  std::optional<dataset::Split> split = dataset::Split::kTest;  // nullopt: every record
  bool require_derained = false;
};

// PSNR/SSIM of rainy vs. clear and (given a derainer) derained vs. clear, per
// record and averaged, against both clear variants.
MetricsReport evaluate_reconstruction(const dataset::DatasetManifest& manifest, const std::filesystem::path& base,
                                      const Derainer* derainer, const ReconstructionOptions& options = {});

struct SegmentationOptions {
  std::string label_task = "semantic";
  std::optional<int> ignore_label;
  std::optional<dataset::Split> split = dataset::Split::kTest;
};

// mIoU under each condition (clear_original, clear_photographed, rainy and,
// given a derainer, derained).
MetricsReport evaluate_segmentation(const dataset::DatasetManifest& manifest, const std::filesystem::path& base,
                                    Segmenter& segmenter, const Derainer* derainer,
                                    const SegmentationOptions& options = {});

// Merges the segmentation part of `extra` into `base`.
void merge(MetricsReport& base, const MetricsReport& extra);

nlohmann::ordered_json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::ordered_json& j);
// Text tables laid out as reconstruction (dataset/model x RAINY/DERAINED
// PSNR/SSIM) and segmentation (condition x mIoU).
std::string render_tables(const MetricsReport& report);
std::string per_record_csv(const MetricsReport& report);

}  // namespace rainrig::eval

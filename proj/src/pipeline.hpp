#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "calibration.hpp"
#include "dataset.hpp"
#include "evaluation.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "rig.hpp"
#include "trainer.hpp"

namespace rainrig {

namespace fs = std::filesystem;

// Flat section.key -> value configuration for every stage. Every key has a
// default; files and overrides may only set known keys.
class PipelineConfig {
 public:
  PipelineConfig();

  // INI file: [section] headers, key = value lines, ';' or '#' comment lines.
  static PipelineConfig load(const fs::path& path);
  static PipelineConfig parse(const std::string& text);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::vector<std::string> keys() const;

  double real(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;

  // Every key, grouped by section, in a stable order.
  std::string resolved() const;

  std::uint64_t seed() const { return u64("run.seed"); }
  calib::TestPatternSpec pattern() const;
  rig::RigConfig rig() const;
  rig::SimulatorConfig simulator() const;
  model::GeneratorSpec generator() const;
  model::DiscriminatorSpec discriminator() const;
  loss::LossWeights loss_weights() const;
  train::TrainConfig train() const;
  train::TrainConfig finetune() const;

 private:
  std::map<std::string, std::string> values_;
};

enum class CapturePass { kClear, kRainy, kBoth };
CapturePass capture_pass_from_string(const std::string& s);

struct CalibrationOutput {
  fs::path file;
  calib::CalibrationResult result;
};

// Runs each stage under one configuration. Output locations derive from
// paths.out; every command writes resolved_config.ini beside its outputs.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const { return config_; }

  fs::path out_dir() const;
  fs::path source_dir() const;
  fs::path calibration_file() const;
  fs::path session_dir() const;
  fs::path dataset_dir() const;
  fs::path manifest_file() const { return dataset_dir() / "manifest.jsonl"; }
  fs::path checkpoint_dir() const;
  fs::path checkpoint_file() const;  // paths.checkpoint or <checkpoints>/latest.ckpt
  fs::path report_dir() const;

  CalibrationOutput calibrate();
  fs::path capture(CapturePass pass);
  fs::path build_dataset();
  train::RunResult train();
  train::RunResult finetune();
  // Derains every PNG under `input` (a file or a directory) into `output`,
  // keeping file names. Returns the written paths.
  std::vector<fs::path> derain(const fs::path& input, const fs::path& output);
  eval::MetricsReport evaluate(bool segmentation);
  // Renders the stored report's tables, also writing tables.txt.
  std::string report();

 private:
  void require_sim_backend() const;
  void write_resolved(const fs::path& dir) const;
  std::vector<rig::SourceImage> load_sources();
  std::shared_ptr<loss::PerceptualExtractor> extractor() const;

  PipelineConfig config_;
};

}  // namespace rainrig

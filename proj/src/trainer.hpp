#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "image.hpp"
#include "losses.hpp"
#include "model.hpp"

namespace rainrig::train {

namespace fs = std::filesystem;

enum class Target { kPhotographed, kOriginal };
const char* to_string(Target t);
Target target_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 100;
  std::string optimizer = "adam";
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 1;
  std::uint64_t seed = 0;
  int crop_size = 0;             // 0 trains on whole images
  int decay_start_epoch = 0;     // 0 keeps the rate constant; else linear to zero after this epoch
  Target target = Target::kPhotographed;
  std::optional<fs::path> resume_from;
  std::string verbatim;          // train_config text as given, stored in checkpoints

  void validate() const;
};

struct StepLosses {
  double adv = 0.0;
  double perc = 0.0;
  double msadv = 0.0;
  double disc = 0.0;
  double gen_total = 0.0;
};

struct TrainingPair {
  std::string id;
  Image rainy;
  Image clear;
};

// Loads the records accepted by `keep`, in manifest order.
std::vector<TrainingPair> load_pairs(const dataset::DatasetManifest& manifest, const fs::path& base, Target target,
                                     const std::function<bool(const dataset::PairRecord&)>& keep);

struct CheckpointMeta {
  static constexpr int kVersion = 1;
  model::GeneratorSpec g_spec;
  model::DiscriminatorSpec d_spec;
  loss::LossWeights weights;
  std::string train_config;
  int epoch = 0;
  std::int64_t iteration = 0;
};

// Owns G, D, both optimizers and the loss setup for one training run.
class Trainer {
 public:
  Trainer(const model::GeneratorSpec& g_spec, const model::DiscriminatorSpec& d_spec, const loss::LossWeights& weights,
          const TrainConfig& config, std::shared_ptr<loss::PerceptualExtractor> extractor);

  // Least-squares D update on (clear, G(rainy) detached). Touches only D.
  double d_step(const torch::Tensor& rainy, const torch::Tensor& clear);
  // Generator update through the adversarial, perceptual and feature terms.
  // Touches only G; D receives no optimizer step.
  StepLosses g_step(const torch::Tensor& rainy, const torch::Tensor& clear);
  // One D step followed by one G step. Throws kDivergence on a non-finite
  // loss before applying the offending update.
  StepLosses step(const torch::Tensor& rainy, const torch::Tensor& clear);

  // Value of the total generator objective without any update.
  torch::Tensor generator_objective(const torch::Tensor& derained, const torch::Tensor& clear);

  void set_learning_rate(double lr);

  void save(const fs::path& path) const;
  // Restores weights, optimizer state and counters.
  void load(const fs::path& path);
  static CheckpointMeta read_meta(const fs::path& path);

  model::Generator& generator() { return g_; }
  model::Discriminator& discriminator() { return d_; }
  const loss::LossWeights& weights() const { return weights_; }
  const TrainConfig& config() const { return config_; }

  int epoch = 0;
  std::int64_t iteration = 0;

 private:
  model::GeneratorSpec g_spec_;
  model::DiscriminatorSpec d_spec_;
  loss::LossWeights weights_;
  TrainConfig config_;
  std::shared_ptr<loss::PerceptualExtractor> extractor_;
  model::Generator g_{nullptr};
  model::Discriminator d_{nullptr};
  std::unique_ptr<torch::optim::Adam> g_opt_;
  std::unique_ptr<torch::optim::Adam> d_opt_;
};

struct RunResult {
  fs::path checkpoint;  // final
  fs::path log;
  int epochs = 0;
  std::int64_t iterations = 0;
  std::size_t records = 0;
  StepLosses last_epoch_mean;
};

inline constexpr const char* kLogHeader = "iteration,L_adv,L_perc,L_msadv,L_disc,L_gen_total";

// Trains on the manifest's train split. Writes <out>/epoch_NNNN.ckpt and
// <out>/latest.ckpt after every epoch and <out>/train_log.csv.
RunResult train(const dataset::DatasetManifest& manifest, const fs::path& manifest_dir,
                const model::GeneratorSpec& g_spec, const model::DiscriminatorSpec& d_spec,
                const loss::LossWeights& weights, const TrainConfig& config,
                std::shared_ptr<loss::PerceptualExtractor> extractor, const fs::path& out_dir);

// Continues from `checkpoint` on the finetune_sample records only, with fresh
// optimizers at config.learning_rate. Writes finetune_log.csv and
// finetune_epoch_NNNN.ckpt / finetuned.ckpt.
RunResult finetune(const fs::path& checkpoint, const dataset::DatasetManifest& manifest, const fs::path& manifest_dir,
                   const TrainConfig& config, std::shared_ptr<loss::PerceptualExtractor> extractor,
                   const fs::path& out_dir);

// Loads a generator from a checkpoint for inference.
model::Generator load_generator(const fs::path& checkpoint);

}  // namespace rainrig::train

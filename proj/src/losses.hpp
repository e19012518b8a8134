#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace rainrig::loss {

struct LossWeights {
  double lambda_adv = 1.0;
  double lambda_perc = 10.0;
  double lambda_msadv = 10.0;
  int n_vgg = 5;
  int n_adv = 4;

  void validate() const;
  // Divisor for perceptual tap i (1-based): 2^(n_vgg - i).
  double perceptual_divisor(int i) const;
  // Divisor for discriminator feature layer i (1-based): 2^(n_adv - i).
  double feature_divisor(int i) const;
};

nlohmann::ordered_json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::ordered_json& j);

// Frozen feature extractor; taps ordered shallow to deep.
class PerceptualExtractor {
 public:
  virtual ~PerceptualExtractor() = default;
  virtual std::vector<torch::Tensor> features(const torch::Tensor& image) = 0;
  virtual int tap_count() const = 0;
};

// VGG-19 convolutional trunk tapped after the first rectified conv of each of
// its five blocks. Weights come from a serialized module archive when given;
// otherwise they are a seeded, fixed He-normal draw. Input in [0, 1] is
// normalized with ImageNet statistics. Parameters never receive gradients.
class VggExtractor final : public PerceptualExtractor {
 public:
  struct Options {
    int width_divisor = 1;  // channel widths are 64/128/256/512/512 divided by this
    std::uint64_t seed = 0;
    std::filesystem::path weights;  // optional torch::save archive of the trunk
  };
  explicit VggExtractor(const Options& options);

  std::vector<torch::Tensor> features(const torch::Tensor& image) override;
  int tap_count() const override { return 5; }
  torch::nn::Sequential& trunk() { return trunk_; }
  void to(torch::Dtype dtype);

 private:
  torch::nn::Sequential trunk_{nullptr};
  std::vector<std::size_t> taps_;  // trunk indices whose outputs are tapped
  torch::Tensor mean_;
  torch::Tensor std_;
};

// Least-squares adversarial term on the generator side: mean (D(fake) - 1)^2,
// averaged over scales.
torch::Tensor adv_gen_loss(const std::vector<torch::Tensor>& fake_patches);

// mean (D(real) - 1)^2 + mean D(fake)^2, averaged over scales. The caller
// passes patches computed on a detached generator output.
torch::Tensor disc_loss(const std::vector<torch::Tensor>& real_patches, const std::vector<torch::Tensor>& fake_patches);

// Sum over taps of mean |f_i(clear) - f_i(derained)| / 2^(n - i), n = tap count.
torch::Tensor perceptual_loss(PerceptualExtractor& extractor, const torch::Tensor& clear, const torch::Tensor& derained,
                              const LossWeights& weights);
torch::Tensor weighted_feature_l1(const std::vector<torch::Tensor>& reference, const std::vector<torch::Tensor>& test);

// Per scale: sum over layers of mean |D_i(clear) - D_i(derained)| / 2^(n_adv - i);
// averaged over scales. Real features are treated as constants.
torch::Tensor ms_feature_loss(const std::vector<std::vector<torch::Tensor>>& real_features,
                              const std::vector<std::vector<torch::Tensor>>& fake_features, const LossWeights& weights);

struct GenLossParts {
  torch::Tensor adv;
  torch::Tensor perc;
  torch::Tensor msadv;
  torch::Tensor total;
};

// lambda_adv * adv + lambda_perc * perc + lambda_msadv * msadv.
GenLossParts total_gen_loss(torch::Tensor adv, torch::Tensor perc, torch::Tensor msadv, const LossWeights& weights);
double total_gen_loss(double adv, double perc, double msadv, const LossWeights& weights);

}  // namespace rainrig::loss

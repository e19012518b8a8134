#pragma once

#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "image.hpp"

namespace rainrig::model {

struct GeneratorSpec {
  int down_layers = 4;
  int residual_blocks = 6;
  int up_layers = 4;
  int base_channels = 64;
  int max_channels = 512;

  void validate() const;
  // Spatial dims must be multiples of this.
  int required_multiple() const { return 1 << down_layers; }
  int channels_at(int level) const;  // level 0 = ingress, level i = after down-layer i
};

struct DiscriminatorSpec {
  int num_scales = 2;
  int layers_per_scale = 4;
  int base_channels = 64;
  int max_channels = 512;

  void validate() const;
  int channels_at(int layer) const;  // 1-based tapped layer
};

nlohmann::ordered_json to_json(const GeneratorSpec& s);
nlohmann::ordered_json to_json(const DiscriminatorSpec& s);
GeneratorSpec generator_spec_from_json(const nlohmann::ordered_json& j);
DiscriminatorSpec discriminator_spec_from_json(const nlohmann::ordered_json& j);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
  torch::nn::InstanceNorm2d norm1_{nullptr};
  torch::nn::InstanceNorm2d norm2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Encoder/decoder with additive skips: down-layer i's activation is added to
// the input of the up-layer working at the same resolution. The input image
// itself joins at the egress (in logit space), so a network with zeroed
// weights passes its input through.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorSpec& spec);

  // x: N x 3 x H x W in [0, 1]; H and W multiples of spec.required_multiple().
  torch::Tensor forward(const torch::Tensor& x);
  const GeneratorSpec& spec() const { return spec_; }

 private:
  GeneratorSpec spec_;
  torch::nn::Conv2d ingress_{nullptr};
  torch::nn::ModuleList down_{nullptr};
  torch::nn::Sequential body_{nullptr};
  torch::nn::ModuleList up_{nullptr};
  torch::nn::Conv2d egress_{nullptr};
};
TORCH_MODULE(Generator);

struct DiscriminatorOutput {
  std::vector<torch::Tensor> patches;                // one N x 1 x h x w map per scale
  std::vector<std::vector<torch::Tensor>> features;  // [scale][layer]
};

class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  PatchDiscriminatorImpl(const DiscriminatorSpec& spec);
  std::pair<torch::Tensor, std::vector<torch::Tensor>> forward(const torch::Tensor& x);

 private:
  torch::nn::ModuleList layers_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// Multi-scale PatchGAN: scale s sees the input average-pooled by 2^s.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const DiscriminatorSpec& spec);
  DiscriminatorOutput forward(const torch::Tensor& x);
  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  DiscriminatorSpec spec_;
  std::vector<PatchDiscriminator> scales_;
};
TORCH_MODULE(Discriminator);

// Zero-mean Gaussian weights (std 0.02), zero biases.
void init_weights(torch::nn::Module& module);
std::int64_t parameter_count(torch::nn::Module& module);

torch::Tensor to_tensor(const Image& img);  // 1 x C x H x W float
Image from_tensor(const torch::Tensor& t);  // expects 1 x C x H x W

// Runs the generator in inference mode, reflect-padding to the required
// multiple and cropping back.
Image derain(Generator& g, const Image& rainy);

}  // namespace rainrig::model

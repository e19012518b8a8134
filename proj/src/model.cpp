#include "model.hpp"

#include <algorithm>

#include "error.hpp"

namespace rainrig::model {

namespace nn = torch::nn;

void GeneratorSpec::validate() const {
  require(down_layers >= 1, ErrorCode::kConfig, "generator needs at least one down layer");
  require(down_layers == up_layers, ErrorCode::kShape,
          "additive skips pair each down layer with an up layer: down_layers must equal up_layers");
  require(residual_blocks >= 0, ErrorCode::kConfig, "residual_blocks must be >= 0");
  require(base_channels >= 1 && max_channels >= base_channels, ErrorCode::kConfig,
          "channel widths must satisfy 1 <= base_channels <= max_channels");
}

int GeneratorSpec::channels_at(int level) const {
  return static_cast<int>(std::min<long>(static_cast<long>(base_channels) << level, max_channels));
}

void DiscriminatorSpec::validate() const {
  require(num_scales >= 1, ErrorCode::kConfig, "discriminator needs at least one scale");
  require(layers_per_scale >= 2, ErrorCode::kConfig, "discriminator needs at least two layers per scale");
  require(base_channels >= 1 && max_channels >= base_channels, ErrorCode::kConfig,
          "channel widths must satisfy 1 <= base_channels <= max_channels");
}

int DiscriminatorSpec::channels_at(int layer) const {
  return static_cast<int>(std::min<long>(static_cast<long>(base_channels) << (layer - 1), max_channels));
}

nlohmann::ordered_json to_json(const GeneratorSpec& s) {
  return {{"down_layers", s.down_layers},
          {"residual_blocks", s.residual_blocks},
          {"up_layers", s.up_layers},
          {"base_channels", s.base_channels},
          {"max_channels", s.max_channels},
          {"skip_mode", "additive"}};
}

nlohmann::ordered_json to_json(const DiscriminatorSpec& s) {
  return {{"num_scales", s.num_scales},
          {"layers_per_scale", s.layers_per_scale},
          {"base_channels", s.base_channels},
          {"max_channels", s.max_channels},
          {"patch_output", true}};
}

GeneratorSpec generator_spec_from_json(const nlohmann::ordered_json& j) {
  GeneratorSpec s;
  s.down_layers = j.at("down_layers").get<int>();
  s.residual_blocks = j.at("residual_blocks").get<int>();
  s.up_layers = j.at("up_layers").get<int>();
  s.base_channels = j.at("base_channels").get<int>();
  s.max_channels = j.at("max_channels").get<int>();
  return s;
}

DiscriminatorSpec discriminator_spec_from_json(const nlohmann::ordered_json& j) {
  DiscriminatorSpec s;
  s.num_scales = j.at("num_scales").get<int>();
  s.layers_per_scale = j.at("layers_per_scale").get<int>();
  s.base_channels = j.at("base_channels").get<int>();
  s.max_channels = j.at("max_channels").get<int>();
  return s;
}

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

nn::InstanceNorm2d inorm(int channels) { return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels)); }

class DownLayerImpl : public nn::Module {
 public:
  DownLayerImpl(int in, int out) : conv_(register_module("conv", conv(in, out, 3, 2, 1))), norm_(register_module("norm", inorm(out))) {}
  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(norm_(conv_(x))); }

 private:
  nn::Conv2d conv_;
  nn::InstanceNorm2d norm_;
};
TORCH_MODULE(DownLayer);

class UpLayerImpl : public nn::Module {
 public:
  UpLayerImpl(int in, int out)
      : conv_(register_module(
            "conv", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 3).stride(2).padding(1).output_padding(1)))),
        norm_(register_module("norm", inorm(out))) {}
  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(norm_(conv_(x))); }

 private:
  nn::ConvTranspose2d conv_;
  nn::InstanceNorm2d norm_;
};
TORCH_MODULE(UpLayer);

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int channels)
    : conv1_(register_module("conv1", conv(channels, channels, 3, 1, 1))),
      conv2_(register_module("conv2", conv(channels, channels, 3, 1, 1))),
      norm1_(register_module("norm1", inorm(channels))),
      norm2_(register_module("norm2", inorm(channels))) {}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return x + norm2_(conv2_(torch::relu(norm1_(conv1_(x)))));
}

GeneratorImpl::GeneratorImpl(const GeneratorSpec& spec) : spec_(spec) {
  spec_.validate();
  ingress_ = register_module("ingress", conv(3, spec_.channels_at(0), 7, 1, 0));
  down_ = register_module("down", nn::ModuleList());
  for (int i = 1; i <= spec_.down_layers; ++i) down_->push_back(DownLayer(spec_.channels_at(i - 1), spec_.channels_at(i)));
  body_ = register_module("body", nn::Sequential());
  for (int i = 0; i < spec_.residual_blocks; ++i) body_->push_back(ResidualBlock(spec_.channels_at(spec_.down_layers)));
  up_ = register_module("up", nn::ModuleList());
  for (int j = spec_.up_layers; j >= 1; --j) up_->push_back(UpLayer(spec_.channels_at(j), spec_.channels_at(j - 1)));
  egress_ = register_module("egress", conv(spec_.channels_at(0), 3, 7, 1, 0));
  init_weights(*this);
  // The untrained network is the identity through the input skip; training
  // grows the correction from zero instead of from init noise.
  torch::NoGradGuard guard;
  egress_->weight.zero_();
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  const int multiple = spec_.required_multiple();
  require(x.dim() == 4 && x.size(1) == 3, ErrorCode::kShape, "generator expects N x 3 x H x W input");
  require(x.size(2) % multiple == 0 && x.size(3) % multiple == 0, ErrorCode::kShape,
          "generator input height and width must be multiples of " + std::to_string(multiple) + " (got " +
              std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) + ")");

  namespace F = torch::nn::functional;
  const auto reflect3 = F::PadFuncOptions({3, 3, 3, 3}).mode(torch::kReflect);
  torch::Tensor h = torch::relu(torch::instance_norm(ingress_(F::pad(x, reflect3)), {}, {}, {}, {}, true, 0.1, 1e-5, false));

  std::vector<torch::Tensor> skips;
  for (const auto& layer : *down_) {
    h = layer->as<DownLayer>()->forward(h);
    skips.push_back(h);
  }
  h = body_->forward(h);
  for (std::size_t j = 0; j < up_->size(); ++j) {
    h = h + skips[skips.size() - 1 - j];
    h = (*up_)[j]->as<UpLayer>()->forward(h);
  }
  const torch::Tensor residual = egress_(F::pad(h, reflect3));
  const torch::Tensor x_logit = torch::logit(x.clamp(1e-3, 1.0 - 1e-3));
  return torch::sigmoid(residual + x_logit);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorSpec& spec) {
  layers_ = register_module("layers", nn::ModuleList());
  int in = 3;
  for (int i = 1; i <= spec.layers_per_scale; ++i) {
    const int out = spec.channels_at(i);
    nn::Sequential block;
    block->push_back(conv(in, out, 4, 2, 1));
    if (i > 1) block->push_back(inorm(out));
    block->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    layers_->push_back(block);
    in = out;
  }
  head_ = register_module("head", conv(in, 1, 3, 1, 1));
}

std::pair<torch::Tensor, std::vector<torch::Tensor>> PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> feats;
  torch::Tensor h = x;
  for (const auto& layer : *layers_) {
    h = layer->as<nn::Sequential>()->forward(h);
    feats.push_back(h);
  }
  return {head_(h), std::move(feats)};
}

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorSpec& spec) : spec_(spec) {
  spec_.validate();
  for (int s = 0; s < spec_.num_scales; ++s)
    scales_.push_back(register_module("scale" + std::to_string(s), PatchDiscriminator(spec_)));
  init_weights(*this);
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& x) {
  require(x.dim() == 4, ErrorCode::kShape, "discriminator expects N x C x H x W input");
  // Each stride-2 layer halves the map; demand at least 2x2 patches at the
  // coarsest scale.
  const std::int64_t need = std::int64_t{2} << (spec_.layers_per_scale + spec_.num_scales - 1);
  require(x.size(2) >= need && x.size(3) >= need, ErrorCode::kShape,
          "discriminator input " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
              " is smaller than the receptive field (needs " + std::to_string(need) + ")");
  DiscriminatorOutput out;
  torch::Tensor h = x;
  for (int s = 0; s < spec_.num_scales; ++s) {
    if (s > 0) h = torch::avg_pool2d(h, 2, 2);
    auto [patch, feats] = scales_[s]->forward(h);
    out.patches.push_back(patch);
    out.features.push_back(std::move(feats));
  }
  return out;
}

void init_weights(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& item : module.named_parameters()) {
    const std::string& name = item.key();
    torch::Tensor& p = item.value();
    if (name.ends_with("weight"))
      p.normal_(0.0, 0.02);
    else if (name.ends_with("bias"))
      p.zero_();
  }
}

std::int64_t parameter_count(torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

torch::Tensor to_tensor(const Image& img) {
  auto t = torch::empty({1, img.channels(), img.height(), img.width()}, torch::kFloat32);
  auto acc = t.accessor<float, 4>();
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) acc[0][c][y][x] = img.at(x, y, c);
  return t;
}

Image from_tensor(const torch::Tensor& t) {
  require(t.dim() == 4 && t.size(0) == 1, ErrorCode::kShape, "expected a 1 x C x H x W tensor");
  const auto src = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  auto acc = src.accessor<float, 4>();
  Image img(static_cast<int>(src.size(3)), static_cast<int>(src.size(2)), static_cast<int>(src.size(1)));
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) img.at(x, y, c) = acc[0][c][y][x];
  return img;
}

Image derain(Generator& g, const Image& rainy) {
  require(rainy.channels() == 3, ErrorCode::kShape, "derain expects an RGB image");
  torch::NoGradGuard guard;
  const bool was_training = g->is_training();
  g->eval();
  const int m = g->spec().required_multiple();
  const int ph = (m - rainy.height() % m) % m;
  const int pw = (m - rainy.width() % m) % m;
  torch::Tensor x = to_tensor(rainy);
  if (ph || pw) {
    namespace F = torch::nn::functional;
    auto opts = F::PadFuncOptions({0, pw, 0, ph});
    if (ph < rainy.height() && pw < rainy.width())
      opts.mode(torch::kReflect);
    else
      opts.mode(torch::kReplicate);
    x = F::pad(x, opts);
  }
  torch::Tensor y = g->forward(x);
  if (ph || pw) y = y.index({torch::indexing::Slice(), torch::indexing::Slice(), torch::indexing::Slice(0, rainy.height()),
                             torch::indexing::Slice(0, rainy.width())});
  if (was_training) g->train();
  return from_tensor(y);
}

}  // namespace rainrig::model

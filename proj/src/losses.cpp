#include "losses.hpp"

#include <cmath>

#include "error.hpp"

namespace rainrig::loss {

void LossWeights::validate() const {
  require(lambda_adv >= 0.0 && lambda_perc >= 0.0 && lambda_msadv >= 0.0, ErrorCode::kConfig,
          "loss lambdas must be >= 0");
  require(n_vgg >= 1 && n_adv >= 1, ErrorCode::kConfig, "n_vgg and n_adv must be >= 1");
}

double LossWeights::perceptual_divisor(int i) const { return std::ldexp(1.0, n_vgg - i); }
double LossWeights::feature_divisor(int i) const { return std::ldexp(1.0, n_adv - i); }

nlohmann::ordered_json to_json(const LossWeights& w) {
  return {{"lambda_adv", w.lambda_adv}, {"lambda_perc", w.lambda_perc}, {"lambda_msadv", w.lambda_msadv},
          {"n_vgg", w.n_vgg},           {"n_adv", w.n_adv}};
}

LossWeights loss_weights_from_json(const nlohmann::ordered_json& j) {
  LossWeights w;
  w.lambda_adv = j.at("lambda_adv").get<double>();
  w.lambda_perc = j.at("lambda_perc").get<double>();
  w.lambda_msadv = j.at("lambda_msadv").get<double>();
  w.n_vgg = j.at("n_vgg").get<int>();
  w.n_adv = j.at("n_adv").get<int>();
  return w;
}

// --- Extractor ---------------------------------------------------------------------

VggExtractor::VggExtractor(const Options& options) {
  require(options.width_divisor >= 1, ErrorCode::kConfig, "vgg width divisor must be >= 1");
  namespace nn = torch::nn;
  trunk_ = nn::Sequential();
  const int widths[5] = {64, 128, 256, 512, 512};
  const int convs[5] = {2, 2, 4, 4, 4};
  int in = 3;
  for (int b = 0; b < 5; ++b) {
    const int out = std::max(1, widths[b] / options.width_divisor);
    if (b > 0) trunk_->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)));
    for (int c = 0; c < convs[b]; ++c) {
      trunk_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
      trunk_->push_back(nn::ReLU());
      if (c == 0) taps_.push_back(trunk_->size() - 1);
      in = out;
    }
  }

  if (!options.weights.empty()) {
    require(std::filesystem::exists(options.weights), ErrorCode::kIo,
            "perceptual weights not found: " + options.weights.string());
    torch::load(trunk_, options.weights.string());
  } else {
    torch::NoGradGuard guard;
    auto gen = at::detail::createCPUGenerator(options.seed);
    for (auto& item : trunk_->named_parameters()) {
      const std::string& name = item.key();
      torch::Tensor& p = item.value();
      if (name.ends_with("weight")) {
        const double fan_in = static_cast<double>(p.size(1) * p.size(2) * p.size(3));
        p.copy_(at::normal(0.0, std::sqrt(2.0 / fan_in), p.sizes(), gen));
      } else {
        p.zero_();
      }
    }
  }
  for (auto& p : trunk_->parameters()) p.set_requires_grad(false);
  trunk_->eval();
  mean_ = torch::tensor({0.485, 0.456, 0.406}, torch::kFloat32).view({1, 3, 1, 1});
  std_ = torch::tensor({0.229, 0.224, 0.225}, torch::kFloat32).view({1, 3, 1, 1});
}

void VggExtractor::to(torch::Dtype dtype) {
  trunk_->to(dtype);
  mean_ = mean_.to(dtype);
  std_ = std_.to(dtype);
}

std::vector<torch::Tensor> VggExtractor::features(const torch::Tensor& image) {
  require(image.dim() == 4 && image.size(1) == 3, ErrorCode::kShape, "extractor expects N x 3 x H x W input");
  std::vector<torch::Tensor> out;
  // Sequential::forward cannot stop at intermediate layers; step manually.
  torch::Tensor h = (image - mean_) / std_;
  std::size_t next = 0;
  std::size_t i = 0;
  for (auto it = trunk_->begin(); it != trunk_->end() && next < taps_.size(); ++it, ++i) {
    h = it->forward(h);
    if (i == taps_[next]) {
      out.push_back(h);
      ++next;
    }
  }
  return out;
}

// --- Loss terms ----------------------------------------------------------------------

torch::Tensor adv_gen_loss(const std::vector<torch::Tensor>& fake_patches) {
  require(!fake_patches.empty(), ErrorCode::kInvalidArgument, "adversarial loss needs at least one scale");
  torch::Tensor sum = torch::zeros({}, fake_patches.front().options());
  for (const auto& p : fake_patches) sum = sum + (p - 1.0).pow(2).mean();
  return sum / static_cast<double>(fake_patches.size());
}

torch::Tensor disc_loss(const std::vector<torch::Tensor>& real_patches, const std::vector<torch::Tensor>& fake_patches) {
  require(!real_patches.empty() && real_patches.size() == fake_patches.size(), ErrorCode::kInvalidArgument,
          "discriminator loss needs matching real/fake scales");
  torch::Tensor sum = torch::zeros({}, real_patches.front().options());
  for (std::size_t s = 0; s < real_patches.size(); ++s)
    sum = sum + (real_patches[s] - 1.0).pow(2).mean() + fake_patches[s].pow(2).mean();
  return sum / static_cast<double>(real_patches.size());
}

torch::Tensor weighted_feature_l1(const std::vector<torch::Tensor>& reference, const std::vector<torch::Tensor>& test) {
  require(reference.size() == test.size() && !reference.empty(), ErrorCode::kShape, "feature stacks differ in length");
  const int n = static_cast<int>(reference.size());
  torch::Tensor sum = torch::zeros({}, test.front().options());
  for (int i = 1; i <= n; ++i) {
    const auto& a = reference[i - 1];
    const auto& b = test[i - 1];
    require(a.sizes() == b.sizes(), ErrorCode::kShape, "feature layer " + std::to_string(i) + " shapes differ");
    sum = sum + (a.detach() - b).abs().mean() / std::ldexp(1.0, n - i);
  }
  return sum;
}

torch::Tensor perceptual_loss(PerceptualExtractor& extractor, const torch::Tensor& clear, const torch::Tensor& derained,
                              const LossWeights& weights) {
  require(clear.sizes() == derained.sizes(), ErrorCode::kShape, "perceptual loss: image shapes differ");
  require(extractor.tap_count() == weights.n_vgg, ErrorCode::kConfig,
          "extractor tap count does not match n_vgg");
  std::vector<torch::Tensor> ref;
  {
    torch::NoGradGuard guard;
    ref = extractor.features(clear);
  }
  return weighted_feature_l1(ref, extractor.features(derained));
}

torch::Tensor ms_feature_loss(const std::vector<std::vector<torch::Tensor>>& real_features,
                              const std::vector<std::vector<torch::Tensor>>& fake_features, const LossWeights& weights) {
  require(!real_features.empty() && real_features.size() == fake_features.size(), ErrorCode::kShape,
          "feature stacks differ in scale count");
  torch::Tensor sum;
  for (std::size_t s = 0; s < real_features.size(); ++s) {
    require(static_cast<int>(real_features[s].size()) == weights.n_adv, ErrorCode::kShape,
            "feature stack length does not match n_adv");
    const torch::Tensor term = weighted_feature_l1(real_features[s], fake_features[s]);
    sum = s == 0 ? term : sum + term;
  }
  return sum / static_cast<double>(real_features.size());
}

GenLossParts total_gen_loss(torch::Tensor adv, torch::Tensor perc, torch::Tensor msadv, const LossWeights& weights) {
  torch::Tensor total = weights.lambda_adv * adv + weights.lambda_perc * perc + weights.lambda_msadv * msadv;
  return {std::move(adv), std::move(perc), std::move(msadv), std::move(total)};
}

double total_gen_loss(double adv, double perc, double msadv, const LossWeights& weights) {
  return weights.lambda_adv * adv + weights.lambda_perc * perc + weights.lambda_msadv * msadv;
}

}  // namespace rainrig::loss

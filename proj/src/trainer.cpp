#include "trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "error.hpp"
#include "random.hpp"

namespace rainrig::train {

const char* to_string(Target t) { return t == Target::kOriginal ? "original" : "photographed"; }

Target target_from_string(const std::string& s) {
  if (s == "photographed") return Target::kPhotographed;
  if (s == "original") return Target::kOriginal;
  fail(ErrorCode::kConfig, "target must be 'photographed' or 'original', got '" + s + "'");
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::kConfig, "epochs must be >= 1 (got " + std::to_string(epochs) + ")");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::kConfig, "learning_rate must be > 0");
  require(optimizer == "adam", ErrorCode::kConfig, "only the 'adam' optimizer is supported");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::kConfig, "adam betas must be in [0, 1)");
  require(batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
  require(crop_size >= 0, ErrorCode::kConfig, "crop_size must be >= 0");
  require(decay_start_epoch >= 0, ErrorCode::kConfig, "decay_start_epoch must be >= 0");
}

std::vector<TrainingPair> load_pairs(const dataset::DatasetManifest& manifest, const fs::path& base, Target target,
                                     const std::function<bool(const dataset::PairRecord&)>& keep) {
  std::vector<TrainingPair> out;
  for (const auto& r : manifest.records) {
    if (!keep(r)) continue;
    const std::string& clear = target == Target::kOriginal ? r.original_clear_path : r.clear_path;
    out.push_back({r.source_id, read_png(dataset::resolve(base, r.rainy_path)), read_png(dataset::resolve(base, clear))});
    require(out.back().rainy.size() == out.back().clear.size(), ErrorCode::kShape,
            "rainy and clear images differ in size for " + r.source_id);
    require(out.back().rainy.channels() == 3 && out.back().clear.channels() == 3, ErrorCode::kShape,
            "training images must be RGB: " + r.source_id);
  }
  return out;
}

namespace {

bool finite(const torch::Tensor& t) { return std::isfinite(t.item<double>()); }

std::string dump(const nlohmann::ordered_json& j) { return j.dump(); }

void write_string(torch::serialize::OutputArchive& ar, const std::string& key, const std::string& value) {
  ar.write(key, c10::IValue(value));
}

std::string read_string(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  require(ar.try_read(key, v) && v.isString(), ErrorCode::kIo, "checkpoint is missing '" + key + "'");
  return v.toStringRef();
}

std::int64_t read_int(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  require(ar.try_read(key, v) && v.isInt(), ErrorCode::kIo, "checkpoint is missing '" + key + "'");
  return v.toInt();
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
  require(fs::exists(path), ErrorCode::kIo, "checkpoint not found: " + path.string());
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
  } catch (const c10::Error& e) {
    fail(ErrorCode::kIo, "cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return ar;
}

CheckpointMeta meta_from(torch::serialize::InputArchive& ar, const fs::path& path) {
  const auto version = read_int(ar, "meta/version");
  require(version == CheckpointMeta::kVersion, ErrorCode::kConfig,
          "unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  CheckpointMeta m;
  m.g_spec = model::generator_spec_from_json(nlohmann::ordered_json::parse(read_string(ar, "meta/generator_spec")));
  m.d_spec = model::discriminator_spec_from_json(nlohmann::ordered_json::parse(read_string(ar, "meta/discriminator_spec")));
  m.weights = loss::loss_weights_from_json(nlohmann::ordered_json::parse(read_string(ar, "meta/loss_weights")));
  m.train_config = read_string(ar, "meta/train_config");
  m.epoch = static_cast<int>(read_int(ar, "meta/epoch"));
  m.iteration = read_int(ar, "meta/iteration");
  return m;
}

}  // namespace

Trainer::Trainer(const model::GeneratorSpec& g_spec, const model::DiscriminatorSpec& d_spec,
                 const loss::LossWeights& weights, const TrainConfig& config,
                 std::shared_ptr<loss::PerceptualExtractor> extractor)
    : g_spec_(g_spec), d_spec_(d_spec), weights_(weights), config_(config), extractor_(std::move(extractor)) {
  config_.validate();
  weights_.validate();
  require(extractor_ != nullptr, ErrorCode::kInvalidArgument, "trainer needs a perceptual extractor");
  require(weights_.n_adv == d_spec_.layers_per_scale, ErrorCode::kConfig,
          "n_adv must equal the discriminator's layers_per_scale");
  at::globalContext().setDeterministicAlgorithms(true, false);
  torch::manual_seed(config_.seed);
  g_ = model::Generator(g_spec_);
  d_ = model::Discriminator(d_spec_);
  const auto adam = torch::optim::AdamOptions(config_.learning_rate).betas({config_.beta1, config_.beta2});
  g_opt_ = std::make_unique<torch::optim::Adam>(g_->parameters(), adam);
  d_opt_ = std::make_unique<torch::optim::Adam>(d_->parameters(), adam);
}

void Trainer::set_learning_rate(double lr) {
  for (auto* opt : {g_opt_.get(), d_opt_.get()})
    for (auto& group : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

double Trainer::d_step(const torch::Tensor& rainy, const torch::Tensor& clear) {
  g_->train();
  d_->train();
  torch::Tensor fake;
  {
    torch::NoGradGuard guard;
    fake = g_->forward(rainy);
  }
  const auto real_out = d_->forward(clear);
  const auto fake_out = d_->forward(fake);
  const torch::Tensor loss = loss::disc_loss(real_out.patches, fake_out.patches);
  if (!finite(loss))
    fail(ErrorCode::kDivergence, "non-finite discriminator loss at iteration " + std::to_string(iteration + 1));
  d_opt_->zero_grad();
  loss.backward();
  d_opt_->step();
  return loss.item<double>();
}

torch::Tensor Trainer::generator_objective(const torch::Tensor& derained, const torch::Tensor& clear) {
  const auto fake_out = d_->forward(derained);
  model::DiscriminatorOutput real_out;
  {
    torch::NoGradGuard guard;
    real_out = d_->forward(clear);
  }
  const torch::Tensor adv = loss::adv_gen_loss(fake_out.patches);
  const torch::Tensor perc = loss::perceptual_loss(*extractor_, clear, derained, weights_);
  const torch::Tensor msadv = loss::ms_feature_loss(real_out.features, fake_out.features, weights_);
  return loss::total_gen_loss(adv, perc, msadv, weights_).total;
}

StepLosses Trainer::g_step(const torch::Tensor& rainy, const torch::Tensor& clear) {
  g_->train();
  d_->train();
  // D stays differentiable w.r.t. its input but collects no gradient.
  for (auto& p : d_->parameters()) p.set_requires_grad(false);
  struct Restore {
    model::Discriminator& d;
    ~Restore() {
      for (auto& p : d->parameters()) p.set_requires_grad(true);
    }
  } restore{d_};

  const torch::Tensor fake = g_->forward(rainy);
  const auto fake_out = d_->forward(fake);
  model::DiscriminatorOutput real_out;
  {
    torch::NoGradGuard guard;
    real_out = d_->forward(clear);
  }
  auto parts = loss::total_gen_loss(loss::adv_gen_loss(fake_out.patches),
                                    loss::perceptual_loss(*extractor_, clear, fake, weights_),
                                    loss::ms_feature_loss(real_out.features, fake_out.features, weights_), weights_);
  for (const auto* t : {&parts.adv, &parts.perc, &parts.msadv, &parts.total})
    if (!finite(*t)) fail(ErrorCode::kDivergence, "non-finite generator loss at iteration " + std::to_string(iteration + 1));
  g_opt_->zero_grad();
  parts.total.backward();
  g_opt_->step();
  StepLosses out;
  out.adv = parts.adv.item<double>();
  out.perc = parts.perc.item<double>();
  out.msadv = parts.msadv.item<double>();
  out.gen_total = parts.total.item<double>();
  return out;
}

StepLosses Trainer::step(const torch::Tensor& rainy, const torch::Tensor& clear) {
  const double disc = d_step(rainy, clear);
  StepLosses out = g_step(rainy, clear);
  out.disc = disc;
  ++iteration;
  return out;
}

void Trainer::save(const fs::path& path) const {
  torch::serialize::OutputArchive ar;
  ar.write("meta/version", c10::IValue(static_cast<std::int64_t>(CheckpointMeta::kVersion)));
  write_string(ar, "meta/generator_spec", dump(model::to_json(g_spec_)));
  write_string(ar, "meta/discriminator_spec", dump(model::to_json(d_spec_)));
  write_string(ar, "meta/loss_weights", dump(loss::to_json(weights_)));
  write_string(ar, "meta/train_config", config_.verbatim);
  ar.write("meta/epoch", c10::IValue(static_cast<std::int64_t>(epoch)));
  ar.write("meta/iteration", c10::IValue(iteration));
  torch::serialize::OutputArchive g_ar, d_ar, go_ar, do_ar;
  g_->save(g_ar);
  d_->save(d_ar);
  g_opt_->save(go_ar);
  d_opt_->save(do_ar);
  ar.write("generator", g_ar);
  ar.write("discriminator", d_ar);
  ar.write("generator_optimizer", go_ar);
  ar.write("discriminator_optimizer", do_ar);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  // Write beside the target and rename so an interrupted save never clobbers
  // the previous checkpoint.
  const fs::path tmp = path.string() + ".tmp";
  ar.save_to(tmp.string());
  fs::rename(tmp, path);
}

CheckpointMeta Trainer::read_meta(const fs::path& path) {
  auto ar = open_archive(path);
  return meta_from(ar, path);
}

void Trainer::load(const fs::path& path) {
  auto ar = open_archive(path);
  const CheckpointMeta m = meta_from(ar, path);
  require(dump(model::to_json(m.g_spec)) == dump(model::to_json(g_spec_)) &&
              dump(model::to_json(m.d_spec)) == dump(model::to_json(d_spec_)),
          ErrorCode::kConfig, "checkpoint " + path.string() + " was written for different model specs");
  torch::serialize::InputArchive g_ar, d_ar, go_ar, do_ar;
  ar.read("generator", g_ar);
  ar.read("discriminator", d_ar);
  ar.read("generator_optimizer", go_ar);
  ar.read("discriminator_optimizer", do_ar);
  g_->load(g_ar);
  d_->load(d_ar);
  g_opt_->load(go_ar);
  d_opt_->load(do_ar);
  epoch = m.epoch;
  iteration = m.iteration;
}

model::Generator load_generator(const fs::path& checkpoint) {
  auto ar = open_archive(checkpoint);
  const CheckpointMeta m = meta_from(ar, checkpoint);
  model::Generator g(m.g_spec);
  torch::serialize::InputArchive g_ar;
  ar.read("generator", g_ar);
  g->load(g_ar);
  g->eval();
  return g;
}

namespace {

struct Batch {
  torch::Tensor rainy;
  torch::Tensor clear;
};

Batch make_batch(const std::vector<TrainingPair>& pairs, std::span<const std::size_t> idx, int crop, int multiple,
                 Rng& rng) {
  std::vector<torch::Tensor> rs, cs;
  std::optional<Size> size;
  for (const std::size_t i : idx) {
    const auto& p = pairs[i];
    torch::Tensor r = model::to_tensor(p.rainy);
    torch::Tensor c = model::to_tensor(p.clear);
    if (crop > 0) {
      require(crop <= p.rainy.width() && crop <= p.rainy.height(), ErrorCode::kShape,
              "crop_size " + std::to_string(crop) + " exceeds image " + p.id);
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.rainy.width() - crop + 1)));
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(p.rainy.height() - crop + 1)));
      using torch::indexing::Slice;
      r = r.index({Slice(), Slice(), Slice(y0, y0 + crop), Slice(x0, x0 + crop)});
      c = c.index({Slice(), Slice(), Slice(y0, y0 + crop), Slice(x0, x0 + crop)});
    } else {
      require(p.rainy.width() % multiple == 0 && p.rainy.height() % multiple == 0, ErrorCode::kShape,
              "image " + p.id + " is " + std::to_string(p.rainy.width()) + "x" + std::to_string(p.rainy.height()) +
                  "; dimensions must be multiples of " + std::to_string(multiple) + " (or set crop_size)");
      if (!size) size = p.rainy.size();
      require(*size == p.rainy.size(), ErrorCode::kShape, "batched images must share a size; set crop_size");
    }
    rs.push_back(r);
    cs.push_back(c);
  }
  return {torch::cat(rs), torch::cat(cs)};
}

std::string format_row(std::int64_t it, const StepLosses& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(it), l.adv, l.perc, l.msadv,
                l.disc, l.gen_total);
  return buf;
}

// Opens the log, keeping only rows up to `keep_through` when continuing.
std::ofstream open_log(const fs::path& path, std::int64_t keep_through) {
  std::vector<std::string> kept;
  if (keep_through > 0 && fs::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) <= keep_through) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write training log " + path.string());
  out << kLogHeader << '\n';
  for (const auto& l : kept) out << l << '\n';
  return out;
}

std::string epoch_name(const std::string& prefix, int e) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", e);
  return prefix + buf + ".ckpt";
}

RunResult run_epochs(Trainer& t, const std::vector<TrainingPair>& pairs, const fs::path& out_dir,
                     const std::string& log_name, const std::string& prefix, const std::string& final_name) {
  const TrainConfig& cfg = t.config();
  fs::create_directories(out_dir);
  RunResult res;
  res.log = out_dir / log_name;
  res.records = pairs.size();
  std::ofstream log = open_log(res.log, t.iteration);
  const int multiple = t.generator()->spec().required_multiple();
  if (cfg.crop_size > 0)
    require(cfg.crop_size % multiple == 0, ErrorCode::kConfig,
            "crop_size must be a multiple of " + std::to_string(multiple));

  for (int e = t.epoch + 1; e <= cfg.epochs; ++e) {
    double lr = cfg.learning_rate;
    if (cfg.decay_start_epoch > 0 && e > cfg.decay_start_epoch)
      lr *= 1.0 - static_cast<double>(e - cfg.decay_start_epoch) / (cfg.epochs - cfg.decay_start_epoch + 1);
    t.set_learning_rate(lr);

    // Order and crops depend only on (seed, epoch), so a resumed run matches an
    // uninterrupted one.
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(e)));
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    StepLosses sum;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - b);
      const Batch batch = make_batch(pairs, std::span(order).subspan(b, n), cfg.crop_size, multiple, rng);
      const StepLosses l = t.step(batch.rainy, batch.clear);
      log << format_row(t.iteration, l) << '\n';
      sum.adv += l.adv;
      sum.perc += l.perc;
      sum.msadv += l.msadv;
      sum.disc += l.disc;
      sum.gen_total += l.gen_total;
      ++steps;
    }
    log.flush();
    t.epoch = e;
    t.save(out_dir / epoch_name(prefix, e));
    t.save(out_dir / final_name);
    res.last_epoch_mean = {sum.adv / steps, sum.perc / steps, sum.msadv / steps, sum.disc / steps,
                           sum.gen_total / steps};
  }
  res.checkpoint = out_dir / final_name;
  res.epochs = t.epoch;
  res.iterations = t.iteration;
  return res;
}

}  // namespace

RunResult train(const dataset::DatasetManifest& manifest, const fs::path& manifest_dir,
                const model::GeneratorSpec& g_spec, const model::DiscriminatorSpec& d_spec,
                const loss::LossWeights& weights, const TrainConfig& config,
                std::shared_ptr<loss::PerceptualExtractor> extractor, const fs::path& out_dir) {
  config.validate();
  const auto pairs = load_pairs(manifest, manifest_dir, config.target,
                                [](const dataset::PairRecord& r) { return r.split == dataset::Split::kTrain; });
  require(!pairs.empty(), ErrorCode::kPrecondition, "manifest has no train records");
  Trainer t(g_spec, d_spec, weights, config, std::move(extractor));
  if (config.resume_from) t.load(*config.resume_from);
  return run_epochs(t, pairs, out_dir, "train_log.csv", "epoch_", "latest.ckpt");
}

RunResult finetune(const fs::path& checkpoint, const dataset::DatasetManifest& manifest, const fs::path& manifest_dir,
                   const TrainConfig& config, std::shared_ptr<loss::PerceptualExtractor> extractor,
                   const fs::path& out_dir) {
  config.validate();
  const CheckpointMeta meta = Trainer::read_meta(checkpoint);
  const auto pairs = load_pairs(manifest, manifest_dir, config.target,
                                [](const dataset::PairRecord& r) { return r.finetune_sample; });
  require(!pairs.empty(), ErrorCode::kPrecondition, "manifest has no finetune_sample records");
  Trainer t(meta.g_spec, meta.d_spec, meta.weights, config, std::move(extractor));
  // Weights only: the optimizers restart at the configured rate.
  auto ar = open_archive(checkpoint);
  torch::serialize::InputArchive g_ar, d_ar;
  ar.read("generator", g_ar);
  ar.read("discriminator", d_ar);
  t.generator()->load(g_ar);
  t.discriminator()->load(d_ar);
  return run_epochs(t, pairs, out_dir, "finetune_log.csv", "finetune_epoch_", "finetuned.ckpt");
}

}  // namespace rainrig::train

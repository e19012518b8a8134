// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance [--only 1,3,6] [--work DIR]
#include <torch/torch.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "calibration.hpp"
#include "dataset.hpp"
#include "droplet_sim.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "helpers.hpp"
#include "losses.hpp"
#include "pipeline.hpp"
#include "schema_check.hpp"
#include "stubs.hpp"
#include "trainer.hpp"

using namespace rainrig;
namespace fs = std::filesystem;

namespace {

// Collects sub-check failures for one criterion.
class Tally {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok) failed_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failed_.empty(); }
  std::string detail() const {
    std::ostringstream os;
    os << checks_ - failed_.size() << "/" << checks_ << " checks";
    for (const auto& n : notes_) os << "; " << n;
    for (std::size_t i = 0; i < failed_.size() && i < 4; ++i) os << "; failed: " << failed_[i];
    if (failed_.size() > 4) os << "; +" << failed_.size() - 4 << " more";
    return os.str();
  }

 private:
  int checks_ = 0;
  std::vector<std::string> failed_;
  std::vector<std::string> notes_;
};

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// ---------------------------------------------------------------- 1

calib::Homography random_h(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lin(-0.1, 0.1), tr(-20, 20), persp(-1e-4, 1e-4);
  Eigen::Matrix3d m;
  m << 1 + lin(rng), lin(rng), tr(rng), lin(rng), 1 + lin(rng), tr(rng), persp(rng), persp(rng), 1;
  return calib::Homography(m);
}

// Mean distance between the estimate and the truth over the given points.
double truth_error(const calib::Homography& est, const calib::Homography& truth,
                   const std::vector<calib::Point2>& pts, const std::vector<bool>* keep = nullptr) {
  double s = 0;
  int n = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (keep && !(*keep)[i]) continue;
    const auto a = est.apply(pts[i]), b = truth.apply(pts[i]);
    s += std::hypot(a.x - b.x, a.y - b.y);
    ++n;
  }
  return s / n;
}

Tally homography_suite() {
  Tally t;
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> ux(0, 640), uy(0, 480), ang(0, 2 * M_PI), mag(30, 120);
  std::normal_distribution<double> noise(0.0, 0.2);
  double worst_plain = 0, worst_robust = 0;
  int outliers_caught = 0, outliers_total = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto h = random_h(rng);
    std::vector<calib::Point2> pts(20);
    std::vector<calib::Correspondence> c(20);
    for (int i = 0; i < 20; ++i) {
      pts[i] = {ux(rng), uy(rng)};
      const auto q = h.apply(pts[i]);
      c[i] = {pts[i], {q.x + noise(rng), q.y + noise(rng)}};
    }
    const auto plain = calib::estimate_homography(c);
    const double e = truth_error(plain.h, h, pts);
    worst_plain = std::max(worst_plain, e);
    t.expect(e < 0.5, "trial " + std::to_string(trial) + " error " + fmt(e));
    t.expect(plain.mean_reprojection_error < 0.5, "trial " + std::to_string(trial) + " residual");

    // Robust: 20% gross outliers.
    auto bad = c;
    std::vector<bool> clean(20, true);
    for (int i = 0; i < 4; ++i) {
      const int k = (trial + 5 * i) % 20;
      const double a = ang(rng), r = mag(rng);
      bad[k].image_pt.x += r * std::cos(a);
      bad[k].image_pt.y += r * std::sin(a);
      clean[k] = false;
    }
    calib::EstimateOptions opt;
    opt.robust = true;
    opt.seed = static_cast<std::uint64_t>(trial);
    const auto robust = calib::estimate_homography(bad, opt);
    const double er = truth_error(robust.h, h, pts, &clean);
    worst_robust = std::max(worst_robust, er);
    t.expect(er < 0.5, "robust trial " + std::to_string(trial) + " error " + fmt(er));
    for (int i = 0; i < 20; ++i)
      if (!clean[i]) {
        ++outliers_total;
        outliers_caught += !robust.inliers[i];
      }
  }
  t.expect(outliers_caught == outliers_total, "outliers flagged");
  t.note("worst mean error " + fmt(worst_plain, 3) + " px plain, " + fmt(worst_robust, 3) + " px with outliers");
  t.note(std::to_string(outliers_caught) + "/" + std::to_string(outliers_total) + " outliers rejected");
  return t;
}

// ---------------------------------------------------------------- 2

Tally loss_oracles() {
  using namespace loss;
  Tally t;
  const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  auto full = [&](double v) { return torch::full({1, 1, 6, 6}, v, f64); };
  auto val = [](const torch::Tensor& x) { return x.item<double>(); };
  constexpr double tol = 1e-9;

  t.expect(near(val(adv_gen_loss({full(1)})), 0, tol), "adv ones");
  t.expect(near(val(adv_gen_loss({full(0)})), 1, tol), "adv zeros");
  t.expect(near(val(adv_gen_loss({torch::tensor({0.5, 1.5}, f64)})), 0.25, tol), "adv [0.5,1.5]");
  t.expect(near(val(disc_loss({full(1)}, {full(0)})), 0, tol), "disc perfect");
  t.expect(near(val(disc_loss({full(0)}, {full(1)})), 2, tol), "disc worst");
  t.expect(near(val(disc_loss({full(0.5)}, {full(0.5)})), 0.5, tol), "disc halves");

  LossWeights w4;
  w4.n_vgg = 4;
  w4.n_adv = 4;
  const double expect_div[4] = {8, 4, 2, 1};
  for (int i = 1; i <= 4; ++i) {
    t.expect(w4.perceptual_divisor(i) == expect_div[i - 1], "perceptual divisor " + std::to_string(i));
    t.expect(w4.feature_divisor(i) == expect_div[i - 1], "feature divisor " + std::to_string(i));
  }
  for (int i = 1; i < 4; ++i) t.expect(w4.perceptual_divisor(i) == 2 * w4.perceptual_divisor(i + 1), "monotone");

  testutil::ScaledStub stub(4);
  torch::manual_seed(1);
  const auto clear = torch::rand({1, 3, 8, 8}, f64);
  t.expect(val(perceptual_loss(stub, clear, clear.clone(), w4)) == 0.0, "perceptual identity");
  double closed = 0;
  for (int i = 1; i <= 4; ++i) closed += i * 0.1 / std::pow(2.0, 4 - i);
  t.expect(near(val(perceptual_loss(stub, clear, clear + 0.1, w4)), closed, tol), "perceptual stub closed form");
  bool threw = false;
  try {
    perceptual_loss(stub, clear, torch::rand({1, 3, 8, 6}, f64), w4);
  } catch (const Error&) {
    threw = true;
  }
  t.expect(threw, "perceptual shape mismatch");

  auto stacks = [&](int which, double by) {
    std::vector<torch::Tensor> a, b;
    for (int i = 1; i <= 4; ++i) {
      const auto base = torch::rand({1, 4, 8, 8}, f64);
      const auto sign = (torch::arange(base.numel(), f64) % 2 * 2 - 1).view(base.sizes());
      a.push_back(base);
      b.push_back(i == which ? base + by * sign : base.clone());
    }
    return std::pair{a, b};
  };
  {
    auto [a, b] = stacks(4, 0.2);
    t.expect(val(ms_feature_loss({a}, {a}, w4)) == 0.0, "feature identity");
    t.expect(near(val(ms_feature_loss({a}, {b}, w4)), 0.2, tol), "feature layer 4");
  }
  {
    auto [a, b] = stacks(1, 0.2);
    t.expect(near(val(ms_feature_loss({a}, {b}, w4)), 0.025, tol), "feature layer 1");
    auto short_b = b;
    short_b.pop_back();
    threw = false;
    try {
      ms_feature_loss({a}, {short_b}, w4);
    } catch (const Error&) {
      threw = true;
    }
    t.expect(threw, "feature structure mismatch");
  }

  LossWeights d;
  t.expect(near(total_gen_loss(0.25, 0.1, 0.05, d), 1.75, tol), "total 1.75");
  LossWeights zero;
  zero.lambda_adv = zero.lambda_perc = zero.lambda_msadv = 0;
  t.expect(total_gen_loss(0.7, 0.3, 0.2, zero) == 0.0, "total zero weights");
  LossWeights one;
  one.lambda_perc = one.lambda_msadv = 0;
  t.expect(total_gen_loss(0.3125, 0, 0, one) == 0.3125, "total identity");
  return t;
}

// ---------------------------------------------------------------- 3, 4

model::GeneratorSpec toy_g() {
  model::GeneratorSpec s;
  s.down_layers = s.up_layers = 1;
  s.residual_blocks = 1;
  s.base_channels = 4;
  return s;
}

model::DiscriminatorSpec toy_d() {
  model::DiscriminatorSpec s;
  s.num_scales = 2;
  s.layers_per_scale = 2;
  s.base_channels = 4;
  return s;
}

loss::LossWeights toy_w() {
  loss::LossWeights w;
  w.n_vgg = 3;
  w.n_adv = 2;
  return w;
}

train::TrainConfig toy_cfg() {
  train::TrainConfig c;
  c.epochs = 1;
  c.seed = 17;
  return c;
}

Tally gradient_check() {
  Tally t;
  train::Trainer tr(toy_g(), toy_d(), toy_w(), toy_cfg(), std::make_shared<testutil::PooledStub>(3));
  tr.discriminator()->to(torch::kFloat64);
  torch::manual_seed(23);
  const auto clear = torch::rand({1, 3, 32, 32}, torch::kFloat64);
  const auto x = torch::rand({1, 3, 32, 32}, torch::kFloat64).requires_grad_(true);
  tr.generator_objective(x, clear).backward();
  const auto grad = x.grad().clone();
  torch::NoGradGuard ng;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pix(0, 31), ch(0, 2);
  const double h = 1e-6;
  int ok = 0;
  const int n = 200;
  for (int k = 0; k < n; ++k) {
    const int c = ch(rng), y = pix(rng), xx = pix(rng);
    auto xp = x.detach().clone(), xm = x.detach().clone();
    xp[0][c][y][xx] += h;
    xm[0][c][y][xx] -= h;
    const double fd =
        (tr.generator_objective(xp, clear).item<double>() - tr.generator_objective(xm, clear).item<double>()) / (2 * h);
    const double an = grad[0][c][y][xx].item<double>();
    ok += std::abs(fd - an) <= 1e-3 * std::max(std::abs(an), 1e-9);
  }
  t.expect(ok * 100 >= 95 * n, "agreement " + std::to_string(ok) + "/" + std::to_string(n));
  t.note(std::to_string(ok) + "/" + std::to_string(n) + " coordinates within 1e-3 relative");
  return t;
}

std::uint64_t param_hash(const torch::nn::Module& m) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const auto& p : m.parameters()) {
    const auto c = p.detach().contiguous();
    const auto* b = static_cast<const unsigned char*>(c.data_ptr());
    for (std::size_t i = 0; i < static_cast<std::size_t>(c.numel()) * c.element_size(); ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

Tally minimax_isolation() {
  Tally t;
  train::Trainer tr(toy_g(), toy_d(), toy_w(), toy_cfg(), std::make_shared<testutil::PooledStub>(3));
  torch::manual_seed(31);
  for (int round = 0; round < 3; ++round) {
    const auto rainy = torch::rand({1, 3, 32, 32}), clear = torch::rand({1, 3, 32, 32});
    auto g0 = param_hash(*tr.generator()), d0 = param_hash(*tr.discriminator());
    tr.d_step(rainy, clear);
    t.expect(param_hash(*tr.generator()) == g0, "D step changed G");
    t.expect(param_hash(*tr.discriminator()) != d0, "D step left D unchanged");
    g0 = param_hash(*tr.generator());
    d0 = param_hash(*tr.discriminator());
    tr.g_step(rainy, clear);
    t.expect(param_hash(*tr.discriminator()) == d0, "G step changed D");
    t.expect(param_hash(*tr.generator()) != g0, "G step left G unchanged");
  }
  return t;
}

// ---------------------------------------------------------------- 5

double mask_fraction(const sim::DropletField& f) {
  const auto m = sim::field_mask(f, f.plane);
  double on = 0;
  for (auto v : m) on += v;
  return on / static_cast<double>(m.size());
}

Tally simulator_invariants() {
  Tally t;
  const Image scene = testutil::natural_image(96, 72, 3);

  // Empty field: bit-exact.
  sim::DropletField empty;
  empty.plane = scene.size();
  t.expect(sim::composite_rainy(scene, empty) == scene, "empty field composite");
  sim::SceneGeometry geom;
  geom.capture_perturbation = calib::Homography::translation(1.5, -0.5);
  t.expect(sim::simulate_capture(scene, sim::PassKind::kRainy, &empty, geom, {}, scene.size()) ==
               sim::simulate_capture(scene, sim::PassKind::kClear, nullptr, geom, {}, scene.size()),
           "empty field capture equals clear capture");

  // Mask-confined difference.
  const auto field = sim::sample_droplet_field(4, 0.15, scene.size(), {3.0, 10.0, 0.2, 20000});
  const Image rainy = sim::composite_rainy(scene, field);
  const auto mask = sim::field_mask(field, scene.size());
  int outside_changed = 0, inside_changed = 0;
  for (int y = 0; y < scene.height(); ++y)
    for (int x = 0; x < scene.width(); ++x) {
      bool diff = false;
      for (int c = 0; c < 3; ++c) diff |= rainy.at(x, y, c) != scene.at(x, y, c);
      (mask[static_cast<std::size_t>(y) * scene.width() + x] ? inside_changed : outside_changed) += diff;
    }
  t.expect(outside_changed == 0, std::to_string(outside_changed) + " pixels changed outside the mask");
  t.expect(inside_changed > 0, "nothing changed inside the mask");

  // Coverage within 10% of target.
  std::string cov;
  for (double density : {0.1, 0.2, 0.3})
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto f = sim::sample_droplet_field(seed, density, {1024, 512}, {8.0, 40.0, 0.2, 20000});
      const double got = mask_fraction(f);
      t.expect(std::abs(got - density) <= 0.1 * density, "coverage " + fmt(got) + " for " + fmt(density, 1));
      if (seed == 1) cov += (cov.empty() ? "" : ", ") + fmt(density, 1) + "->" + fmt(got, 3);
    }
  t.note("coverage " + cov);

  // Inversion sign: across a dark|bright vertical edge the lens swaps sides.
  {
    const int w = 100, h = 60, edge = 50;
    Image tone(w, h, 3);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) tone.at(x, y, c) = x < edge ? 0.1f : 0.9f;
    sim::Droplet d;
    d.center = {edge + 2.0, 30};
    d.radius = 12;
    d.height_ratio = 0.5;
    const auto r = sim::render_droplet(tone, d);
    double left = 0, right = 0;
    int nl = 0, nr = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!r.mask[static_cast<std::size_t>(y) * w + x] || d.normalized_radius(x, y) > 0.7) continue;
        if (x < d.center.x - 2) {
          left += r.patch.at(x, y, 0);
          ++nl;
        } else if (x > d.center.x + 2) {
          right += r.patch.at(x, y, 0);
          ++nr;
        }
      }
    t.expect(nl > 0 && nr > 0 && left / nl > right / nr, "lens image not inverted");
  }

  // Gray-out for a droplet gathering most of the frame.
  {
    const Image s = testutil::natural_image(64, 64, 6);
    sim::Droplet d;
    d.center = {32, 32};
    d.radius = 20;
    d.height_ratio = 0.9;
    d.blur_sigma = 0.5;
    const double k = d.source_scale();
    t.expect(k * k * d.area() > 0.6 * 64 * 64, "gray-out case does not cover 60% of the frame");
    const auto r = sim::render_droplet(s, d);
    double sum = 0;
    int n = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (r.mask[static_cast<std::size_t>(y) * 64 + x]) {
          sum += luminance(r.patch, x, y);
          ++n;
        }
    const double gap = std::abs(sum / n - mean_luminance(s));
    t.expect(gap < 10.0 / 255.0, "gray-out gap " + fmt(gap * 255, 2) + "/255");
  }
  return t;
}

// ---------------------------------------------------------------- 6, 7, 8

PipelineConfig overfit_config(const fs::path& out) {
  auto c = PipelineConfig::parse(R"(
[run]
seed = 3
[source]
count = 8
width = 64
height = 64
[dataset]
train = 1
val = 0
test = 0
[model]
g_down_layers = 2
g_residual_blocks = 2
g_base_channels = 32
d_num_scales = 2
d_layers_per_scale = 3
d_base_channels = 16
[loss]
vgg_width_divisor = 1
[train]
epochs = 25
[eval]
split = all
)");
  c.set("paths.out", out.string());
  return c;
}

const eval::ReconstructionRow* photographed_row(const eval::MetricsReport& r) {
  for (const auto& row : r.reconstruction)
    if (row.reference == "clear_photographed") return &row;
  return nullptr;
}

std::optional<double> seg(const eval::MetricsReport& r, eval::Condition c) {
  for (const auto& row : r.segmentation)
    if (row.condition == c) return row.miou;
  return std::nullopt;
}

struct OverfitRun {
  fs::path out;
  std::int64_t iterations = 0;
  eval::MetricsReport report;
  double seconds = 0;
};

OverfitRun& overfit(const fs::path& work) {
  static std::optional<OverfitRun> run;
  if (!run) {
    const auto t0 = std::chrono::steady_clock::now();
    OverfitRun r;
    r.out = work / "overfit";
    fs::remove_all(r.out);
    Pipeline p(overfit_config(r.out));
    p.calibrate();
    p.capture(CapturePass::kBoth);
    p.build_dataset();
    r.iterations = p.train().iterations;
    r.report = p.evaluate(true);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run = std::move(r);
  }
  return *run;
}

Tally overfit_smoke(const fs::path& work) {
  Tally t;
  const auto& r = overfit(work);
  t.expect(r.iterations == 200, "iterations " + std::to_string(r.iterations));
  const auto* row = photographed_row(r.report);
  t.expect(row && row->derained && row->count == 8, "no derained aggregate over 8 pairs");
  if (row && row->derained) {
    const double gain = row->derained->psnr - row->rainy.psnr;
    t.expect(gain >= 3.0, "PSNR gain " + fmt(gain, 2) + " dB");
    t.expect(row->derained->ssim > row->rainy.ssim, "SSIM did not improve");
    t.note("PSNR " + fmt(row->rainy.psnr, 2) + " -> " + fmt(row->derained->psnr, 2) + " dB, SSIM " +
           fmt(row->rainy.ssim) + " -> " + fmt(row->derained->ssim));
  }
  t.note("pipeline " + fmt(r.seconds, 1) + " s");
  return t;
}

Tally segmentation_ordering(const fs::path& work) {
  Tally t;
  const auto& r = overfit(work);
  const auto rainy = seg(r.report, eval::Condition::kRainy);
  const auto der = seg(r.report, eval::Condition::kDerained);
  const auto clear = seg(r.report, eval::Condition::kClearPhotographed);
  const auto orig = seg(r.report, eval::Condition::kClearOriginal);
  t.expect(rainy && der && clear, "missing mIoU rows");
  if (rainy && der && clear) {
    t.expect(*rainy < *der, "rainy " + fmt(*rainy) + " not below derained " + fmt(*der));
    t.expect(*der <= *clear, "derained " + fmt(*der) + " above clear " + fmt(*clear));
    t.note("mIoU rainy " + fmt(*rainy) + " < derained " + fmt(*der) + " <= clear " + fmt(*clear) +
           (orig ? " (original " + fmt(*orig) + ")" : ""));
  }
  return t;
}

Tally finetune_protocol(const fs::path& work) {
  Tally t;
  // Subset sampling: 112 of 861, deterministic per seed.
  auto blank = [] {
    dataset::DatasetManifest m;
    m.records.resize(861);
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      m.records[i].source_id = "r" + std::to_string(i);
      m.records[i].split = dataset::Split::kTrain;
    }
    return m;
  };
  std::set<std::size_t> first;
  for (std::uint64_t seed : {1, 2, 42}) {
    auto a = blank(), b = blank();
    dataset::sample_finetune_subset(a, seed, 112);
    dataset::sample_finetune_subset(b, seed, 112);
    t.expect(dataset::count_finetune(a) == 112, "subset size");
    bool same = true;
    std::set<std::size_t> chosen;
    for (std::size_t i = 0; i < 861; ++i) {
      same &= a.records[i].finetune_sample == b.records[i].finetune_sample;
      if (a.records[i].finetune_sample) chosen.insert(i);
    }
    t.expect(same, "subset not deterministic for seed " + std::to_string(seed));
    if (seed == 1)
      first = chosen;
    else
      t.expect(chosen != first, "different seeds gave the same subset");
  }

  // Two domains: A is the overfit run; B draws other scenes under a denser,
  // smaller-droplet rain regime and keeps half its pairs for testing.
  const auto& a = overfit(work);
  const fs::path out_b = work / "domain_b";
  fs::remove_all(out_b);
  PipelineConfig cb = overfit_config(out_b);
  cb.set("run.seed", "11");
  cb.set("simulator.max_density", "0.3");
  cb.set("simulator.min_radius", "2");
  cb.set("simulator.max_radius", "6");
  cb.set("simulator.rim_darkening", "0.6");
  cb.set("dataset.train", "0.5");
  cb.set("dataset.test", "0.5");
  cb.set("dataset.finetune_count", "2");
  cb.set("eval.split", "test");
  cb.set("paths.checkpoint", (a.out / "checkpoints" / "latest.ckpt").string());
  cb.set("finetune.epochs", "15");
  Pipeline pb(cb);
  pb.calibrate();
  pb.capture(CapturePass::kBoth);
  pb.build_dataset();
  const auto before = pb.evaluate(false);
  const auto ft = pb.finetune();
  t.expect(ft.records == 2, "fine-tune used " + std::to_string(ft.records) + " records");
  PipelineConfig cb2 = cb;
  cb2.set("paths.checkpoint", ft.checkpoint.string());
  const auto after = Pipeline(cb2).evaluate(false);
  const auto* rb = photographed_row(before);
  const auto* ra = photographed_row(after);
  t.expect(rb && ra && rb->derained && ra->derained, "missing target-domain rows");
  if (rb && ra && rb->derained && ra->derained) {
    t.expect(ra->derained->psnr >= rb->derained->psnr, "target-domain PSNR fell");
    t.note("target-domain PSNR " + fmt(rb->derained->psnr, 2) + " -> " + fmt(ra->derained->psnr, 2) +
           " dB after fine-tuning (rainy " + fmt(rb->rainy.psnr, 2) + ")");
  }
  return t;
}

// ---------------------------------------------------------------- 9

Tally metric_oracles(const fs::path& work) {
  Tally t;
  using eval::psnr;
  using eval::ssim;
  const Image a = testutil::natural_image(40, 32, 2);
  t.expect(psnr(a, a) == eval::kPsnrCap, "psnr cap");
  t.expect(near(psnr(Image(8, 8, 1, 0), Image(8, 8, 1, 128), 255.0), 20 * std::log10(255.0 / 128.0), 1e-6),
           "psnr 0 vs 128");
  Image ck(8, 8, 1), inv(8, 8, 1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      ck.at(x, y, 0) = (x + y) % 2 ? 255.0f : 0.0f;
      inv.at(x, y, 0) = 255.0f - ck.at(x, y, 0);
    }
  t.expect(near(psnr(ck, inv, 255.0), 0.0, 1e-6), "psnr checker");

  t.expect(ssim(a, a) == 1.0, "ssim self color");
  const Image g = testutil::noise_image(50, 50, 1, 3);
  t.expect(ssim(g, g) == 1.0, "ssim self gray");
  const double mu = 0.4, d = 0.1, c1 = 1e-4;
  const double lum = (2 * mu * (mu + d) + c1) / (mu * mu + (mu + d) * (mu + d) + c1);
  const double flat = ssim(Image(16, 16, 1, static_cast<float>(mu)), Image(16, 16, 1, static_cast<float>(mu + d)));
  t.expect(near(flat, lum, 1e-6) && flat < 1.0, "ssim flat shift");
  const double noise = ssim(testutil::noise_image(256, 256, 1, 10), testutil::noise_image(256, 256, 1, 11));
  t.expect(std::abs(noise) < 0.1, "ssim noise " + fmt(noise));

  auto cm = [](int w, std::vector<std::int32_t> v) { return ClassMap{w, 1, std::move(v)}; };
  const auto gt = cm(4, {0, 0, 1, 1});
  t.expect(near(*eval::miou(gt, gt, 2), 1.0, 1e-6), "miou perfect");
  t.expect(near(*eval::miou(cm(4, {0, 0, 0, 0}), gt, 2), 0.25, 1e-6), "miou one class");
  t.expect(near(*eval::miou(cm(6, {0, 1, 1, 1, 2, 0}), cm(6, {0, 0, 1, 1, 255, 255}), 3, 255),
                (0.5 + 2.0 / 3.0) / 2, 1e-6),
           "miou ignore label");

  // Schema and table layout on a freshly produced report and on the fixture.
  std::ifstream sin(fs::path(RAINRIG_SOURCE_DIR) / "schemas/report.schema.json");
  const testutil::SchemaCheck schema(nlohmann::json::parse(sin));
  const fs::path out = work / "metrics";
  fs::remove_all(out);
  auto cfg = PipelineConfig::parse("[source]\ncount = 3\n[eval]\nsplit = all\n");
  cfg.set("paths.out", out.string());
  Pipeline p(cfg);
  p.calibrate();
  p.capture(CapturePass::kBoth);
  p.build_dataset();
  p.evaluate(true);
  const auto produced = nlohmann::json::parse(testutil::slurp(p.report_dir() / "report.json"));
  const auto errs = schema.validate(produced);
  t.expect(errs.empty(), errs.empty() ? "" : "report: " + errs.front());
  std::ifstream fin(fs::path(RAINRIG_SOURCE_DIR) / "tests/fixtures/reference_tables.json");
  const auto fixture = nlohmann::json::parse(fin);
  t.expect(schema.validate(fixture).empty(), "fixture fails the schema");

  const std::string tables = eval::render_tables(eval::report_from_json(nlohmann::ordered_json::parse(fixture.dump())));
  for (const char* col : {"RAINY PSNR", "RAINY SSIM", "DERAINED PSNR", "DERAINED SSIM", "mIoU"})
    t.expect(tables.find(col) != std::string::npos, std::string("missing column ") + col);
  std::size_t at = 0;
  for (const char* row : {"CLEAR-Original", "CLEAR-Photographed", "RAINY", "DERAINED"}) {
    const auto pos = tables.find(row, tables.find("mIoU"));
    t.expect(pos != std::string::npos && pos >= at, std::string("segmentation row out of order: ") + row);
    if (pos != std::string::npos) at = pos;
  }
  t.expect(tables.find("25.76") != std::string::npos && tables.find("0.6327") != std::string::npos,
           "fixture values not rendered");
  return t;
}

// ---------------------------------------------------------------- 10

std::map<std::string, std::string> snapshot(const fs::path& out) {
  std::map<std::string, std::string> files;
  auto add_tree = [&](const fs::path& dir) {
    if (!fs::exists(dir)) return;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = testutil::slurp(e.path());
  };
  add_tree(out / "captures");  // session log (frames and droplet fields), captured images
  add_tree(out / "dataset");   // manifest and aligned pairs
  files["calibration.json"] = testutil::slurp(out / "calibration.json");
  files["checkpoints/train_log.csv"] = testutil::slurp(out / "checkpoints" / "train_log.csv");
  return files;
}

Tally determinism(const fs::path& work) {
  Tally t;
  const fs::path out = work / "determinism";
  auto cfg = PipelineConfig::parse(R"(
[run]
seed = 8
[source]
count = 6
[dataset]
finetune_count = 1
[model]
g_down_layers = 2
g_residual_blocks = 1
g_base_channels = 8
d_layers_per_scale = 2
d_base_channels = 8
[loss]
vgg_width_divisor = 8
[train]
epochs = 2
)");
  cfg.set("paths.out", out.string());
  std::map<std::string, std::string> runs[2];
  for (auto& snap : runs) {
    fs::remove_all(out);
    Pipeline p(cfg);
    p.calibrate();
    p.capture(CapturePass::kBoth);
    p.build_dataset();
    p.train();
    snap = snapshot(out);
  }
  t.expect(runs[0].size() == runs[1].size(), "file sets differ");
  int mismatched = 0;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    const bool same = it != runs[1].end() && it->second == bytes;
    mismatched += !same;
    t.expect(same, name + " differs");
  }
  for (const char* must : {"dataset/manifest.jsonl", "captures/session/session.jsonl", "checkpoints/train_log.csv"})
    t.expect(runs[0].count(must) && !runs[0].at(must).empty(), std::string("missing ") + must);
  t.expect(runs[0]["captures/session/session.jsonl"].find("droplet_field") != std::string::npos,
           "session log carries no droplet fields");
  t.note(std::to_string(runs[0].size() - mismatched) + "/" + std::to_string(runs[0].size()) + " files byte-identical");
  return t;
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0: no limit
  std::function<Tally()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string work_opt;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--work", work_opt, "working directory (default: a fresh temp dir, removed afterwards)");
  CLI11_PARSE(app, argc, argv);

  std::optional<testutil::TempDir> tmp;
  fs::path work;
  if (work_opt.empty()) {
    tmp.emplace("acceptance");
    work = tmp->path();
  } else {
    work = work_opt;
    fs::create_directories(work);
  }
  torch::set_num_threads(std::max(1, static_cast<int>(std::thread::hardware_concurrency())));

  const std::vector<Criterion> criteria = {
      {1, "homography suite", 10, homography_suite},
      {2, "loss oracle suite", 5, loss_oracles},
      {3, "gradient check", 60, gradient_check},
      {4, "minimax isolation", 0, minimax_isolation},
      {5, "simulator invariants", 30, simulator_invariants},
      {6, "end-to-end overfit smoke", 600, [&] { return overfit_smoke(work); }},
      {7, "segmentation ordering", 0, [&] { return segmentation_ordering(work); }},
      {8, "fine-tune protocol", 0, [&] { return finetune_protocol(work); }},
      {9, "metric oracles", 0, [&] { return metric_oracles(work); }},
      {10, "determinism", 0, [&] { return determinism(work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    bool pass = false;
    std::string detail;
    try {
      const Tally t = c.run();
      pass = t.ok();
      detail = t.detail();
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      pass = false;
      detail += "; over the " + fmt(c.budget_s, 0) + " s budget";
    }
    failed += !pass;
    std::printf("%s %2d %s (%.1f s): %s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs, detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}

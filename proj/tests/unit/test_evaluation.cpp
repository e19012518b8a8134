#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "dataset.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "helpers.hpp"
#include "schema_check.hpp"
#include "synthetic.hpp"

using namespace rainrig;
using namespace rainrig::eval;
namespace fs = std::filesystem;

namespace {

Image filled(int w, int h, int c, float v) { return Image(w, h, c, v); }

ClassMap class_map(int w, int h, std::vector<std::int32_t> v) { return {w, h, std::move(v)}; }

// Straight per-window SSIM on BT.601 luma, no shared code with the library.
double ssim_oracle(const Image& a, const Image& b) {
  const int win = 11;
  const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double wsum = 0, w[11][11];
  for (int j = 0; j < win; ++j)
    for (int i = 0; i < win; ++i) wsum += w[j][i] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sigma * sigma));
  auto luma = [](const Image& img, int x, int y) {
    if (img.channels() == 1) return static_cast<double>(img.at(x, y, 0));
    return 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
  };
  double total = 0;
  int n = 0;
  for (int y0 = 0; y0 + win <= a.height(); ++y0)
    for (int x0 = 0; x0 + win <= a.width(); ++x0) {
      double ma = 0, mb = 0;
      for (int j = 0; j < win; ++j)
        for (int i = 0; i < win; ++i) {
          ma += w[j][i] / wsum * luma(a, x0 + i, y0 + j);
          mb += w[j][i] / wsum * luma(b, x0 + i, y0 + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int j = 0; j < win; ++j)
        for (int i = 0; i < win; ++i) {
          const double da = luma(a, x0 + i, y0 + j) - ma, db = luma(b, x0 + i, y0 + j) - mb;
          va += w[j][i] / wsum * da * da;
          vb += w[j][i] / wsum * db * db;
          cov += w[j][i] / wsum * da * db;
        }
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  return total / n;
}

Image add_noise(const Image& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, sigma);
  Image out = img;
  for (float& v : out.data()) v = static_cast<float>(v + n(rng));
  return out;
}

// Segmenter that reads the class straight from the red channel (class / 10).
class RedCodeSegmenter final : public Segmenter {
 public:
  ClassMap segment(const Image& img) override {
    ClassMap m{img.width(), img.height(), std::vector<std::int32_t>(img.pixel_count())};
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) m.at(x, y) = static_cast<int>(std::lround(img.at(x, y, 0) * 10));
    return m;
  }
  int class_count() const override { return 10; }
};

// Manifest over hand-written images: the rainy image is the clear one plus a
// bright square; labels are red-coded.
dataset::DatasetManifest toy_manifest(const fs::path& dir, int n) {
  dataset::DatasetManifest m;
  fs::create_directories(dir / "img");
  for (int i = 0; i < n; ++i) {
    const std::string id = "p" + std::to_string(i);
    Image clear(32, 32, 3);
    ClassMap labels{32, 32, std::vector<std::int32_t>(32 * 32)};
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const int cls = (x / 8 + y / 16 + i) % 4;
        labels.at(x, y) = cls;
        clear.at(x, y, 0) = cls / 10.0f;
        clear.at(x, y, 1) = 0.3f + 0.01f * x;
        clear.at(x, y, 2) = 0.5f;
      }
    Image rainy = clear;
    for (int y = 4; y < 14; ++y)
      for (int x = 4 + i; x < 14 + i; ++x)
        for (int c = 0; c < 3; ++c) rainy.at(x, y, c) = 0.9f;
    write_png(dir / "img" / (id + "_clear.png"), clear);
    write_png(dir / "img" / (id + "_photo.png"), clear);
    write_png(dir / "img" / (id + "_rainy.png"), rainy);
    write_class_png(dir / "img" / (id + "_label.png"), labels);
    dataset::PairRecord r;
    r.source_id = id;
    r.original_clear_path = "img/" + id + "_clear.png";
    r.clear_path = "img/" + id + "_photo.png";
    r.rainy_path = "img/" + id + "_rainy.png";
    r.label_paths["semantic"] = "img/" + id + "_label.png";
    r.split = dataset::Split::kTest;
    m.records.push_back(r);
  }
  return m;
}

testutil::SchemaCheck report_schema() {
  std::ifstream in(fs::path(RAINRIG_SOURCE_DIR) / "schemas/report.schema.json");
  return testutil::SchemaCheck(nlohmann::json::parse(in));
}

}  // namespace

TEST_CASE("psnr closed forms") {
  const Image a = testutil::natural_image(16, 16, 1);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(psnr(filled(8, 8, 1, 0), filled(8, 8, 1, 128), 255.0) ==
        doctest::Approx(20.0 * std::log10(255.0 / 128.0)).epsilon(1e-12));
  CHECK(std::abs(psnr(filled(8, 8, 1, 0), filled(8, 8, 1, 128), 255.0) - 5.9868) < 1e-3);
  Image c(8, 8, 1), ci(8, 8, 1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      c.at(x, y, 0) = (x + y) % 2 ? 255.0f : 0.0f;
      ci.at(x, y, 0) = 255.0f - c.at(x, y, 0);
    }
  CHECK(std::abs(psnr(c, ci, 255.0)) < 1e-6);
  CHECK_THROWS_AS(psnr(filled(8, 8, 1, 0), filled(8, 9, 1, 0)), Error);
}

TEST_CASE("psnr is symmetric and falls with noise") {
  const Image a = testutil::natural_image(64, 64, 2);
  double prev = 1e9;
  for (double sigma : {0.01, 0.02, 0.04, 0.08, 0.16}) {
    const Image b = add_noise(a, sigma, 5);
    CHECK(psnr(a, b) == psnr(b, a));
    const double p = psnr(a, b);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim of an image with itself is exactly one") {
  const Image a = testutil::natural_image(48, 40, 3);
  CHECK(ssim(a, a) == 1.0);
  const Image g = testutil::noise_image(30, 30, 1, 4);
  CHECK(ssim(g, g) == 1.0);
}

TEST_CASE("ssim matches a direct windowed oracle") {
  const Image a = testutil::natural_image(28, 24, 5);
  const Image b = add_noise(a, 0.05, 6);
  CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6);
  const Image c = testutil::noise_image(20, 17, 3, 7);
  const Image d = testutil::noise_image(20, 17, 3, 8);
  CHECK(std::abs(ssim(c, d) - ssim_oracle(c, d)) < 1e-6);
}

TEST_CASE("constant shift only lowers the luminance term") {
  // Flat patches: variances and covariance vanish, so contrast-structure is
  // exactly 1 and SSIM equals the luminance term.
  const double mu = 0.4, d = 0.1, c1 = 0.0001;
  const double lum = (2 * mu * (mu + d) + c1) / (mu * mu + (mu + d) * (mu + d) + c1);
  const double s = ssim(filled(16, 16, 1, static_cast<float>(mu)), filled(16, 16, 1, static_cast<float>(mu + d)));
  CHECK(std::abs(s - lum) < 1e-6);
  CHECK(s < 1.0);
  // Textured image: shift keeps contrast/structure, only luminance drops.
  const Image a = testutil::natural_image(32, 32, 9);
  Image b = a;
  for (float& v : b.data()) v += 0.05f;
  const double st = ssim(a, b);
  CHECK(st < 1.0);
  CHECK(st > 0.95);
}

TEST_CASE("independent uniform noise images have ssim near zero") {
  const Image a = testutil::noise_image(256, 256, 1, 10);
  const Image b = testutil::noise_image(256, 256, 1, 11);
  CHECK(std::abs(ssim(a, b)) < 0.1);
}

TEST_CASE("ssim is symmetric and bounded") {
  const Image a = testutil::natural_image(40, 40, 12);
  const Image b = add_noise(a, 0.1, 13);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  CHECK(ssim(a, b) <= 1.0);
  CHECK(ssim(a, b) >= -1.0);
  CHECK_THROWS_AS(ssim(filled(8, 8, 1, 0), filled(8, 8, 1, 0)), Error);
}

TEST_CASE("miou hand-computed cases") {
  const auto gt = class_map(4, 1, {0, 0, 1, 1});
  CHECK(*miou(gt, gt, 2) == 1.0);
  // pred all 0: IoU0 = 2/4, IoU1 = 0.
  CHECK(std::abs(*miou(class_map(4, 1, {0, 0, 0, 0}), gt, 2) - 0.25) < 1e-6);
  CHECK_FALSE(miou(gt, class_map(4, 1, {9, 9, 9, 9}), 2, 9).has_value());
  try {
    miou(class_map(4, 1, {0, 5, 0, 0}), gt, 2);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
  }
}

TEST_CASE("miou ignores ignore_label pixels and absent classes") {
  const auto gt = class_map(6, 1, {0, 0, 1, 1, 255, 255});
  const auto pred = class_map(6, 1, {0, 1, 1, 1, 2, 0});
  // Class 0: I=1, U=2; class 1: I=2, U=3; class 2 absent in gt.
  CHECK(std::abs(*miou(pred, gt, 3, 255) - (0.5 + 2.0 / 3.0) / 2.0) < 1e-12);
}

TEST_CASE("miou is invariant to a consistent relabeling") {
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> u(0, 4);
  std::vector<std::int32_t> g(400), p(400);
  for (int i = 0; i < 400; ++i) {
    g[i] = u(rng);
    p[i] = (u(rng) < 3) ? g[i] : u(rng);
  }
  const int perm[5] = {3, 0, 4, 1, 2};
  std::vector<std::int32_t> g2(400), p2(400);
  for (int i = 0; i < 400; ++i) {
    g2[i] = perm[g[i]];
    p2[i] = perm[p[i]];
  }
  const double a = *miou(class_map(20, 20, p), class_map(20, 20, g), 5);
  const double b = *miou(class_map(20, 20, p2), class_map(20, 20, g2), 5);
  CHECK(std::abs(a - b) < 1e-12);
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);
}

TEST_CASE("confusion matrix accumulates over a set") {
  ConfusionMatrix cm(2);
  cm.add(class_map(2, 1, {0, 1}), class_map(2, 1, {0, 1}));
  cm.add(class_map(2, 1, {0, 0}), class_map(2, 1, {1, 1}));
  CHECK(cm.total() == 4);
  CHECK(cm.at(1, 0) == 2);
  // Class 0: I=1, U=3; class 1: I=1, U=3.
  CHECK(std::abs(*cm.miou() - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("palette segmenter picks the nearest color") {
  const auto palette = synth::default_palette(4);
  const auto scene = synth::color_class_scene(3, {48, 48}, palette);
  PaletteSegmenter seg(palette);
  const ClassMap pred = seg.segment(scene.image);
  CHECK(*miou(pred, scene.labels, 4) == 1.0);
}

TEST_CASE("identity derainer reproduces the rainy columns") {
  testutil::TempDir tmp("evalid");
  const auto m = toy_manifest(tmp.path(), 3);
  const Derainer identity = [](const Image& x) { return x; };
  const auto rep = evaluate_reconstruction(m, tmp.path(), &identity);
  REQUIRE(rep.reconstruction.size() == 2);
  for (const auto& row : rep.reconstruction) {
    REQUIRE(row.derained.has_value());
    CHECK(row.derained->psnr == row.rainy.psnr);
    CHECK(row.derained->ssim == row.rainy.ssim);
    CHECK(row.count == 3);
  }
  double mean = 0;
  for (const auto& r : rep.records) mean += r.rainy.at("clear_original").psnr;
  CHECK(rep.reconstruction[0].rainy.psnr == doctest::Approx(mean / 3).epsilon(1e-12));

  ReconstructionOptions need;
  need.require_derained = true;
  CHECK_THROWS_AS(evaluate_reconstruction(m, tmp.path(), nullptr, need), Error);
  ReconstructionOptions val;
  val.split = dataset::Split::kVal;
  CHECK_THROWS_AS(evaluate_reconstruction(m, tmp.path(), nullptr, val), Error);
}

TEST_CASE("a model that removes the rain scores above rainy") {
  testutil::TempDir tmp("evalfix");
  const auto m = toy_manifest(tmp.path(), 2);
  const Derainer cheat = [&](const Image& rainy) {
    for (const auto& r : m.records)
      if (read_png(tmp.path() / r.rainy_path) == rainy) return read_png(tmp.path() / r.original_clear_path);
    return rainy;
  };
  const auto rep = evaluate_reconstruction(m, tmp.path(), &cheat);
  CHECK(rep.reconstruction[0].derained->psnr > rep.reconstruction[0].rainy.psnr);
  CHECK(rep.reconstruction[0].derained->psnr == kPsnrCap);
}

TEST_CASE("oracle segmenter scores one under every clear condition") {
  testutil::TempDir tmp("evalseg");
  const auto m = toy_manifest(tmp.path(), 3);
  RedCodeSegmenter seg;
  const Derainer identity = [](const Image& x) { return x; };
  const auto rep = evaluate_segmentation(m, tmp.path(), seg, &identity);
  REQUIRE(rep.segmentation.size() == 4);
  CHECK(*rep.segmentation[0].miou == 1.0);
  CHECK(*rep.segmentation[1].miou == 1.0);
  CHECK(*rep.segmentation[2].miou < 1.0);
  CHECK(*rep.segmentation[3].miou == *rep.segmentation[2].miou);
  CHECK(rep.errors.empty());
}

TEST_CASE("segmenter failures are counted, not fatal") {
  testutil::TempDir tmp("evalfail");
  const auto m = toy_manifest(tmp.path(), 3);
  RedCodeSegmenter seg;
  int calls = 0;
  const Derainer flaky = [&](const Image& x) {
    if (calls++ == 1) throw Error(ErrorCode::kShape, "boom");
    return x;
  };
  const auto rep = evaluate_segmentation(m, tmp.path(), seg, &flaky);
  const auto& derained = rep.segmentation[3];
  CHECK(derained.count == 2);
  CHECK(derained.failures == 1);
  CHECK(rep.errors.size() == 1);
}

TEST_CASE("segmentation requires labels") {
  testutil::TempDir tmp("evalnolab");
  auto m = toy_manifest(tmp.path(), 2);
  m.records[1].label_paths.clear();
  RedCodeSegmenter seg;
  CHECK_THROWS_AS(evaluate_segmentation(m, tmp.path(), seg, nullptr), Error);
}

TEST_CASE("reports validate against the schema and round trip") {
  testutil::TempDir tmp("evalrep");
  const auto m = toy_manifest(tmp.path(), 3);
  const Derainer identity = [](const Image& x) { return x; };
  RedCodeSegmenter seg;
  auto rep = evaluate_reconstruction(m, tmp.path(), &identity);
  merge(rep, evaluate_segmentation(m, tmp.path(), seg, &identity));
  const auto j = to_json(rep);
  const auto schema = report_schema();
  const auto errs = schema.validate(nlohmann::json::parse(j.dump()));
  for (const auto& e : errs) MESSAGE(e);
  CHECK(errs.empty());
  CHECK(to_json(report_from_json(j)).dump() == j.dump());

  // The validator itself rejects broken reports.
  auto bad = nlohmann::json::parse(j.dump());
  bad["segmentation"][0]["miou"] = 1.5;
  bad["reconstruction"][0].erase("rainy");
  bad["extra"] = 1;
  CHECK(schema.validate(bad).size() == 3);

  const std::string tables = render_tables(rep);
  CHECK(tables.find("RAINY PSNR") != std::string::npos);
  CHECK(tables.find("DERAINED SSIM") != std::string::npos);
  CHECK(tables.find("mIoU") != std::string::npos);
  const std::string csv = per_record_csv(rep);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 2);
}

TEST_CASE("reference numbers render in table layout") {
  std::ifstream in(fs::path(RAINRIG_SOURCE_DIR) / "tests/fixtures/reference_tables.json");
  const auto raw = nlohmann::json::parse(in);
  CHECK(report_schema().validate(raw).empty());
  const auto rep = report_from_json(nlohmann::ordered_json::parse(raw.dump()));
  const std::string t = render_tables(rep);
  for (const char* s : {"18.20", "0.6865", "25.76", "0.8817", "21.20", "0.8294", "17.84", "24.02", "31.55", "0.9020",
                        "0.7901", "0.7137", "0.1776", "0.6327"})
    CHECK_MESSAGE(t.find(s) != std::string::npos, s);
  // Segmentation rows appear in condition order.
  CHECK(t.find("0.7901") < t.find("0.7137"));
  CHECK(t.find("0.7137") < t.find("0.1776"));
  CHECK(t.find("0.1776") < t.find("0.6327"));
}

// Command-line front end. Talks to the pipeline only through the C API.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "rainrig/rainrig.h"

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

int exit_code(rr_status s) {
  if (s == RR_OK) return kOk;
  // Bad arguments and bad configuration are the caller's to fix.
  if (s == RR_INVALID_ARGUMENT || s == RR_CONFIG) return kUsage;
  return kRuntime;
}

int report_failure(const char* what, rr_status s, const char* detail) {
  std::fprintf(stderr, "rainrig %s: %s: %s\n", what, rr_status_string(s), detail);
  return exit_code(s);
}

struct Common {
  std::string config;
  std::string out;
  std::string backend;
  long long seed = -1;
  std::vector<std::string> overrides;  // section.key=value
};

std::string fetch(rr_pipeline* p, rr_status (*fn)(rr_pipeline*, char*, size_t, size_t*), rr_status& s) {
  size_t need = 0;
  s = fn(p, nullptr, 0, &need);
  if (s != RR_OK) return {};
  std::string buf(need, '\0');
  s = fn(p, buf.data(), buf.size(), &need);
  buf.resize(need ? need - 1 : 0);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rainrig: rig calibration, rainy capture simulation, dataset building, deraining and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--config", c.config, "pipeline config file (INI); falls back to $RAINRIG_CONFIG");
  app.add_option("--seed", c.seed, "override run.seed")->check(CLI::NonNegativeNumber);
  app.add_option("--out", c.out, "override paths.out");
  app.add_option("--backend", c.backend, "capture backend")->check(CLI::IsMember({"sim", "device"}));
  app.add_option("--set", c.overrides, "override any config key: section.key=value (repeatable)");

  auto* calibrate = app.add_subcommand("calibrate", "capture the test pattern and estimate the homography");
  auto* capture = app.add_subcommand("capture", "run the clear and/or rainy capture passes");
  std::string pass = "both";
  capture->add_option("--pass", pass, "clear, rainy or both")->check(CLI::IsMember({"clear", "rainy", "both"}));
  auto* build = app.add_subcommand("build-dataset", "pair captures, align, split and write the manifest");
  auto* train = app.add_subcommand("train", "train the deraining model on the train split");
  auto* finetune = app.add_subcommand("finetune", "fine-tune a checkpoint on the finetune_sample records");
  auto* derain = app.add_subcommand("derain", "derain a PNG file or a directory of PNGs");
  std::string input, output, checkpoint;
  derain->add_option("--input", input, "PNG file or directory")->required();
  derain->add_option("--output", output, "output directory")->required();
  for (auto* sc : {derain, finetune})
    sc->add_option("--checkpoint", checkpoint, "checkpoint (default <out>/checkpoints/latest.ckpt)");
  auto* evaluate = app.add_subcommand("evaluate", "PSNR/SSIM (and optionally mIoU) report");
  bool segmentation = false;
  evaluate->add_flag("--segmentation", segmentation, "also evaluate segmentation against source labels");
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint (default <out>/checkpoints/latest.ckpt)");
  auto* report = app.add_subcommand("report", "print the tables of the stored report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  if (c.config.empty())
    if (const char* env = std::getenv("RAINRIG_CONFIG")) c.config = env;
  if (c.config.empty()) {
    std::fprintf(stderr, "rainrig: no config given (use --config PATH or set RAINRIG_CONFIG)\n\n%s",
                 app.help().c_str());
    return kUsage;
  }

  rr_pipeline* p = nullptr;
  rr_status s = rr_pipeline_create(c.config.c_str(), &p);
  if (s != RR_OK) {
    std::fprintf(stderr, "rainrig: %s: %s\n", rr_status_string(s), rr_last_error());
    return kUsage;
  }
  struct Guard {
    rr_pipeline* p;
    ~Guard() { rr_pipeline_destroy(p); }
  } guard{p};

  std::vector<std::pair<std::string, std::string>> sets;
  if (c.seed >= 0) sets.emplace_back("run.seed", std::to_string(c.seed));
  if (!c.out.empty()) sets.emplace_back("paths.out", c.out);
  if (!c.backend.empty()) sets.emplace_back("run.backend", c.backend);
  if (!checkpoint.empty()) sets.emplace_back("paths.checkpoint", checkpoint);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "rainrig: --set expects section.key=value, got '%s'\n", o.c_str());
      return kUsage;
    }
    sets.emplace_back(o.substr(0, eq), o.substr(eq + 1));
  }
  for (const auto& [k, v] : sets) {
    s = rr_pipeline_set(p, k.c_str(), v.c_str());
    if (s != RR_OK) return report_failure("config", s, rr_pipeline_last_error(p));
  }

  const char* name = app.get_subcommands().front()->get_name().c_str();
  if (calibrate->parsed()) {
    double err = 0.0;
    s = rr_calibrate(p, &err);
    if (s == RR_OK) std::printf("calibrated: mean reprojection error %.4f px\n", err);
  } else if (capture->parsed()) {
    const rr_capture_pass cp = pass == "clear" ? RR_PASS_CLEAR : pass == "rainy" ? RR_PASS_RAINY : RR_PASS_BOTH;
    s = rr_capture(p, cp);
  } else if (build->parsed()) {
    s = rr_build_dataset(p);
  } else if (train->parsed()) {
    s = rr_train(p);
  } else if (finetune->parsed()) {
    s = rr_finetune(p);
  } else if (derain->parsed()) {
    size_t n = 0;
    s = rr_derain(p, input.c_str(), output.c_str(), &n);
    if (s == RR_OK) std::printf("derained %zu image(s) into %s\n", n, output.c_str());
  } else if (evaluate->parsed()) {
    s = rr_evaluate(p, segmentation ? 1 : 0);
    if (s == RR_OK) {
      const std::string tables = fetch(p, rr_report, s);
      if (s == RR_OK) std::fputs(tables.c_str(), stdout);
    }
  } else if (report->parsed()) {
    const std::string tables = fetch(p, rr_report, s);
    if (s == RR_OK) std::fputs(tables.c_str(), stdout);
  }
  if (s != RR_OK) return report_failure(name, s, rr_pipeline_last_error(p));
  return kOk;
}

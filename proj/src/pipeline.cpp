#include "pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "error.hpp"
#include "random.hpp"
#include "synthetic.hpp"

namespace rainrig {

namespace {

// section.key -> default. Declaration order is irrelevant; output is sorted.
const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> kDefaults = {
      {"run.seed", "0"},
      {"run.backend", "sim"},

      {"paths.out", "rainrig_out"},
      {"paths.source", ""},  // empty: synthetic scenes under <out>/source
      {"paths.calibration", "calibration.json"},
      {"paths.captures", "captures"},
      {"paths.session", "session"},
      {"paths.dataset", "dataset"},
      {"paths.checkpoints", "checkpoints"},
      {"paths.checkpoint", ""},
      {"paths.report", "report"},
      {"paths.vgg_weights", ""},

      {"source.count", "8"},
      {"source.width", "64"},
      {"source.height", "64"},
      {"source.classes", "4"},

      {"rig.screen_distance_mm", "320"},
      {"rig.pane_offset_mm", "170"},
      {"rig.pane_tilt_deg", "20"},
      {"rig.pane_thickness_mm", "4"},
      {"rig.pane_refractive_index", "1.52"},
      {"rig.monitor_width_mm", "597"},
      {"rig.capture_rate_hz", "1"},
      {"rig.settle_s", "0.2"},
      {"rig.lights_off", "true"},

      {"pattern.style", "checkerboard"},
      {"pattern.rows", "4"},
      {"pattern.cols", "5"},
      {"pattern.cell_px", "9"},
      {"pattern.margin_px", "4"},

      {"simulator.perturbation", "1.004,0.006,0.8,-0.005,0.998,-0.6,0,0,1"},
      {"simulator.max_density", "0.2"},
      {"simulator.pressure_proportional", "true"},
      {"simulator.pressure_min", "0.5"},
      {"simulator.pressure_max", "1.0"},
      {"simulator.min_radius", "3"},
      {"simulator.max_radius", "10"},
      {"simulator.streak_fraction", "0.2"},
      {"simulator.max_attempts", "20000"},
      {"simulator.noise_sigma", "0.004"},
      {"simulator.gray_threshold", "0.6"},
      {"simulator.rim_width", "0.12"},
      {"simulator.rim_darkening", "0.45"},
      {"simulator.fail_on_trigger", "-1"},

      {"dataset.residual_threshold_px", "1"},
      {"dataset.copy_labels", "false"},
      {"dataset.split_mode", "auto"},
      {"dataset.train", "0.8"},
      {"dataset.val", "0.1"},
      {"dataset.test", "0.1"},
      {"dataset.finetune_count", "0"},

      {"model.g_down_layers", "4"},
      {"model.g_residual_blocks", "6"},
      {"model.g_base_channels", "64"},
      {"model.g_max_channels", "512"},
      {"model.d_num_scales", "2"},
      {"model.d_layers_per_scale", "4"},
      {"model.d_base_channels", "64"},
      {"model.d_max_channels", "512"},

      {"loss.lambda_adv", "1"},
      {"loss.lambda_perc", "10"},
      {"loss.lambda_msadv", "10"},
      {"loss.n_vgg", "5"},
      {"loss.vgg_width_divisor", "1"},

      {"train.epochs", "100"},
      {"train.optimizer", "adam"},
      {"train.learning_rate", "0.0002"},
      {"train.beta1", "0.5"},
      {"train.beta2", "0.999"},
      {"train.batch_size", "1"},
      {"train.crop_size", "0"},
      {"train.decay_start_epoch", "0"},
      {"train.target", "photographed"},
      {"train.resume_from", ""},

      {"finetune.epochs", "10"},
      {"finetune.learning_rate", ""},  // empty: train.learning_rate

      {"eval.split", "test"},
      {"eval.dataset", "simulated"},
      {"eval.model", "rainrig"},
      {"eval.label_task", "semantic"},
      {"eval.ignore_label", "-1"},
  };
  return kDefaults;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  require(ec == std::errc() && ptr == end, ErrorCode::kConfig, "config " + key + ": '" + v + "' is not a valid number");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// --- Config -------------------------------------------------------------------------

PipelineConfig::PipelineConfig() : values_(defaults()) {}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  require(fs::is_regular_file(path), ErrorCode::kConfig, "config file not found: " + path.string());
  return parse(read_text(path));
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
  PipelineConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      require(body.data().empty(), ErrorCode::kConfig, "config: key '" + section + "' must live inside a [section]");
      const bool known = std::any_of(cfg.values_.begin(), cfg.values_.end(),
                                     [&](const auto& kv) { return kv.first.rfind(section + ".", 0) == 0; });
      require(known, ErrorCode::kConfig, "unknown config section [" + section + "]");
    }
    for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
  }
  return cfg;
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  require(it != values_.end(), ErrorCode::kConfig, "unknown config key '" + key + "'");
  it->second = trim(value);
}

const std::string& PipelineConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  require(it != values_.end(), ErrorCode::kConfig, "unknown config key '" + key + "'");
  return it->second;
}

std::vector<std::string> PipelineConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : values_) out.push_back(k);
  return out;
}

double PipelineConfig::real(const std::string& key) const {
  return parse_number<double>(key, get(key));
}

int PipelineConfig::integer(const std::string& key) const { return parse_number<int>(key, get(key)); }

std::uint64_t PipelineConfig::u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

bool PipelineConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::kConfig, "config " + key + ": '" + v + "' is not a boolean");
}

std::string PipelineConfig::resolved() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    const std::string s = k.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
    }
    out << k.substr(dot + 1) << " = " << v << '\n';
  }
  return out.str();
}

calib::TestPatternSpec PipelineConfig::pattern() const {
  calib::TestPatternSpec p;
  const std::string& style = get("pattern.style");
  require(style == "checkerboard" || style == "circles", ErrorCode::kConfig,
          "pattern.style must be checkerboard or circles");
  p.marker_style = style == "circles" ? calib::MarkerStyle::kCircles : calib::MarkerStyle::kCheckerboard;
  p.grid_rows = integer("pattern.rows");
  p.grid_cols = integer("pattern.cols");
  p.cell_px = integer("pattern.cell_px");
  p.margin_px = integer("pattern.margin_px");
  p.validate();
  return p;
}

rig::RigConfig PipelineConfig::rig() const {
  rig::RigConfig r;
  r.screen_distance_mm = real("rig.screen_distance_mm");
  r.pane_offset_mm = real("rig.pane_offset_mm");
  r.pane_tilt_deg = real("rig.pane_tilt_deg");
  r.capture_rate_hz = real("rig.capture_rate_hz");
  r.settle_s = real("rig.settle_s");
  r.lights_off = flag("rig.lights_off");
  r.validate();
  return r;
}

rig::SimulatorConfig PipelineConfig::simulator() const {
  rig::SimulatorConfig s;
  s.display = {integer("source.width"), integer("source.height")};
  s.geometry.screen_distance_mm = real("rig.screen_distance_mm");
  s.geometry.pane_offset_mm = real("rig.pane_offset_mm");
  s.geometry.pane_tilt_deg = real("rig.pane_tilt_deg");
  s.geometry.pane_thickness_mm = real("rig.pane_thickness_mm");
  s.geometry.pane_refractive_index = real("rig.pane_refractive_index");
  s.geometry.monitor_width_mm = real("rig.monitor_width_mm");
  std::vector<double> h;
  std::istringstream ss(get("simulator.perturbation"));
  for (std::string item; std::getline(ss, item, ',');) h.push_back(parse_number<double>("simulator.perturbation", trim(item)));
  require(h.size() == 9, ErrorCode::kConfig, "simulator.perturbation needs 9 comma-separated numbers");
  s.geometry.capture_perturbation = calib::Homography::from_row_major(h);
  s.max_density = real("simulator.max_density");
  s.pressure_proportional = flag("simulator.pressure_proportional");
  s.sampling.min_radius = real("simulator.min_radius");
  s.sampling.max_radius = real("simulator.max_radius");
  s.sampling.streak_fraction = real("simulator.streak_fraction");
  s.sampling.max_attempts = integer("simulator.max_attempts");
  s.optics.gray_threshold = real("simulator.gray_threshold");
  s.optics.rim_width = real("simulator.rim_width");
  s.optics.rim_darkening = real("simulator.rim_darkening");
  s.noise_sigma = real("simulator.noise_sigma");
  s.seed = seed();
  const int fail_at = integer("simulator.fail_on_trigger");
  if (fail_at >= 0) s.fail_on_trigger = fail_at;
  return s;
}

model::GeneratorSpec PipelineConfig::generator() const {
  model::GeneratorSpec g;
  g.down_layers = integer("model.g_down_layers");
  g.up_layers = g.down_layers;
  g.residual_blocks = integer("model.g_residual_blocks");
  g.base_channels = integer("model.g_base_channels");
  g.max_channels = integer("model.g_max_channels");
  g.validate();
  return g;
}

model::DiscriminatorSpec PipelineConfig::discriminator() const {
  model::DiscriminatorSpec d;
  d.num_scales = integer("model.d_num_scales");
  d.layers_per_scale = integer("model.d_layers_per_scale");
  d.base_channels = integer("model.d_base_channels");
  d.max_channels = integer("model.d_max_channels");
  d.validate();
  return d;
}

loss::LossWeights PipelineConfig::loss_weights() const {
  loss::LossWeights w;
  w.lambda_adv = real("loss.lambda_adv");
  w.lambda_perc = real("loss.lambda_perc");
  w.lambda_msadv = real("loss.lambda_msadv");
  w.n_vgg = integer("loss.n_vgg");
  w.n_adv = integer("model.d_layers_per_scale");
  require(w.n_vgg == 5, ErrorCode::kConfig, "loss.n_vgg must be 5 (one tap per block of the VGG trunk)");
  w.validate();
  return w;
}

train::TrainConfig PipelineConfig::train() const {
  train::TrainConfig t;
  t.epochs = integer("train.epochs");
  t.optimizer = get("train.optimizer");
  t.learning_rate = real("train.learning_rate");
  t.beta1 = real("train.beta1");
  t.beta2 = real("train.beta2");
  t.batch_size = integer("train.batch_size");
  t.seed = seed();
  t.crop_size = integer("train.crop_size");
  t.decay_start_epoch = integer("train.decay_start_epoch");
  t.target = train::target_from_string(get("train.target"));
  if (!get("train.resume_from").empty()) t.resume_from = fs::path(get("train.resume_from"));
  t.verbatim = resolved();
  t.validate();
  return t;
}

train::TrainConfig PipelineConfig::finetune() const {
  train::TrainConfig t = train();
  t.resume_from.reset();
  t.epochs = integer("finetune.epochs");
  if (!get("finetune.learning_rate").empty()) t.learning_rate = real("finetune.learning_rate");
  t.validate();
  return t;
}

CapturePass capture_pass_from_string(const std::string& s) {
  if (s == "clear") return CapturePass::kClear;
  if (s == "rainy") return CapturePass::kRainy;
  if (s == "both") return CapturePass::kBoth;
  fail(ErrorCode::kInvalidArgument, "pass must be clear, rainy or both (got '" + s + "')");
}

// --- Pipeline -----------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
  const std::string& backend = config_.get("run.backend");
  require(backend == "sim" || backend == "device", ErrorCode::kConfig, "run.backend must be sim or device");
}

fs::path Pipeline::out_dir() const { return config_.get("paths.out"); }

fs::path Pipeline::source_dir() const {
  const std::string& s = config_.get("paths.source");
  return s.empty() ? out_dir() / "source" : fs::path(s);
}

fs::path Pipeline::calibration_file() const { return out_dir() / config_.get("paths.calibration"); }
fs::path Pipeline::session_dir() const { return out_dir() / config_.get("paths.captures") / config_.get("paths.session"); }
fs::path Pipeline::dataset_dir() const { return out_dir() / config_.get("paths.dataset"); }
fs::path Pipeline::checkpoint_dir() const { return out_dir() / config_.get("paths.checkpoints"); }
fs::path Pipeline::report_dir() const { return out_dir() / config_.get("paths.report"); }

fs::path Pipeline::checkpoint_file() const {
  const std::string& c = config_.get("paths.checkpoint");
  return c.empty() ? checkpoint_dir() / "latest.ckpt" : fs::path(c);
}

void Pipeline::require_sim_backend() const {
  if (config_.get("run.backend") == "device")
    fail(ErrorCode::kDevice,
         "device backend: no display/camera/sprayer drivers are built into this binary; implement the rig "
         "device interfaces to use real hardware");
}

void Pipeline::write_resolved(const fs::path& dir) const { write_text(dir / "resolved_config.ini", config_.resolved()); }

std::vector<rig::SourceImage> Pipeline::load_sources() {
  const fs::path root = source_dir();
  if (config_.get("paths.source").empty()) {
    synth::SourceOptions opt;
    opt.count = config_.integer("source.count");
    opt.size = {config_.integer("source.width"), config_.integer("source.height")};
    opt.classes = config_.integer("source.classes");
    opt.seed = mix_seed(config_.seed(), 0x5eed);
    synth::write_source(root, opt);
  }
  const Size display{config_.integer("source.width"), config_.integer("source.height")};
  std::vector<rig::SourceImage> out;
  for (const auto& e : dataset::DirectorySource(root).entries()) {
    Image img = read_png(e.clear_image_path);
    require(img.size() == display, ErrorCode::kShape,
            "source image " + e.source_id + " does not match the display size source.width x source.height");
    require(img.channels() == 3, ErrorCode::kShape, "source image " + e.source_id + " must be RGB");
    out.push_back({e.source_id, std::move(img)});
  }
  require(!out.empty(), ErrorCode::kPrecondition, "no source images under " + root.string());
  return out;
}

std::shared_ptr<loss::PerceptualExtractor> Pipeline::extractor() const {
  loss::VggExtractor::Options o;
  o.width_divisor = config_.integer("loss.vgg_width_divisor");
  o.seed = mix_seed(config_.seed(), 0x766767);
  o.weights = config_.get("paths.vgg_weights");
  return std::make_shared<loss::VggExtractor>(o);
}

CalibrationOutput Pipeline::calibrate() {
  require_sim_backend();
  const calib::TestPatternSpec spec = config_.pattern();
  rig::SimulatedRig rig(config_.simulator());
  const Size display = rig.config().display;
  auto devices = rig.devices();
  devices.sprayer->off();
  devices.display->show(calib::generate_test_pattern(spec, display));
  const Image capture = devices.camera->trigger();
  const calib::CalibrationResult result = calib::calibrate_from_capture(capture, spec);

  nlohmann::ordered_json j;
  j["kind"] = "calibration";
  j["version"] = 1;
  j["display"] = {display.width, display.height};
  j["screen_to_image"] = result.screen_to_image.h.row_major();
  j["alignment"] = result.alignment.row_major();
  j["mean_reprojection_error_px"] = result.screen_to_image.mean_reprojection_error;
  j["inliers"] = std::count(result.screen_to_image.inliers.begin(), result.screen_to_image.inliers.end(), true);
  j["point_count"] = result.point_count;
  const fs::path file = calibration_file();
  write_text(file, j.dump(2) + "\n");
  write_resolved(file.parent_path().empty() ? fs::path(".") : file.parent_path());
  return {file, result};
}

fs::path Pipeline::capture(CapturePass pass) {
  require_sim_backend();
  const fs::path cal = calibration_file();
  require(fs::exists(cal), ErrorCode::kPrecondition, "no calibration at " + cal.string() + "; run calibrate first");
  nlohmann::ordered_json cj = nlohmann::ordered_json::parse(read_text(cal));
  const calib::Homography alignment = calib::Homography::from_row_major(cj.at("alignment").get<std::vector<double>>());

  const auto sources = load_sources();
  const rig::RigConfig rig_cfg = config_.rig();
  rig::SimulatedRig rig(config_.simulator());
  auto devices = rig.devices();
  const Size display = rig.config().display;

  // Keep the other pass from an earlier run when capturing only one.
  std::vector<rig::CaptureRecord> records;
  std::vector<std::pair<int, sim::DropletField>> fields;
  if (pass != CapturePass::kBoth && fs::exists(session_dir() / "session.jsonl")) {
    rig::Session old = rig::read_session(session_dir());
    const auto keep = pass == CapturePass::kClear ? rig::PassKind::kRainy : rig::PassKind::kClear;
    for (auto& r : old.records)
      if (r.pass_kind == keep) records.push_back(std::move(r));
    if (keep == rig::PassKind::kRainy) fields = std::move(old.fields);
  }

  const std::string session = config_.get("paths.session");
  const fs::path captures_root = out_dir() / config_.get("paths.captures");
  auto append = [&](std::vector<rig::CaptureRecord> got) {
    for (auto& r : got) records.push_back(std::move(r));
  };
  try {
    if (pass != CapturePass::kRainy) append(rig::run_clear_pass(sources, devices, rig_cfg));
    if (pass != CapturePass::kClear) {
      const double duration = (sources.size() - 1) / rig_cfg.capture_rate_hz + rig_cfg.settle_s + 1.0;
      const auto schedule = rig::randomized_pressure_regimen(mix_seed(config_.seed(), 0x707265), duration,
                                                             config_.real("simulator.pressure_min"),
                                                             config_.real("simulator.pressure_max"));
      append(rig::run_rainy_pass(sources, devices, rig_cfg, schedule));
    }
  } catch (const rig::CaptureAborted& e) {
    append(e.partial());
    for (const auto& f : rig.fields()) fields.push_back(f);
    const fs::path dir = rig::write_session(captures_root, session, alignment, display, records, &fields, false, e.what());
    write_resolved(dir);
    fail(ErrorCode::kDevice, std::string("capture aborted: ") + e.what() + "; partial session flagged in " + dir.string());
  }
  for (const auto& f : rig.fields()) fields.push_back(f);
  const fs::path dir = rig::write_session(captures_root, session, alignment, display, records, &fields);
  write_resolved(dir);
  return dir;
}

fs::path Pipeline::build_dataset() {
  const rig::Session session = rig::read_session(session_dir());
  require(session.complete, ErrorCode::kPrecondition,
          "session " + session_dir().string() + " is incomplete (" + session.error + "); recapture first");
  std::vector<rig::CaptureRecord> clear, rainy;
  for (const auto& r : session.records) (r.pass_kind == rig::PassKind::kClear ? clear : rainy).push_back(r);

  dataset::BuildOptions opt;
  opt.out_dir = dataset_dir();
  opt.aligned_size = session.aligned_size;
  opt.residual_threshold_px = config_.real("dataset.residual_threshold_px");
  opt.copy_labels = config_.flag("dataset.copy_labels");
  opt.seed = config_.seed();
  nlohmann::ordered_json rc;
  for (const auto& k : config_.keys())
    if (k.rfind("rig.", 0) == 0) rc[k.substr(4)] = config_.get(k);
  opt.rig_config = rc;

  const dataset::DirectorySource source(source_dir());
  dataset::DatasetManifest manifest = dataset::build_pairs(clear, rainy, source, session.alignment, opt);

  const std::string mode = config_.get("dataset.split_mode");
  require(mode == "auto" || mode == "official" || mode == "random", ErrorCode::kConfig,
          "dataset.split_mode must be auto, official or random");
  const fs::path official = source_dir() / "splits.json";
  if (mode == "official" || (mode == "auto" && fs::exists(official))) {
    const auto j = nlohmann::json::parse(read_text(official));
    for (auto& r : manifest.records) {
      require(j.contains(r.source_id), ErrorCode::kConfig, "splits.json has no entry for " + r.source_id);
      r.split = dataset::split_from_string(j.at(r.source_id).get<std::string>());
    }
    manifest.metadata["split_mode"] = "official";
  } else {
    dataset::split(manifest, mix_seed(config_.seed(), 0x73706c),
                   {config_.real("dataset.train"), config_.real("dataset.val"), config_.real("dataset.test")});
    manifest.metadata["split_mode"] = "random";
  }
  const int ft = config_.integer("dataset.finetune_count");
  require(ft >= 0, ErrorCode::kConfig, "dataset.finetune_count must be >= 0");
  dataset::sample_finetune_subset(manifest, mix_seed(config_.seed(), 0x66746e), static_cast<std::size_t>(ft));

  dataset::write_manifest(manifest_file(), manifest);
  write_resolved(dataset_dir());
  return manifest_file();
}

train::RunResult Pipeline::train() {
  const auto manifest = dataset::read_manifest(manifest_file());
  const train::TrainConfig tc = config_.train();
  write_resolved(checkpoint_dir());
  return train::train(manifest, dataset_dir(), config_.generator(), config_.discriminator(), config_.loss_weights(), tc,
                      extractor(), checkpoint_dir());
}

train::RunResult Pipeline::finetune() {
  const auto manifest = dataset::read_manifest(manifest_file());
  const train::TrainConfig tc = config_.finetune();
  const fs::path out = checkpoint_dir() / "finetune";
  write_resolved(out);
  return train::finetune(checkpoint_file(), manifest, dataset_dir(), tc, extractor(), out);
}

std::vector<fs::path> Pipeline::derain(const fs::path& input, const fs::path& output) {
  model::Generator g = train::load_generator(checkpoint_file());
  std::vector<fs::path> inputs;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
    std::sort(inputs.begin(), inputs.end());
  } else {
    require(fs::is_regular_file(input), ErrorCode::kIo, "derain input not found: " + input.string());
    inputs.push_back(input);
  }
  fs::create_directories(output);
  std::vector<fs::path> written;
  for (const auto& in : inputs) {
    Image img = read_png(in);
    if (img.channels() == 1) {
      Image rgb(img.width(), img.height(), 3);
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
          for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = img.at(x, y, 0);
      img = std::move(rgb);
    }
    const fs::path out = output / in.filename();
    write_png(out, model::derain(g, img));
    written.push_back(out);
  }
  write_resolved(output);
  return written;
}

eval::MetricsReport Pipeline::evaluate(bool segmentation) {
  const auto manifest = dataset::read_manifest(manifest_file());
  std::optional<dataset::Split> split;
  const std::string& s = config_.get("eval.split");
  if (s != "all") split = dataset::split_from_string(s);

  if (segmentation) {
    const std::string& task = config_.get("eval.label_task");
    bool any = false;
    for (const auto& r : manifest.records)
      if ((!split || r.split == *split) && r.label_paths.count(task)) any = true;
    require(any, ErrorCode::kInvalidArgument,
            "--segmentation needs '" + task + "' labels, but the evaluated records have none");
    require(fs::exists(source_dir() / "palette.json"), ErrorCode::kInvalidArgument,
            "--segmentation needs a class palette at " + (source_dir() / "palette.json").string());
  }

  std::optional<model::Generator> g;
  eval::Derainer derainer;
  if (fs::exists(checkpoint_file())) {
    g = train::load_generator(checkpoint_file());
    derainer = [&g](const Image& img) { return model::derain(*g, img); };
  }
  const eval::Derainer* dp = g ? &derainer : nullptr;

  eval::ReconstructionOptions ro;
  ro.dataset = config_.get("eval.dataset");
  ro.model = config_.get("eval.model");
  ro.split = split;
  eval::MetricsReport report = eval::evaluate_reconstruction(manifest, dataset_dir(), dp, ro);
  if (segmentation) {
    eval::PaletteSegmenter seg(synth::read_palette(source_dir() / "palette.json"));
    eval::SegmentationOptions so;
    so.label_task = config_.get("eval.label_task");
    so.split = split;
    const int ignore = config_.integer("eval.ignore_label");
    if (ignore >= 0) so.ignore_label = ignore;
    eval::merge(report, eval::evaluate_segmentation(manifest, dataset_dir(), seg, dp, so));
  }

  const fs::path dir = report_dir();
  write_text(dir / "report.json", eval::to_json(report).dump(2) + "\n");
  write_text(dir / "tables.txt", eval::render_tables(report));
  write_text(dir / "per_record.csv", eval::per_record_csv(report));
  write_resolved(dir);
  return report;
}

std::string Pipeline::report() {
  const fs::path file = report_dir() / "report.json";
  require(fs::exists(file), ErrorCode::kPrecondition, "no report at " + file.string() + "; run evaluate first");
  const eval::MetricsReport r = eval::report_from_json(nlohmann::ordered_json::parse(read_text(file)));
  const std::string tables = eval::render_tables(r);
  write_text(report_dir() / "tables.txt", tables);
  return tables;
}

}  // namespace rainrig

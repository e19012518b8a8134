#include "rig.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "random.hpp"

namespace rainrig::rig {

void RigConfig::validate() const {
  require(pane_offset_mm < screen_distance_mm, ErrorCode::kConfig, "pane_offset_mm must be < screen_distance_mm");
  require(pane_tilt_deg >= 0.0 && pane_tilt_deg < 90.0, ErrorCode::kConfig, "pane_tilt_deg must be in [0, 90)");
  require(capture_rate_hz > 0.0, ErrorCode::kConfig, "capture_rate_hz must be > 0");
  require(settle_s >= 0.0 && settle_s < 1.0 / capture_rate_hz, ErrorCode::kConfig,
          "settle_s must be >= 0 and shorter than one capture period");
}

const char* to_string(PassKind pass) { return pass == PassKind::kClear ? "clear" : "rainy"; }

double PressureSchedule::pressure_at(double t) const {
  if (samples.empty()) return 0.0;
  auto it = std::upper_bound(samples.begin(), samples.end(), t,
                             [](double v, const PressureSample& s) { return v < s.time; });
  if (it == samples.begin()) return samples.front().pressure;
  return std::prev(it)->pressure;
}

PressureSchedule randomized_pressure_regimen(std::uint64_t seed, double duration, double min_pressure,
                                             double max_pressure) {
  require(duration > 0.0, ErrorCode::kConfig, "schedule duration must be > 0");
  require(0.0 <= min_pressure && min_pressure <= max_pressure && max_pressure <= 1.0, ErrorCode::kConfig,
          "pressure bounds must satisfy 0 <= min <= max <= 1");
  PressureSchedule schedule;
  schedule.seed = seed;
  schedule.duration = duration;
  Rng rng(seed);
  double t = 0.0;
  while (t < duration) {
    const double p = min_pressure == max_pressure ? min_pressure : rng.uniform(min_pressure, max_pressure);
    schedule.samples.push_back({t, p});
    t += rng.uniform(2.0, 10.0);
  }
  return schedule;
}

namespace {

void check_pass_preconditions(std::span<const SourceImage> sources, const DeviceSet& devices, const RigConfig& config) {
  config.validate();
  require(config.lights_off, ErrorCode::kPrecondition, "refusing to capture with room lights on");
  require(devices.display && devices.camera && devices.sprayer && devices.clock, ErrorCode::kInvalidArgument,
          "device set is incomplete");
  const Size res = devices.display->resolution();
  for (const auto& s : sources)
    require(s.image.width() <= res.width && s.image.height() <= res.height, ErrorCode::kPrecondition,
            "source " + s.id + " exceeds display resolution");
}

std::vector<CaptureRecord> run_pass(std::span<const SourceImage> sources, DeviceSet& devices, const RigConfig& config,
                                    PassKind pass, const PressureSchedule* schedule) {
  std::vector<CaptureRecord> records;
  records.reserve(sources.size());
  const double period = 1.0 / config.capture_rate_hz;
  const double start = devices.clock->now();
  try {
    if (pass == PassKind::kClear) devices.sprayer->off();
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const double slot = start + static_cast<double>(i) * period;
      devices.clock->sleep_until(slot);
      double pressure = 0.0;
      if (pass == PassKind::kRainy) {
        pressure = schedule->pressure_at(slot - start);
        devices.sprayer->set_pressure(pressure);
      }
      devices.display->show(sources[i].image);
      devices.clock->sleep_until(slot + config.settle_s);
      CaptureRecord rec;
      rec.raw_image = devices.camera->trigger();
      rec.timestamp = devices.clock->now();
      rec.source_id = sources[i].id;
      rec.pass_kind = pass;
      rec.pressure_at_capture = pressure;
      records.push_back(std::move(rec));
    }
    if (pass == PassKind::kRainy) devices.sprayer->off();
  } catch (const Error& e) {
    try {
      devices.sprayer->off();
    } catch (...) {
    }
    throw CaptureAborted(e.code(),
                         std::string(to_string(pass)) + " pass aborted after " + std::to_string(records.size()) +
                             " frames: " + e.what(),
                         std::move(records));
  }
  return records;
}

}  // namespace

std::vector<CaptureRecord> run_clear_pass(std::span<const SourceImage> sources, DeviceSet& devices,
                                          const RigConfig& config) {
  check_pass_preconditions(sources, devices, config);
  return run_pass(sources, devices, config, PassKind::kClear, nullptr);
}

std::vector<CaptureRecord> run_rainy_pass(std::span<const SourceImage> sources, DeviceSet& devices,
                                          const RigConfig& config, const PressureSchedule& schedule) {
  check_pass_preconditions(sources, devices, config);
  if (!sources.empty()) {
    const double needed = static_cast<double>(sources.size() - 1) / config.capture_rate_hz + config.settle_s;
    require(schedule.duration >= needed, ErrorCode::kPrecondition,
            "pressure schedule covers " + std::to_string(schedule.duration) + " s but the pass needs " +
                std::to_string(needed) + " s");
  }
  return run_pass(sources, devices, config, PassKind::kRainy, &schedule);
}

Image align_capture(const CaptureRecord& record, const calib::Homography& alignment, Size out_size) {
  return calib::warp_image(record.raw_image, alignment, out_size);
}

// --- Simulated backend ----------------------------------------------------------

class SimulatedRig::SimDisplay final : public Display {
 public:
  explicit SimDisplay(Size res) : res_(res) {}
  Size resolution() const override { return res_; }
  void show(const Image& image) override {
    require(image.width() <= res_.width && image.height() <= res_.height, ErrorCode::kDevice,
            "image exceeds display resolution");
    shown_ = image;
  }
  const Image& shown() const { return shown_; }

 private:
  Size res_;
  Image shown_;
};

class SimulatedRig::SimSprayer final : public Sprayer {
 public:
  void set_pressure(double p) override {
    require(p >= 0.0 && p <= 1.0, ErrorCode::kDevice, "pressure out of range");
    pressure_ = p;
  }
  void off() override { pressure_ = 0.0; }
  double pressure() const { return pressure_; }

 private:
  double pressure_ = 0.0;
};

class SimulatedRig::SimCamera final : public Camera {
 public:
  explicit SimCamera(SimulatedRig& rig) : rig_(rig) {}
  Image trigger() override {
    const int index = triggers_++;
    const auto& cfg = rig_.config_;
    if (cfg.fail_on_trigger && *cfg.fail_on_trigger == index) throw DeviceFault("simulated camera fault");
    const Image& shown = rig_.display_->shown();
    if (shown.empty()) throw DeviceFault("camera triggered before anything was displayed");
    const double pressure = rig_.sprayer_->pressure();
    const sim::CaptureNoise noise{cfg.noise_sigma, mix_seed(cfg.seed, 1000003u + static_cast<std::uint64_t>(index))};
    if (pressure <= 0.0) {
      return sim::simulate_capture(shown, sim::PassKind::kClear, nullptr, cfg.geometry, noise, cfg.display, cfg.optics);
    }
    const double density = cfg.pressure_proportional ? cfg.max_density * pressure : cfg.max_density;
    sim::DropletField field =
        sim::sample_droplet_field(mix_seed(cfg.seed, static_cast<std::uint64_t>(index)), density, cfg.display, cfg.sampling);
    Image out = sim::simulate_capture(shown, sim::PassKind::kRainy, &field, cfg.geometry, noise, cfg.display, cfg.optics);
    rig_.fields_.emplace_back(index, std::move(field));
    return out;
  }

 private:
  SimulatedRig& rig_;
  int triggers_ = 0;
};

SimulatedRig::SimulatedRig(SimulatorConfig config)
    : config_(std::move(config)),
      display_(std::make_unique<SimDisplay>(config_.display)),
      camera_(std::make_unique<SimCamera>(*this)),
      sprayer_(std::make_unique<SimSprayer>()) {
  config_.geometry.validate();
  require(config_.max_density >= 0.0 && config_.max_density <= 0.5, ErrorCode::kConfig,
          "simulator max_density must be in [0, 0.5]");
  require(config_.noise_sigma >= 0.0, ErrorCode::kConfig, "noise sigma must be >= 0");
}

SimulatedRig::~SimulatedRig() = default;

DeviceSet SimulatedRig::devices() { return {display_.get(), camera_.get(), sprayer_.get(), &clock_}; }

double SimulatedRig::current_pressure() const { return sprayer_->pressure(); }

// --- Session output ---------------------------------------------------------------

std::filesystem::path write_session(const std::filesystem::path& captures_root, const std::string& session,
                                    const calib::Homography& alignment, Size aligned_size,
                                    std::span<const CaptureRecord> records,
                                    const std::vector<std::pair<int, sim::DropletField>>* fields, bool complete,
                                    const std::string& error) {
  namespace fs = std::filesystem;
  const fs::path dir = captures_root / session;
  fs::create_directories(dir);
  std::ofstream log(dir / "session.jsonl", std::ios::binary);
  if (!log) fail(ErrorCode::kIo, "cannot write session log in " + dir.string());

  nlohmann::ordered_json header;
  header["kind"] = "session";
  header["session"] = session;
  header["homography"] = alignment.row_major();
  header["aligned_size"] = {aligned_size.width, aligned_size.height};
  header["complete"] = complete;
  if (!error.empty()) header["error"] = error;
  log << header.dump() << '\n';

  for (const auto& rec : records) {
    const std::string pass = to_string(rec.pass_kind);
    write_png(dir / pass / (rec.source_id + ".png"), rec.raw_image);
    write_png(dir / "aligned" / pass / (rec.source_id + ".png"), align_capture(rec, alignment, aligned_size));
    nlohmann::ordered_json line;
    line["kind"] = "frame";
    line["pass"] = pass;
    line["source_id"] = rec.source_id;
    line["timestamp"] = rec.timestamp;
    line["pressure"] = rec.pressure_at_capture;
    log << line.dump() << '\n';
  }
  if (fields) {
    for (const auto& [index, field] : *fields) {
      nlohmann::ordered_json line;
      line["kind"] = "droplet_field";
      line["trigger"] = index;
      line["field"] = sim::to_json(field);
      log << line.dump() << '\n';
    }
  }
  return dir;
}

Session read_session(const std::filesystem::path& session_dir) {
  std::ifstream in(session_dir / "session.jsonl", std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "no session log in " + session_dir.string());
  Session s;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kIo, "malformed session log line: " + std::string(e.what()));
    }
    const std::string kind = j.value("kind", "");
    if (kind == "session") {
      s.name = j.at("session").get<std::string>();
      const auto h = j.at("homography").get<std::vector<double>>();
      require(h.size() == 9, ErrorCode::kIo, "session homography must have 9 entries");
      s.alignment = calib::Homography::from_row_major(h);
      s.aligned_size = {j.at("aligned_size").at(0).get<int>(), j.at("aligned_size").at(1).get<int>()};
      s.complete = j.value("complete", true);
      s.error = j.value("error", "");
      header = true;
    } else if (kind == "frame") {
      CaptureRecord rec;
      rec.source_id = j.at("source_id").get<std::string>();
      const std::string pass = j.at("pass").get<std::string>();
      require(pass == "clear" || pass == "rainy", ErrorCode::kIo, "unknown pass '" + pass + "' in session log");
      rec.pass_kind = pass == "clear" ? PassKind::kClear : PassKind::kRainy;
      rec.timestamp = j.at("timestamp").get<double>();
      rec.pressure_at_capture = j.at("pressure").get<double>();
      rec.raw_image = read_png(session_dir / pass / (rec.source_id + ".png"));
      s.records.push_back(std::move(rec));
    } else if (kind == "droplet_field") {
      s.fields.emplace_back(j.at("trigger").get<int>(), sim::droplet_field_from_json(j.at("field")));
    }
  }
  require(header, ErrorCode::kIo, "session log has no header line");
  return s;
}

}  // namespace rainrig::rig

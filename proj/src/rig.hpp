#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "calibration.hpp"
#include "droplet_sim.hpp"
#include "error.hpp"
#include "image.hpp"

namespace rainrig::rig {

struct RigConfig {
  double screen_distance_mm = 320.0;
  double pane_offset_mm = 170.0;
  double pane_tilt_deg = 20.0;
  double capture_rate_hz = 1.0;
  double settle_s = 0.2;  // delay between show() and trigger()
  bool lights_off = true;

  void validate() const;
};

// Device interfaces. Implementations report faults by throwing DeviceFault.
class Display {
 public:
  virtual ~Display() = default;
  virtual Size resolution() const = 0;
  virtual void show(const Image& image) = 0;
};

class Camera {
 public:
  virtual ~Camera() = default;
  virtual Image trigger() = 0;
};

class Sprayer {
 public:
  virtual ~Sprayer() = default;
  virtual void set_pressure(double normalized) = 0;
  virtual void off() = 0;
};

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() = 0;
  virtual void sleep_until(double t) = 0;
};

struct DeviceSet {
  Display* display = nullptr;
  Camera* camera = nullptr;
  Sprayer* sprayer = nullptr;
  Clock* clock = nullptr;
};

class DeviceFault : public Error {
 public:
  explicit DeviceFault(const std::string& what) : Error(ErrorCode::kDevice, what) {}
};

struct SourceImage {
  std::string id;
  Image image;
};

enum class PassKind { kClear, kRainy };
const char* to_string(PassKind pass);

struct CaptureRecord {
  std::string source_id;
  PassKind pass_kind = PassKind::kClear;
  Image raw_image;
  double timestamp = 0.0;
  double pressure_at_capture = 0.0;
};

// Thrown when a pass stops early; carries the frames captured so far.
class CaptureAborted : public Error {
 public:
  CaptureAborted(ErrorCode code, const std::string& what, std::vector<CaptureRecord> partial)
      : Error(code, what), partial_(std::move(partial)) {}
  const std::vector<CaptureRecord>& partial() const { return partial_; }

 private:
  std::vector<CaptureRecord> partial_;
};

struct PressureSample {
  double time = 0.0;
  double pressure = 0.0;
};

// Piecewise-constant pump pressure over [0, duration).
struct PressureSchedule {
  std::vector<PressureSample> samples;
  std::uint64_t seed = 0;
  double duration = 0.0;

  double pressure_at(double t) const;
};

PressureSchedule randomized_pressure_regimen(std::uint64_t seed, double duration, double min_pressure,
                                             double max_pressure);

std::vector<CaptureRecord> run_clear_pass(std::span<const SourceImage> sources, DeviceSet& devices,
                                          const RigConfig& config);
std::vector<CaptureRecord> run_rainy_pass(std::span<const SourceImage> sources, DeviceSet& devices,
                                          const RigConfig& config, const PressureSchedule& schedule);

// Warps a raw capture into monitor coordinates; `alignment` maps camera pixels
// to monitor pixels.
Image align_capture(const CaptureRecord& record, const calib::Homography& alignment, Size out_size);

// --- Simulated backend ----------------------------------------------------------

class SimulatedClock final : public Clock {
 public:
  double now() override { return t_; }
  void sleep_until(double t) override { t_ = std::max(t_, t); }

 private:
  double t_ = 0.0;
};

struct SimulatorConfig {
  Size display{64, 64};
  sim::SceneGeometry geometry;
  double max_density = 0.2;  // droplet coverage at full pump pressure
  bool pressure_proportional = true;
  sim::SamplingParams sampling{3.0, 10.0, 0.2, 20000};
  sim::OpticsParams optics;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  // Fault injection: the camera throws on this trigger index (0-based).
  std::optional<int> fail_on_trigger;
};

// Display, camera and sprayer backed by the droplet simulator.
class SimulatedRig {
 public:
  explicit SimulatedRig(SimulatorConfig config);
  ~SimulatedRig();
  SimulatedRig(const SimulatedRig&) = delete;
  SimulatedRig& operator=(const SimulatedRig&) = delete;

  DeviceSet devices();
  const SimulatorConfig& config() const { return config_; }
  // Droplet field used for each rainy frame, keyed by trigger index.
  const std::vector<std::pair<int, sim::DropletField>>& fields() const { return fields_; }
  double current_pressure() const;

 private:
  class SimDisplay;
  class SimCamera;
  class SimSprayer;

  SimulatorConfig config_;
  std::unique_ptr<SimDisplay> display_;
  std::unique_ptr<SimCamera> camera_;
  std::unique_ptr<SimSprayer> sprayer_;
  SimulatedClock clock_;
  std::vector<std::pair<int, sim::DropletField>> fields_;
};

// --- Session output ---------------------------------------------------------------

// Writes captures/<session>/<pass>/<source_id>.png, the aligned frames under
// captures/<session>/aligned/<pass>/, and session.jsonl whose first line
// carries the session homography. A session cut short by a device fault is
// written with complete=false and the fault message. Returns the session
// directory.
std::filesystem::path write_session(const std::filesystem::path& captures_root, const std::string& session,
                                    const calib::Homography& alignment, Size aligned_size,
                                    std::span<const CaptureRecord> records,
                                    const std::vector<std::pair<int, sim::DropletField>>* fields = nullptr,
                                    bool complete = true, const std::string& error = {});

struct Session {
  std::string name;
  calib::Homography alignment;
  Size aligned_size;
  bool complete = true;
  std::string error;
  std::vector<CaptureRecord> records;  // raw images loaded
  std::vector<std::pair<int, sim::DropletField>> fields;
};

Session read_session(const std::filesystem::path& session_dir);

}  // namespace rainrig::rig

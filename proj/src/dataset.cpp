#include "dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "error.hpp"
#include "random.hpp"

namespace rainrig::dataset {

std::vector<SourceEntry> DirectorySource::entries() const {
  const fs::path images = root_ / "images";
  require(fs::is_directory(images), ErrorCode::kIo, "source directory has no images/: " + root_.string());
  std::vector<SourceEntry> out;
  for (const auto& e : fs::directory_iterator(images)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    SourceEntry s;
    s.source_id = e.path().stem().string();
    s.clear_image_path = e.path().string();
    const fs::path labels = root_ / "labels";
    if (fs::is_directory(labels))
      for (const auto& task : fs::directory_iterator(labels)) {
        const fs::path lp = task.path() / (s.source_id + ".png");
        if (task.is_directory() && fs::exists(lp)) s.label_paths[task.path().filename().string()] = lp.string();
      }
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.source_id < b.source_id; });
  return out;
}

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kNone: return "none";
  }
  return "none";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  if (s == "none") return Split::kNone;
  fail(ErrorCode::kConfig, "unknown split '" + std::string(s) + "'");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

// Source files are referenced relative to the manifest directory so a dataset
// directory can be moved together with its sources.
std::string relative_to(const std::string& p, const fs::path& base) {
  return fs::relative(fs::absolute(p), fs::absolute(base)).generic_string();
}

// --- Serialization ----------------------------------------------------------------

namespace {

nlohmann::ordered_json record_json(const PairRecord& r) {
  nlohmann::ordered_json j;
  j["kind"] = "pair";
  j["source_id"] = r.source_id;
  j["rainy_path"] = r.rainy_path;
  j["clear_path"] = r.clear_path;
  j["original_clear_path"] = r.original_clear_path;
  j["label_paths"] = nlohmann::ordered_json::object();
  for (const auto& [task, path] : r.label_paths) j["label_paths"][task] = path;
  j["homography"] = r.homography;
  j["alignment_residual"] = r.alignment_residual;
  j["alignment_ok"] = r.alignment_ok;
  j["split"] = to_string(r.split);
  j["finetune_sample"] = r.finetune_sample;
  return j;
}

PairRecord record_from_json(const nlohmann::ordered_json& j) {
  PairRecord r;
  r.source_id = j.at("source_id").get<std::string>();
  r.rainy_path = j.at("rainy_path").get<std::string>();
  r.clear_path = j.at("clear_path").get<std::string>();
  r.original_clear_path = j.at("original_clear_path").get<std::string>();
  for (const auto& [task, path] : j.at("label_paths").items()) r.label_paths[task] = path.get<std::string>();
  const auto& h = j.at("homography");
  require(h.size() == 9, ErrorCode::kConfig, "homography must have 9 entries");
  for (std::size_t i = 0; i < 9; ++i) r.homography[i] = h.at(i).get<double>();
  r.alignment_residual = j.at("alignment_residual").get<double>();
  require(r.alignment_residual >= 0.0, ErrorCode::kConfig, "alignment_residual must be >= 0");
  r.alignment_ok = j.at("alignment_ok").get<bool>();
  r.split = split_from_string(j.at("split").get<std::string>());
  r.finetune_sample = j.at("finetune_sample").get<bool>();
  require(!r.finetune_sample || r.split == Split::kTrain, ErrorCode::kConfig,
          "finetune_sample set on a non-train record: " + r.source_id);
  return r;
}

}  // namespace

std::string serialize(const DatasetManifest& manifest) {
  std::string out;
  nlohmann::ordered_json header;
  header["kind"] = "manifest";
  header["version"] = DatasetManifest::kVersion;
  header["seed"] = manifest.seed;
  header["record_count"] = manifest.records.size();
  header["rig_config"] = manifest.rig_config;
  header["metadata"] = manifest.metadata;
  out += header.dump();
  out += '\n';
  for (const auto& r : manifest.records) {
    out += record_json(r).dump();
    out += '\n';
  }
  return out;
}

DatasetManifest parse_manifest(std::string_view text) {
  DatasetManifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  bool have_header = false;
  std::size_t expected = 0;
  std::set<std::string> ids;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::ordered_json::parse(line);
      const auto kind = j.at("kind").get<std::string>();
      if (!have_header) {
        require(kind == "manifest", ErrorCode::kConfig, "manifest must start with a header line");
        require(j.at("version").get<int>() == DatasetManifest::kVersion, ErrorCode::kConfig,
                "unsupported manifest version");
        m.seed = j.at("seed").get<std::uint64_t>();
        expected = j.at("record_count").get<std::size_t>();
        m.rig_config = j.at("rig_config");
        m.metadata = j.at("metadata");
        have_header = true;
        continue;
      }
      require(kind == "pair", ErrorCode::kConfig, "unexpected manifest line kind '" + kind + "'");
      auto rec = record_from_json(j);
      require(ids.insert(rec.source_id).second, ErrorCode::kConfig, "duplicate source_id " + rec.source_id);
      m.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed manifest: ") + e.what());
  }
  require(have_header, ErrorCode::kConfig, "manifest is empty");
  require(m.records.size() == expected, ErrorCode::kConfig, "manifest record count does not match header");
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write manifest " + path.string());
  out << serialize(manifest);
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

// --- Alignment check --------------------------------------------------------------

calib::Point2 phase_correlation_shift(const Image& a, const Image& b) {
  require(a.size() == b.size(), ErrorCode::kShape, "phase correlation needs equal image sizes");
  const Image ga = to_gray(a);
  const Image gb = to_gray(b);
  cv::Mat ma(ga.height(), ga.width(), CV_64FC1);
  cv::Mat mb(gb.height(), gb.width(), CV_64FC1);
  for (int y = 0; y < ga.height(); ++y)
    for (int x = 0; x < ga.width(); ++x) {
      ma.at<double>(y, x) = ga.at(x, y, 0);
      mb.at<double>(y, x) = gb.at(x, y, 0);
    }
  cv::Mat window;
  cv::createHanningWindow(window, ma.size(), CV_64F);
  const cv::Point2d s = cv::phaseCorrelate(ma, mb, window);
  return {s.x, s.y};
}

double validate_alignment(PairRecord& record, double threshold_px, const fs::path& base) {
  const Image photographed = read_png(resolve(base, record.clear_path));
  const Image original = read_png(resolve(base, record.original_clear_path));
  Image ref = original;
  if (ref.channels() != photographed.channels()) ref = to_gray(ref);
  const Image cmp = photographed.channels() == ref.channels() ? photographed : to_gray(photographed);
  require(ref.size() == cmp.size(), ErrorCode::kShape, "photographed and original clear sizes differ for " + record.source_id);
  const calib::Point2 s = phase_correlation_shift(ref, cmp);
  record.alignment_residual = std::hypot(s.x, s.y);
  record.alignment_ok = record.alignment_residual <= threshold_px;
  return record.alignment_residual;
}

// --- Building ---------------------------------------------------------------------

DatasetManifest build_pairs(std::span<const rig::CaptureRecord> clear, std::span<const rig::CaptureRecord> rainy,
                            const SourceAdapter& source, const calib::Homography& alignment,
                            const BuildOptions& options) {
  std::map<std::string, const rig::CaptureRecord*> by_clear;
  std::map<std::string, const rig::CaptureRecord*> by_rainy;
  for (const auto& r : clear) by_clear[r.source_id] = &r;
  for (const auto& r : rainy) by_rainy[r.source_id] = &r;
  std::vector<std::string> orphans;
  for (const auto& [id, _] : by_clear)
    if (!by_rainy.count(id)) orphans.push_back(id + " (no rainy capture)");
  for (const auto& [id, _] : by_rainy)
    if (!by_clear.count(id)) orphans.push_back(id + " (no clear capture)");
  if (!orphans.empty()) {
    std::string msg = "unpaired captures:";
    for (const auto& o : orphans) msg += " " + o;
    fail(ErrorCode::kPairing, msg);
  }

  std::map<std::string, SourceEntry> entries;
  for (auto& e : source.entries()) {
    const std::string id = e.source_id;
    require(entries.emplace(id, std::move(e)).second, ErrorCode::kPairing, "duplicate source id " + id);
  }

  DatasetManifest manifest;
  manifest.seed = options.seed;
  manifest.rig_config = options.rig_config;
  manifest.metadata["generator"] = "rainrig";
  manifest.metadata["aligned_size"] = {options.aligned_size.width, options.aligned_size.height};
  manifest.metadata["residual_threshold_px"] = options.residual_threshold_px;

  fs::create_directories(options.out_dir / "rainy");
  fs::create_directories(options.out_dir / "clear");
  for (const auto& [id, crec] : by_clear) {
    const auto it = entries.find(id);
    require(it != entries.end(), ErrorCode::kPairing, "source adapter has no entry for " + id);
    const SourceEntry& entry = it->second;

    PairRecord rec;
    rec.source_id = id;
    rec.rainy_path = "rainy/" + id + ".png";
    rec.clear_path = "clear/" + id + ".png";
    rec.original_clear_path = relative_to(entry.clear_image_path, options.out_dir);
    rec.homography = alignment.row_major();
    write_png(options.out_dir / rec.rainy_path, rig::align_capture(*by_rainy.at(id), alignment, options.aligned_size));
    write_png(options.out_dir / rec.clear_path, rig::align_capture(*crec, alignment, options.aligned_size));

    if (options.copy_labels) {
      for (const auto& [task, path] : entry.label_paths) {
        const fs::path dst = options.out_dir / "labels" / task / (id + fs::path(path).extension().string());
        fs::create_directories(dst.parent_path());
        fs::copy_file(path, dst, fs::copy_options::overwrite_existing);
        rec.label_paths[task] = fs::relative(dst, options.out_dir).generic_string();
      }
    } else {
      for (const auto& [task, path] : entry.label_paths) rec.label_paths[task] = relative_to(path, options.out_dir);
    }
    validate_alignment(rec, options.residual_threshold_px, options.out_dir);
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

// --- Splits -----------------------------------------------------------------------

SplitStatus split(DatasetManifest& manifest, std::uint64_t seed, SplitFractions f) {
  require(f.train >= 0.0 && f.val >= 0.0 && f.test >= 0.0, ErrorCode::kConfig, "split fractions must be >= 0");
  require(std::abs(f.train + f.val + f.test - 1.0) <= 1e-9, ErrorCode::kConfig, "split fractions must sum to 1");
  const std::size_t n = manifest.records.size();
  if (n == 0) return SplitStatus::kEmptyManifest;

  const std::array<double, 3> frac{f.train, f.val, f.test};
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = frac[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);

  const std::array<Split, 3> kinds{Split::kTrain, Split::kVal, Split::kTest};
  std::size_t pos = 0;
  for (int s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < sizes[s]; ++k, ++pos) {
      auto& rec = manifest.records[idx[pos]];
      rec.split = kinds[s];
      rec.finetune_sample = false;
    }
  return SplitStatus::kOk;
}

void sample_finetune_subset(DatasetManifest& manifest, std::uint64_t seed, std::size_t count) {
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    manifest.records[i].finetune_sample = false;
    if (manifest.records[i].split == Split::kTrain) train.push_back(i);
  }
  require(count <= train.size(), ErrorCode::kConfig,
          "finetune sample of " + std::to_string(count) + " exceeds train split of " + std::to_string(train.size()));
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` slots are a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(train.size() - i);
    std::swap(train[i], train[j]);
    manifest.records[train[i]].finetune_sample = true;
  }
}

std::size_t count_split(const DatasetManifest& manifest, Split split) {
  return static_cast<std::size_t>(std::count_if(manifest.records.begin(), manifest.records.end(),
                                                [&](const PairRecord& r) { return r.split == split; }));
}

std::size_t count_finetune(const DatasetManifest& manifest) {
  return static_cast<std::size_t>(std::count_if(manifest.records.begin(), manifest.records.end(),
                                                [](const PairRecord& r) { return r.finetune_sample; }));
}

}  // namespace rainrig::dataset

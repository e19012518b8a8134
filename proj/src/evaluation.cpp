#include "evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "error.hpp"

namespace rainrig::eval {

double psnr(const Image& a, const Image& b, double peak) {
  require(a.size() == b.size() && a.channels() == b.channels(), ErrorCode::kShape, "psnr: image shapes differ");
  require(peak > 0.0, ErrorCode::kInvalidArgument, "psnr: peak must be positive");
  const auto da = a.data();
  const auto db = b.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - db[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(da.size());
  if (mse == 0.0) return kPsnrCap;
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

// Valid-region separable Gaussian filter.
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, const SsimParams& p) {
  require(a.size() == b.size() && a.channels() == b.channels(), ErrorCode::kShape, "ssim: image shapes differ");
  require(a.width() >= p.window && a.height() >= p.window, ErrorCode::kShape, "ssim: image smaller than window");
  const Image ga = to_gray(a);
  const Image gb = to_gray(b);
  const int w = ga.width();
  const int h = ga.height();

  std::vector<double> kernel(p.window);
  double total = 0.0;
  const int half = p.window / 2;
  for (int i = 0; i < p.window; ++i) {
    const double d = i - half;
    kernel[i] = std::exp(-0.5 * d * d / (p.sigma * p.sigma));
    total += kernel[i];
  }
  for (double& v : kernel) v /= total;

  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = ga.data()[i];
    y[i] = gb.data()[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, w, h, kernel);
  const auto my = filter_valid(y, w, h, kernel);
  const auto mxx = filter_valid(xx, w, h, kernel);
  const auto myy = filter_valid(yy, w, h, kernel);
  const auto mxy = filter_valid(xy, w, h, kernel);

  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
  const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
  double sum = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double va = mxx[i] - mx[i] * mx[i];
    const double vb = myy[i] - my[i] * my[i];
    const double cov = mxy[i] - mx[i] * my[i];
    const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (va + vb + c2);
    sum += num / den;
  }
  return sum / static_cast<double>(mx.size());
}

ConfusionMatrix::ConfusionMatrix(int class_count, std::optional<int> ignore_label)
    : classes_(class_count), ignore_(ignore_label) {
  require(class_count > 0, ErrorCode::kInvalidArgument, "class_count must be positive");
  counts_.assign(static_cast<std::size_t>(class_count) * class_count, 0);
}

void ConfusionMatrix::add(const ClassMap& pred, const ClassMap& gt) {
  require(pred.width == gt.width && pred.height == gt.height, ErrorCode::kShape, "prediction and label sizes differ");
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i];
    if (ignore_ && g == *ignore_) continue;
    const int p = pred.labels[i];
    require(g >= 0 && g < classes_, ErrorCode::kInvalidArgument, "label value " + std::to_string(g) + " out of range");
    require(p >= 0 && p < classes_, ErrorCode::kInvalidArgument, "prediction value " + std::to_string(p) + " out of range");
    ++counts_[static_cast<std::size_t>(g) * classes_ + p];
  }
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::map<int, double> ConfusionMatrix::class_iou() const {
  std::map<int, double> out;
  for (int c = 0; c < classes_; ++c) {
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    for (int k = 0; k < classes_; ++k) {
      row += at(c, k);
      col += at(k, c);
    }
    if (row == 0) continue;
    const std::uint64_t inter = at(c, c);
    out[c] = static_cast<double>(inter) / static_cast<double>(row + col - inter);
  }
  return out;
}

std::optional<double> ConfusionMatrix::miou() const {
  const auto ious = class_iou();
  if (ious.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& [_, v] : ious) sum += v;
  return sum / static_cast<double>(ious.size());
}

std::optional<double> miou(const ClassMap& pred, const ClassMap& gt, int class_count, std::optional<int> ignore_label) {
  ConfusionMatrix cm(class_count, ignore_label);
  cm.add(pred, gt);
  return cm.miou();
}

ClassMap PaletteSegmenter::segment(const Image& image) {
  require(image.channels() == 3, ErrorCode::kInvalidArgument, "palette segmenter needs RGB input");
  ClassMap out{image.width(), image.height(), std::vector<std::int32_t>(image.pixel_count())};
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      int best = 0;
      double best_d = 1e30;
      for (std::size_t k = 0; k < palette_.size(); ++k) {
        double d = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double e = image.at(x, y, c) - palette_[k][c];
          d += e * e;
        }
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(k);
        }
      }
      out.at(x, y) = best;
    }
  return out;
}

const char* to_string(Condition c) {
  switch (c) {
    case Condition::kClearOriginal: return "clear_original";
    case Condition::kClearPhotographed: return "clear_photographed";
    case Condition::kRainy: return "rainy";
    case Condition::kDerained: return "derained";
  }
  return "unknown";
}

namespace {

Condition condition_from_string(const std::string& s) {
  for (auto c : {Condition::kClearOriginal, Condition::kClearPhotographed, Condition::kRainy, Condition::kDerained})
    if (s == to_string(c)) return c;
  fail(ErrorCode::kConfig, "unknown condition '" + s + "'");
}

std::vector<const dataset::PairRecord*> select(const dataset::DatasetManifest& manifest,
                                               std::optional<dataset::Split> split) {
  std::vector<const dataset::PairRecord*> out;
  for (const auto& r : manifest.records)
    if (!split || r.split == *split) out.push_back(&r);
  require(!out.empty(), ErrorCode::kPrecondition,
          split ? std::string("manifest has no records in the ") + dataset::to_string(*split) + " split"
                : std::string("manifest has no records"));
  return out;
}

// Matches the image's channel count to the reference.
Image conform(const Image& img, const Image& ref) {
  if (img.channels() == ref.channels()) return img;
  return ref.channels() == 1 ? to_gray(img) : img;
}

}  // namespace

MetricsReport evaluate_reconstruction(const dataset::DatasetManifest& manifest, const std::filesystem::path& base,
                                      const Derainer* derainer, const ReconstructionOptions& options) {
  if (options.require_derained && derainer == nullptr)
    fail(ErrorCode::kPrecondition, "derained metrics requested without a model");
  const auto records = select(manifest, options.split);

  MetricsReport report;
  const std::array<std::string, 2> refs{"clear_original", "clear_photographed"};
  std::map<std::string, QualityPair> rainy_sum;
  std::map<std::string, QualityPair> derained_sum;
  for (const auto* rec : records) {
    const Image rainy = read_png(dataset::resolve(base, rec->rainy_path));
    std::optional<Image> derained;
    if (derainer) derained = (*derainer)(rainy);
    RecordMetrics m;
    m.source_id = rec->source_id;
    for (const auto& ref_name : refs) {
      const std::string& path = ref_name == refs[0] ? rec->original_clear_path : rec->clear_path;
      const Image ref = read_png(dataset::resolve(base, path));
      const Image r = conform(rainy, ref);
      m.rainy[ref_name] = {psnr(r, ref), ssim(r, ref)};
      rainy_sum[ref_name].psnr += m.rainy[ref_name].psnr;
      rainy_sum[ref_name].ssim += m.rainy[ref_name].ssim;
      if (derained) {
        const Image d = conform(*derained, ref);
        m.derained[ref_name] = {psnr(d, ref), ssim(d, ref)};
        derained_sum[ref_name].psnr += m.derained[ref_name].psnr;
        derained_sum[ref_name].ssim += m.derained[ref_name].ssim;
      }
    }
    report.records.push_back(std::move(m));
  }
  const double n = static_cast<double>(records.size());
  for (const auto& ref_name : refs) {
    ReconstructionRow row;
    row.dataset = options.dataset;
    row.model = options.model;
    row.reference = ref_name;
    row.count = records.size();
    row.rainy = {rainy_sum[ref_name].psnr / n, rainy_sum[ref_name].ssim / n};
    if (derainer) row.derained = QualityPair{derained_sum[ref_name].psnr / n, derained_sum[ref_name].ssim / n};
    report.reconstruction.push_back(row);
  }
  return report;
}

MetricsReport evaluate_segmentation(const dataset::DatasetManifest& manifest, const std::filesystem::path& base,
                                    Segmenter& segmenter, const Derainer* derainer, const SegmentationOptions& options) {
  const auto records = select(manifest, options.split);
  for (const auto* rec : records)
    require(rec->label_paths.count(options.label_task) > 0, ErrorCode::kPrecondition,
            "record " + rec->source_id + " has no '" + options.label_task + "' label");

  std::vector<Condition> conditions{Condition::kClearOriginal, Condition::kClearPhotographed, Condition::kRainy};
  if (derainer) conditions.push_back(Condition::kDerained);
  std::map<Condition, ConfusionMatrix> cms;
  std::map<Condition, std::size_t> ok;
  std::map<Condition, std::size_t> failed;
  for (auto c : conditions) cms.emplace(c, ConfusionMatrix(segmenter.class_count(), options.ignore_label));

  MetricsReport report;
  for (const auto* rec : records) {
    const ClassMap gt = read_class_png(dataset::resolve(base, rec->label_paths.at(options.label_task)));
    const Image rainy = read_png(dataset::resolve(base, rec->rainy_path));
    for (auto c : conditions) {
      try {
        Image input;
        switch (c) {
          case Condition::kClearOriginal: input = read_png(dataset::resolve(base, rec->original_clear_path)); break;
          case Condition::kClearPhotographed: input = read_png(dataset::resolve(base, rec->clear_path)); break;
          case Condition::kRainy: input = rainy; break;
          case Condition::kDerained: input = (*derainer)(rainy); break;
        }
        const ClassMap pred = segmenter.segment(input);
        cms.at(c).add(pred, gt);
        ++ok[c];
      } catch (const std::exception& e) {
        ++failed[c];
        report.errors.push_back(rec->source_id + " [" + to_string(c) + "]: " + e.what());
      }
    }
  }
  for (auto c : conditions) report.segmentation.push_back({c, cms.at(c).miou(), ok[c], failed[c]});
  return report;
}

void merge(MetricsReport& base, const MetricsReport& extra) {
  base.segmentation.insert(base.segmentation.end(), extra.segmentation.begin(), extra.segmentation.end());
  base.errors.insert(base.errors.end(), extra.errors.begin(), extra.errors.end());
  if (base.reconstruction.empty()) {
    base.reconstruction = extra.reconstruction;
    base.records = extra.records;
  }
}

// --- Report output ------------------------------------------------------------------

namespace {

nlohmann::ordered_json quality_json(const QualityPair& q) {
  nlohmann::ordered_json j;
  j["psnr"] = q.psnr;
  j["ssim"] = q.ssim;
  return j;
}

QualityPair quality_from_json(const nlohmann::ordered_json& j) {
  return {j.at("psnr").get<double>(), j.at("ssim").get<double>()};
}

std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string rule(const std::vector<std::size_t>& widths) {
  std::string s = "+";
  for (auto w : widths) s += std::string(w + 2, '-') + "+";
  return s + "\n";
}

std::string row(const std::vector<std::string>& cells, const std::vector<std::size_t>& widths) {
  std::string s = "|";
  for (std::size_t i = 0; i < cells.size(); ++i) s += " " + pad(cells[i], widths[i]) + " |";
  return s + "\n";
}

std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) widths[i] = header[i].size();
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) widths[i] = std::max(widths[i], r[i].size());
  std::string out = rule(widths) + row(header, widths) + rule(widths);
  for (const auto& r : rows) out += row(r, widths) + rule(widths);
  return out;
}

std::string condition_title(Condition c) {
  switch (c) {
    case Condition::kClearOriginal: return "CLEAR-Original";
    case Condition::kClearPhotographed: return "CLEAR-Photographed";
    case Condition::kRainy: return "RAINY";
    case Condition::kDerained: return "DERAINED";
  }
  return "";
}

}  // namespace

nlohmann::ordered_json to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["kind"] = "rainrig_report";
  j["version"] = 1;
  auto rec = nlohmann::ordered_json::array();
  for (const auto& r : report.reconstruction) {
    nlohmann::ordered_json e;
    e["dataset"] = r.dataset;
    e["model"] = r.model;
    e["reference"] = r.reference;
    e["count"] = r.count;
    e["rainy"] = quality_json(r.rainy);
    e["derained"] = r.derained ? quality_json(*r.derained) : nlohmann::ordered_json(nullptr);
    rec.push_back(std::move(e));
  }
  j["reconstruction"] = std::move(rec);
  auto seg = nlohmann::ordered_json::array();
  for (const auto& s : report.segmentation) {
    nlohmann::ordered_json e;
    e["condition"] = to_string(s.condition);
    e["miou"] = s.miou ? nlohmann::ordered_json(*s.miou) : nlohmann::ordered_json(nullptr);
    e["count"] = s.count;
    e["failures"] = s.failures;
    seg.push_back(std::move(e));
  }
  j["segmentation"] = std::move(seg);
  auto records = nlohmann::ordered_json::array();
  for (const auto& r : report.records) {
    nlohmann::ordered_json e;
    e["source_id"] = r.source_id;
    e["rainy"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.rainy) e["rainy"][k] = quality_json(v);
    e["derained"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.derained) e["derained"][k] = quality_json(v);
    records.push_back(std::move(e));
  }
  j["records"] = std::move(records);
  j["errors"] = report.errors;
  return j;
}

MetricsReport report_from_json(const nlohmann::ordered_json& j) {
  try {
    require(j.at("kind").get<std::string>() == "rainrig_report", ErrorCode::kConfig, "not a rainrig report");
    MetricsReport r;
    for (const auto& e : j.at("reconstruction")) {
      ReconstructionRow row;
      row.dataset = e.at("dataset").get<std::string>();
      row.model = e.at("model").get<std::string>();
      row.reference = e.at("reference").get<std::string>();
      row.count = e.at("count").get<std::size_t>();
      row.rainy = quality_from_json(e.at("rainy"));
      if (!e.at("derained").is_null()) row.derained = quality_from_json(e.at("derained"));
      r.reconstruction.push_back(row);
    }
    for (const auto& e : j.at("segmentation")) {
      SegmentationRow row;
      row.condition = condition_from_string(e.at("condition").get<std::string>());
      if (!e.at("miou").is_null()) row.miou = e.at("miou").get<double>();
      row.count = e.at("count").get<std::size_t>();
      row.failures = e.at("failures").get<std::size_t>();
      r.segmentation.push_back(row);
    }
    if (j.contains("records"))
      for (const auto& e : j.at("records")) {
        RecordMetrics m;
        m.source_id = e.at("source_id").get<std::string>();
        for (const auto& [k, v] : e.at("rainy").items()) m.rainy[k] = quality_from_json(v);
        for (const auto& [k, v] : e.at("derained").items()) m.derained[k] = quality_from_json(v);
        r.records.push_back(std::move(m));
      }
    if (j.contains("errors")) r.errors = j.at("errors").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("malformed report: ") + e.what());
  }
}

std::string render_tables(const MetricsReport& report) {
  std::string out;
  if (!report.reconstruction.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : report.reconstruction) {
      rows.push_back({r.dataset, r.model + " (" + r.reference + ")", fmt(r.rainy.psnr, 2), fmt(r.rainy.ssim, 4),
                      r.derained ? fmt(r.derained->psnr, 2) : "-", r.derained ? fmt(r.derained->ssim, 4) : "-"});
    }
    out += "Reconstruction results\n";
    out += table({"Dataset", "Model trained on", "RAINY PSNR", "RAINY SSIM", "DERAINED PSNR", "DERAINED SSIM"}, rows);
  }
  if (!report.segmentation.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& s : report.segmentation)
      rows.push_back({condition_title(s.condition), s.miou ? fmt(*s.miou, 4) : "undefined"});
    if (!out.empty()) out += "\n";
    out += "Semantic segmentation results\n";
    out += table({"Images vs. Segm. Model", "mIoU"}, rows);
  }
  return out;
}

std::string per_record_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "source_id,reference,rainy_psnr,rainy_ssim,derained_psnr,derained_ssim\n";
  for (const auto& r : report.records)
    for (const auto& [ref, q] : r.rainy) {
      out << r.source_id << ',' << ref << ',' << fmt(q.psnr, 6) << ',' << fmt(q.ssim, 6) << ',';
      const auto it = r.derained.find(ref);
      if (it != r.derained.end())
        out << fmt(it->second.psnr, 6) << ',' << fmt(it->second.ssim, 6);
      else
        out << ',';
      out << '\n';
    }
  return out.str();
}

}  // namespace rainrig::eval

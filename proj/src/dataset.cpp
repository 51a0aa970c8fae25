#include "gfd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gfd/error.hpp"
#include "gfd/io.hpp"
#include "gfd/random.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gfd {

namespace {

struct ClassInfo {
  std::string_view key;
  std::string_view display;
};

constexpr std::array<ClassInfo, kNumClasses> kClassInfo = {{
    {"enlarged_cardiac_silhouette", "Enlarged Cardiac Silhouette"},
    {"atelectasis", "Atelectasis"},
    {"pleural_abnormality", "Pleural abnormality"},
    {"consolidation", "Consolidation"},
    {"pulmonary_edema", "Pulmonary edema"},
}};

}  // namespace

ClassLabel class_from_index(std::size_t i) {
  if (i >= kNumClasses) throw ValidationError("class id out of range: " + std::to_string(i));
  return static_cast<ClassLabel>(i);
}

std::string_view class_key(ClassLabel c) { return kClassInfo.at(class_index(c)).key; }
std::string_view class_display_name(ClassLabel c) { return kClassInfo.at(class_index(c)).display; }

ClassLabel parse_class(std::string_view key) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kClassInfo[i].key == key) return static_cast<ClassLabel>(i);
  }
  throw ValidationError("unknown class label '" + std::string(key) + "'");
}

std::size_t TargetBox::mask_area() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

TargetBox ellipse_to_target(const EllipseAnnotation& e, std::size_t img_w, std::size_t img_h) {
  if (!(e.rx > 0.0) || !(e.ry > 0.0)) {
    throw ValidationError("ellipse radii must be positive");
  }
  const double w = static_cast<double>(img_w), h = static_cast<double>(img_h);
  TargetBox t;
  t.label = e.label;
  t.box = {std::clamp(e.cx - e.rx, 0.0, w), std::clamp(e.cy - e.ry, 0.0, h),
           std::clamp(e.cx + e.rx, 0.0, w), std::clamp(e.cy + e.ry, 0.0, h)};
  if (!t.box.valid()) {
    throw ValidationError("ellipse at (" + std::to_string(e.cx) + "," + std::to_string(e.cy) +
                          ") lies entirely outside the " + std::to_string(img_w) + "x" +
                          std::to_string(img_h) + " image");
  }
  t.mask_width = img_w;
  t.mask_height = img_h;
  t.mask.assign(img_w * img_h, 0);
  const auto y_lo = static_cast<std::size_t>(std::max(0.0, std::floor(e.cy - e.ry - 1)));
  const auto y_hi = static_cast<std::size_t>(std::clamp(std::ceil(e.cy + e.ry + 1), 0.0, h));
  const auto x_lo = static_cast<std::size_t>(std::max(0.0, std::floor(e.cx - e.rx - 1)));
  const auto x_hi = static_cast<std::size_t>(std::clamp(std::ceil(e.cx + e.rx + 1), 0.0, w));
  for (std::size_t y = y_lo; y < y_hi; ++y) {
    const double dy = (static_cast<double>(y) + 0.5 - e.cy) / e.ry;
    for (std::size_t x = x_lo; x < x_hi; ++x) {
      const double dx = (static_cast<double>(x) + 0.5 - e.cx) / e.rx;
      if (dx * dx + dy * dy <= 1.0) t.mask[y * img_w + x] = 1;
    }
  }
  return t;
}

std::vector<TargetBox> reading_targets(const Reading& r) {
  std::vector<TargetBox> out;
  out.reserve(r.annotations.size());
  for (const auto& e : r.annotations) {
    out.push_back(ellipse_to_target(e, r.image.width, r.image.height));
  }
  return out;
}

std::vector<Fixation> reading_fixations(const Reading& r) {
  if (r.fixations) return *r.fixations;
  const auto kept = filter_gaze(r.gaze, r.image.width, r.image.height, 0.0);
  return detect_fixations(kept, scaled_dispersion_px(r.image.width), kDefaultMinDurationMs);
}

FixationMap reading_fixation_map(const Reading& r) {
  const auto fx = reading_fixations(r);
  return render_heatmap(fx, r.image.width, r.image.height, scaled_sigma_px(r.image.width),
                        HeatmapWeighting::kDuration);
}

namespace {

GrayImage from_pgm(const GrayImage8& img) {
  GrayImage out{img.width, img.height, std::vector<double>(img.pixels.size())};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out.pixels[i] = img.pixels[i] / 255.0;
  return out;
}

GrayImage8 to_pgm(const GrayImage& img) {
  GrayImage8 out{img.width, img.height, std::vector<std::uint8_t>(img.pixels.size())};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out.pixels[i] =
        static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(img.pixels[i], 0.0, 1.0)));
  }
  return out;
}

std::vector<EllipseAnnotation> parse_annotations(const fs::path& path, std::size_t w,
                                                 std::size_t h) {
  const std::string file = path.string();
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(file + ": malformed JSON (" + e.what() + ")");
  }
  if (!doc.is_array()) throw ValidationError(file + ": expected a JSON array");
  std::vector<EllipseAnnotation> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string where = file + "[" + std::to_string(i) + "]";
    const json& o = doc[i];
    try {
      EllipseAnnotation e;
      e.cx = o.at("cx").get<double>();
      e.cy = o.at("cy").get<double>();
      e.rx = o.at("rx").get<double>();
      e.ry = o.at("ry").get<double>();
      e.label = parse_class(o.at("label").get<std::string>());
      if (!(e.rx > 0.0) || !(e.ry > 0.0)) throw ValidationError("radii must be positive");
      ellipse_to_target(e, w, h);
      out.push_back(e);
    } catch (const ValidationError& err) {
      throw ValidationError(where + ": " + err.what());
    } catch (const json::exception& err) {
      throw ValidationError(where + ": " + err.what());
    }
  }
  return out;
}

std::string encode_annotations(std::span<const EllipseAnnotation> anns) {
  json arr = json::array();
  for (const auto& e : anns) {
    arr.push_back({{"cx", e.cx},
                   {"cy", e.cy},
                   {"rx", e.rx},
                   {"ry", e.ry},
                   {"label", std::string(class_key(e.label))}});
  }
  return arr.dump(2) + "\n";
}

}  // namespace

Reading load_reading(const fs::path& dir) {
  Reading r;
  r.id = dir.filename().string();
  const fs::path image_path = dir / "image.pgm";
  const fs::path ann_path = dir / "annotations.json";
  const fs::path gaze_path = dir / "gaze.csv";
  const fs::path fix_path = dir / "fixations.csv";
  for (const auto& p : {image_path, ann_path}) {
    if (!fs::exists(p)) throw ValidationError("missing file " + p.string());
  }
  if (!fs::exists(gaze_path) && !fs::exists(fix_path)) {
    throw ValidationError("missing file " + gaze_path.string() + " (or fixations.csv)");
  }
  r.image = from_pgm(read_pgm(image_path));
  r.annotations = parse_annotations(ann_path, r.image.width, r.image.height);
  if (fs::exists(fix_path)) {
    r.fixations = read_fixations_csv(fix_path);
  }
  if (fs::exists(gaze_path)) {
    r.gaze = read_gaze_csv(gaze_path);
  }
  return r;
}

void save_reading(const fs::path& dir, const Reading& r) {
  fs::create_directories(dir);
  write_pgm(dir / "image.pgm", to_pgm(r.image));
  write_file_atomic(dir / "annotations.json", encode_annotations(r.annotations));
  write_gaze_csv(dir / "gaze.csv", r.gaze);
  if (r.fixations) write_fixations_csv(dir / "fixations.csv", *r.fixations);
}

namespace {

struct LesionPrior {
  double intensity;
  double rx_lo, rx_hi;
  double ry_lo, ry_hi;
};

// Radii are for a 64-px image.
constexpr std::array<LesionPrior, kNumClasses> kPriors = {{
    {0.90, 9.0, 12.0, 8.0, 11.0},   // enlarged cardiac silhouette: large, bright
    {0.55, 3.5, 5.5, 3.5, 5.5},     // atelectasis: small, dim
    {0.70, 2.5, 3.5, 7.0, 10.0},    // pleural abnormality: tall, narrow
    {0.45, 5.5, 7.5, 5.5, 7.5},     // consolidation: medium, faint
    {0.80, 9.0, 12.0, 3.5, 5.0},    // pulmonary edema: wide, flat
}};

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

void append_dwell(std::vector<GazeSample>& out, double& t, double cx, double cy, double dwell_ms,
                  double noise, double dt, Rng& rng) {
  const double end = t + dwell_ms;
  while (t <= end) {
    out.push_back({t, cx + rng.normal(0.0, noise), cy + rng.normal(0.0, noise),
                   3.0 + 0.2 * rng.normal(), true});
    t += dt;
  }
}

}  // namespace

std::vector<Reading> synth_generate(const SynthConfig& config, std::uint64_t seed) {
  if (config.img_size < 32) throw ValidationError("synth img_size must be >= 32");
  if (config.n_readings == 0) throw ValidationError("synth n_readings must be >= 1");
  if (config.classes.empty()) throw ValidationError("synth needs at least one class");
  if (config.lesions_min > config.lesions_max) {
    throw ValidationError("synth lesions range is empty");
  }
  const std::size_t size = config.img_size;
  const double scale = static_cast<double>(size) / 64.0;
  const double dim = static_cast<double>(size);
  const double dt = 20.0;
  std::vector<Reading> out;
  out.reserve(config.n_readings);
  for (std::size_t n = 0; n < config.n_readings; ++n) {
    Rng rng(mix_seed(seed, n));
    Reading r;
    char id[32];
    std::snprintf(id, sizeof(id), "r%05zu", n);
    r.id = id;
    r.image = {size, size, std::vector<double>(size * size)};
    for (double& p : r.image.pixels) p = 0.08 + 0.03 * rng.normal();

    const std::size_t n_lesions =
        config.lesions_min + rng.index(config.lesions_max - config.lesions_min + 1);
    for (std::size_t k = 0; k < n_lesions; ++k) {
      const ClassLabel label = config.classes[rng.index(config.classes.size())];
      const LesionPrior& pr = kPriors[class_index(label)];
      for (int attempt = 0; attempt < 100; ++attempt) {
        EllipseAnnotation e;
        e.label = label;
        e.rx = rng.uniform(pr.rx_lo, pr.rx_hi) * scale;
        e.ry = rng.uniform(pr.ry_lo, pr.ry_hi) * scale;
        e.cx = rng.uniform(e.rx + 1.0, dim - e.rx - 1.0);
        e.cy = rng.uniform(e.ry + 1.0, dim - e.ry - 1.0);
        const bool overlaps = std::any_of(r.annotations.begin(), r.annotations.end(),
                                          [&](const EllipseAnnotation& o) {
                                            return std::abs(o.cx - e.cx) < o.rx + e.rx + 2.0 &&
                                                   std::abs(o.cy - e.cy) < o.ry + e.ry + 2.0;
                                          });
        if (overlaps) continue;
        r.annotations.push_back(e);
        break;
      }
    }
    for (const auto& e : r.annotations) {
      const TargetBox t = ellipse_to_target(e, size, size);
      const double level = kPriors[class_index(e.label)].intensity;
      for (std::size_t i = 0; i < t.mask.size(); ++i) {
        if (t.mask[i]) r.image.pixels[i] = level + 0.03 * rng.normal();
      }
    }
    for (double& p : r.image.pixels) p = quantize8(p);

    // Dwell targets: every lesion (jittered) plus one distractor away from lesions.
    std::vector<std::pair<double, double>> targets;
    for (const auto& e : r.annotations) {
      targets.emplace_back(e.cx + 0.8 * scale * rng.normal(), e.cy + 0.8 * scale * rng.normal());
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double x = rng.uniform(4.0 * scale, dim - 4.0 * scale);
      const double y = rng.uniform(4.0 * scale, dim - 4.0 * scale);
      const bool near_lesion =
          std::any_of(r.annotations.begin(), r.annotations.end(), [&](const EllipseAnnotation& e) {
            return std::hypot(e.cx - x, e.cy - y) < std::max(e.rx, e.ry) + 6.0 * scale;
          });
      if (!near_lesion || attempt == 99) {
        targets.emplace_back(x, y);
        break;
      }
    }
    rng.shuffle(targets);

    const double noise = config.gaze_noise_px * scale;
    double t = 0.0;
    // Interface interaction before the reading: off-image samples and a dropout.
    for (int k = 0; k < 4; ++k) {
      r.gaze.push_back({t, -40.0 * scale + rng.normal(), dim * 0.5 + rng.normal(),
                        3.0 + 0.2 * rng.normal(), true});
      t += dt;
    }
    r.gaze.push_back({t, 0.0, 0.0, std::nullopt, false});
    t += dt;
    for (std::size_t k = 0; k < targets.size(); ++k) {
      if (k > 0) {
        // 40 ms saccade: one midpoint sample.
        r.gaze.push_back({t, 0.5 * (targets[k - 1].first + targets[k].first),
                          0.5 * (targets[k - 1].second + targets[k].second),
                          3.0 + 0.2 * rng.normal(), true});
        t += dt;
      }
      append_dwell(r.gaze, t, targets[k].first, targets[k].second, rng.uniform(300.0, 600.0),
                   noise, dt, rng);
      if (rng.uniform() < 0.3) {
        r.gaze.push_back({t, 0.0, 0.0, std::nullopt, false});
        t += dt;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<int> split_assignment(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
  if (n == 0) throw ValidationError("split needs at least one reading");
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ValidationError("split ratios must be non-negative and sum to 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x5917));
  rng.shuffle(order);
  const auto nd = static_cast<double>(n);
  const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(ratios.train * nd)));
  const auto n_val =
      std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(ratios.val * nd)));
  std::vector<int> tags(n, 2);
  for (std::size_t k = 0; k < n; ++k) {
    tags[order[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
  }
  if (ratios.test == 0.0) {
    // Rounding leftovers go to the preceding non-empty part.
    for (int& t : tags) {
      if (t == 2) t = ratios.val > 0.0 ? 1 : 0;
    }
  }
  return tags;
}

DatasetSplit split(std::span<const Reading> readings, const SplitRatios& ratios,
                   std::uint64_t seed) {
  const auto tags = split_assignment(readings.size(), ratios, seed);
  // Keep the shuffled order inside each part.
  std::vector<std::size_t> order(readings.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x5917));
  rng.shuffle(order);
  DatasetSplit out;
  for (std::size_t k : order) {
    auto& part = tags[k] == 0 ? out.train : (tags[k] == 1 ? out.val : out.test);
    part.push_back(readings[k]);
  }
  return out;
}

namespace {
constexpr std::array<std::string_view, 3> kSplitNames = {"train", "val", "test"};
}

void save_dataset(const fs::path& root, std::span<const Reading> readings,
                  std::span<const int> split_tags, std::size_t img_size) {
  if (split_tags.size() != readings.size()) {
    throw ValidationError("save_dataset: one split tag per reading required");
  }
  json entries = json::array();
  for (std::size_t k = 0; k < readings.size(); ++k) {
    save_reading(root / "readings" / readings[k].id, readings[k]);
    entries.push_back({{"id", readings[k].id},
                       {"split", std::string(kSplitNames.at(static_cast<std::size_t>(split_tags[k])))}});
  }
  json manifest = {{"format", "gfd-dataset-1"}, {"img_size", img_size}, {"readings", entries}};
  // Written last: its presence marks a complete dataset.
  write_file_atomic(root / "manifest.json", manifest.dump(2) + "\n");
}

Manifest load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) throw ValidationError("missing file " + path.string());
  Manifest m;
  try {
    const json doc = json::parse(read_file(path));
    m.img_size = doc.at("img_size").get<std::size_t>();
    for (const auto& e : doc.at("readings")) {
      ManifestEntry entry{e.at("id").get<std::string>(), e.at("split").get<std::string>()};
      if (std::find(kSplitNames.begin(), kSplitNames.end(), entry.split) == kSplitNames.end()) {
        throw ValidationError("unknown split tag '" + entry.split + "'");
      }
      m.readings.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return m;
}

std::vector<Reading> load_split(const fs::path& root, std::string_view split_name) {
  const Manifest m = load_manifest(root);
  std::vector<Reading> out;
  for (const auto& e : m.readings) {
    if (!split_name.empty() && e.split != split_name) continue;
    out.push_back(load_reading(root / "readings" / e.id));
    if (out.back().image.width != m.img_size || out.back().image.height != m.img_size) {
      throw ValidationError("reading " + e.id + " does not match manifest img_size");
    }
  }
  return out;
}

}  // namespace gfd

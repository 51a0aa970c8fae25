#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gfd/box.hpp"
#include "gfd/gaze.hpp"

namespace gfd {

// Stable ids 0..4 in this order.
enum class ClassLabel : int {
  kEnlargedCardiacSilhouette = 0,
  kAtelectasis = 1,
  kPleuralAbnormality = 2,
  kConsolidation = 3,
  kPulmonaryEdema = 4,
};
inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::kEnlargedCardiacSilhouette, ClassLabel::kAtelectasis,
    ClassLabel::kPleuralAbnormality, ClassLabel::kConsolidation, ClassLabel::kPulmonaryEdema};

inline std::size_t class_index(ClassLabel c) { return static_cast<std::size_t>(c); }
ClassLabel class_from_index(std::size_t i);
// snake_case key used in annotations.json and predictions files.
std::string_view class_key(ClassLabel c);
// Row label used in rendered reports.
std::string_view class_display_name(ClassLabel c);
ClassLabel parse_class(std::string_view key);

// Grayscale image, row-major, values in [0, 1].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

// Axis-aligned ellipse in pixel coordinates.
struct EllipseAnnotation {
  double cx = 0.0;
  double cy = 0.0;
  double rx = 0.0;
  double ry = 0.0;
  ClassLabel label = ClassLabel::kEnlargedCardiacSilhouette;

  friend bool operator==(const EllipseAnnotation&, const EllipseAnnotation&) = default;
};

struct TargetBox {
  Box box;
  ClassLabel label = ClassLabel::kEnlargedCardiacSilhouette;
  std::size_t mask_width = 0;
  std::size_t mask_height = 0;
  // 1 on pixels whose centers fall inside the ellipse, image resolution.
  std::vector<std::uint8_t> mask;

  std::size_t mask_area() const;
};

// One radiologist session over one image.
struct Reading {
  std::string id;
  GrayImage image;
  std::vector<GazeSample> gaze;
  // Precomputed fixations bypass fixation detection when present.
  std::optional<std::vector<Fixation>> fixations;
  std::vector<EllipseAnnotation> annotations;
};

TargetBox ellipse_to_target(const EllipseAnnotation& e, std::size_t img_w, std::size_t img_h);
std::vector<TargetBox> reading_targets(const Reading& r);

// Fixations for a reading: the precomputed list, else I-DT over filtered gaze
// with the width-scaled default thresholds.
std::vector<Fixation> reading_fixations(const Reading& r);
FixationMap reading_fixation_map(const Reading& r);

// Directory layout: image.pgm, annotations.json, gaze.csv and/or fixations.csv.
Reading load_reading(const std::filesystem::path& dir);
void save_reading(const std::filesystem::path& dir, const Reading& r);

struct SynthConfig {
  std::size_t n_readings = 200;
  std::size_t img_size = 64;
  std::vector<ClassLabel> classes = {ClassLabel::kEnlargedCardiacSilhouette,
                                     ClassLabel::kAtelectasis};
  std::size_t lesions_min = 1;
  std::size_t lesions_max = 2;
  // Gaze jitter at a 64-px image; scaled with img_size.
  double gaze_noise_px = 0.4;
};

// Dark background, bright per-class ellipses, a gaze stream dwelling on each
// lesion plus one distractor dwell. Deterministic in (config, seed).
std::vector<Reading> synth_generate(const SynthConfig& config, std::uint64_t seed);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<Reading> train;
  std::vector<Reading> val;
  std::vector<Reading> test;
};

// Deterministic shuffle by seed, then contiguous partition by ratio.
std::vector<int> split_assignment(std::size_t n, const SplitRatios& ratios, std::uint64_t seed);
DatasetSplit split(std::span<const Reading> readings, const SplitRatios& ratios,
                   std::uint64_t seed);

// On-disk dataset: <root>/readings/<id>/ plus <root>/manifest.json.
struct ManifestEntry {
  std::string id;
  std::string split;  // train | val | test
};
struct Manifest {
  std::size_t img_size = 0;
  std::vector<ManifestEntry> readings;
};

void save_dataset(const std::filesystem::path& root, std::span<const Reading> readings,
                  std::span<const int> split_tags, std::size_t img_size);
Manifest load_manifest(const std::filesystem::path& root);
// Readings whose split tag equals `split` (all readings when empty).
std::vector<Reading> load_split(const std::filesystem::path& root, std::string_view split);

}  // namespace gfd

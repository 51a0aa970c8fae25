#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace gfd {

struct GazeSample {
  double t_ms = 0.0;
  double x_px = 0.0;
  double y_px = 0.0;
  std::optional<double> pupil_mm;
  bool valid = true;

  friend bool operator==(const GazeSample&, const GazeSample&) = default;
};

struct Fixation {
  double cx_px = 0.0;
  double cy_px = 0.0;
  double start_ms = 0.0;
  double end_ms = 0.0;
  std::size_t n_samples = 0;

  double duration_ms() const { return end_ms - start_ms; }
  friend bool operator==(const Fixation&, const Fixation&) = default;
};

// Row-major heatmap aligned to the image grid; values in [0, 1].
struct FixationMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  double max_value() const;
};

enum class HeatmapWeighting { kDuration, kUniform };

// Reference parameters are quoted for a 512-px-wide image and scale linearly.
inline constexpr double kReferenceWidthPx = 512.0;
inline constexpr double kDefaultDispersionPx = 25.0;
inline constexpr double kDefaultSigmaPx = 25.0;
inline constexpr double kDefaultMinDurationMs = 100.0;

inline double scaled_dispersion_px(std::size_t width) {
  return kDefaultDispersionPx * static_cast<double>(width) / kReferenceWidthPx;
}
inline double scaled_sigma_px(std::size_t width) {
  return kDefaultSigmaPx * static_cast<double>(width) / kReferenceWidthPx;
}

// Drops invalid samples and samples outside [-margin, extent + margin]; keeps order.
std::vector<GazeSample> filter_gaze(std::span<const GazeSample> samples, std::size_t width,
                                    std::size_t height, double margin_px);

// Dispersion-threshold identification. A window starts once it spans at least
// min_duration_ms, is accepted while (max_x - min_x) + (max_y - min_y) stays
// within dispersion_px, and grows until the next sample would break that bound.
std::vector<Fixation> detect_fixations(std::span<const GazeSample> samples, double dispersion_px,
                                       double min_duration_ms);

// Gaussian sum over fixations evaluated at integer pixel coordinates, divided
// by its maximum. An empty fixation list gives an all-zero map.
FixationMap render_heatmap(std::span<const Fixation> fixations, std::size_t width,
                           std::size_t height, double sigma_px,
                           HeatmapWeighting weighting = HeatmapWeighting::kDuration);

// 1 where value >= threshold, else 0.
FixationMap binarize(const FixationMap& map, double threshold);

// CSV schemas: `t_ms,x_px,y_px,pupil_mm,valid` and `cx_px,cy_px,start_ms,end_ms`.
std::vector<GazeSample> read_gaze_csv(const std::filesystem::path& path);
void write_gaze_csv(const std::filesystem::path& path, std::span<const GazeSample> samples);
std::vector<Fixation> read_fixations_csv(const std::filesystem::path& path);
void write_fixations_csv(const std::filesystem::path& path, std::span<const Fixation> fixations);

// 8-bit P5 rendering (round(255 v)) and an exact f64 sidecar.
void write_heatmap_pgm(const std::filesystem::path& path, const FixationMap& map);
void write_heatmap_raw(const std::filesystem::path& path, const FixationMap& map);
FixationMap read_heatmap_raw(const std::filesystem::path& path);

}  // namespace gfd

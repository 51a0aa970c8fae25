#include "gfd/gaze.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "gfd/error.hpp"
#include "gfd/io.hpp"

namespace fs = std::filesystem;

namespace gfd {

double FixationMap::max_value() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

std::vector<GazeSample> filter_gaze(std::span<const GazeSample> samples, std::size_t width,
                                    std::size_t height, double margin_px) {
  std::vector<GazeSample> out;
  out.reserve(samples.size());
  const double x_hi = static_cast<double>(width) + margin_px;
  const double y_hi = static_cast<double>(height) + margin_px;
  for (const GazeSample& s : samples) {
    if (!s.valid) continue;
    if (!(s.x_px >= -margin_px && s.x_px <= x_hi && s.y_px >= -margin_px && s.y_px <= y_hi)) {
      continue;
    }
    out.push_back(s);
  }
  return out;
}

namespace {

struct Extent {
  double min_x, max_x, min_y, max_y;

  explicit Extent(const GazeSample& s) : min_x(s.x_px), max_x(s.x_px), min_y(s.y_px), max_y(s.y_px) {}
  void add(const GazeSample& s) {
    min_x = std::min(min_x, s.x_px);
    max_x = std::max(max_x, s.x_px);
    min_y = std::min(min_y, s.y_px);
    max_y = std::max(max_y, s.y_px);
  }
  double dispersion() const { return (max_x - min_x) + (max_y - min_y); }
};

Fixation make_fixation(std::span<const GazeSample> s, std::size_t first, std::size_t last) {
  Fixation f;
  double sx = 0.0, sy = 0.0;
  for (std::size_t k = first; k <= last; ++k) {
    sx += s[k].x_px;
    sy += s[k].y_px;
  }
  f.n_samples = last - first + 1;
  f.cx_px = sx / static_cast<double>(f.n_samples);
  f.cy_px = sy / static_cast<double>(f.n_samples);
  f.start_ms = s[first].t_ms;
  f.end_ms = s[last].t_ms;
  return f;
}

}  // namespace

std::vector<Fixation> detect_fixations(std::span<const GazeSample> samples, double dispersion_px,
                                       double min_duration_ms) {
  if (!(dispersion_px > 0.0) || !(min_duration_ms > 0.0)) {
    throw ValidationError("detect_fixations needs dispersion_px > 0 and min_duration_ms > 0");
  }
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].t_ms < samples[i - 1].t_ms) {
      throw ValidationError("detect_fixations: samples not time-sorted at index " +
                            std::to_string(i));
    }
  }
  std::vector<Fixation> out;
  const std::size_t n = samples.size();
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n) {
    // Smallest window starting at i that covers the minimum duration.
    j = std::max(j, i);
    while (j < n && samples[j].t_ms - samples[i].t_ms < min_duration_ms) ++j;
    if (j >= n) break;
    Extent ext(samples[i]);
    for (std::size_t k = i + 1; k <= j; ++k) ext.add(samples[k]);
    if (ext.dispersion() > dispersion_px) {
      ++i;
      continue;
    }
    while (j + 1 < n) {
      Extent grown = ext;
      grown.add(samples[j + 1]);
      if (grown.dispersion() > dispersion_px) break;
      ext = grown;
      ++j;
    }
    out.push_back(make_fixation(samples, i, j));
    i = j + 1;
  }
  return out;
}

FixationMap render_heatmap(std::span<const Fixation> fixations, std::size_t width,
                           std::size_t height, double sigma_px, HeatmapWeighting weighting) {
  if (width == 0 || height == 0) {
    throw ValidationError("render_heatmap needs positive dimensions");
  }
  if (!(sigma_px > 0.0)) throw ValidationError("render_heatmap needs sigma_px > 0");
  FixationMap map{width, height, std::vector<double>(width * height, 0.0)};
  if (fixations.empty()) return map;
  const double inv_two_var = 1.0 / (2.0 * sigma_px * sigma_px);
  std::vector<double> gx(width), gy(height);
  for (const Fixation& f : fixations) {
    const double w = weighting == HeatmapWeighting::kDuration ? f.duration_ms() : 1.0;
    // The kernel is separable: exp(-(dx^2 + dy^2)/2s^2) = exp(-dx^2/2s^2) exp(-dy^2/2s^2).
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) - f.cx_px;
      gx[x] = std::exp(-dx * dx * inv_two_var);
    }
    for (std::size_t y = 0; y < height; ++y) {
      const double dy = static_cast<double>(y) - f.cy_px;
      gy[y] = w * std::exp(-dy * dy * inv_two_var);
    }
    for (std::size_t y = 0; y < height; ++y) {
      double* row = &map.values[y * width];
      for (std::size_t x = 0; x < width; ++x) row[x] += gy[y] * gx[x];
    }
  }
  const double peak = map.max_value();
  if (peak > 0.0) {
    for (double& v : map.values) v /= peak;
    // Division by the max yields exactly 1 at the argmax; clamp guards rounding elsewhere.
    for (double& v : map.values) v = std::min(v, 1.0);
  }
  return map;
}

FixationMap binarize(const FixationMap& map, double threshold) {
  FixationMap out = map;
  for (double& v : out.values) v = v >= threshold ? 1.0 : 0.0;
  return out;
}

std::vector<GazeSample> read_gaze_csv(const fs::path& path) {
  const std::string text = read_file(path);
  const auto lines = split_lines(text);
  const std::string file = path.string();
  if (lines.empty() || lines[0] != "t_ms,x_px,y_px,pupil_mm,valid") {
    throw ValidationError(file + ":1: expected header t_ms,x_px,y_px,pupil_mm,valid");
  }
  std::vector<GazeSample> out;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const std::string where = file + ":" + std::to_string(ln + 1);
    const auto f = split_csv_line(lines[ln]);
    if (f.size() != 5) throw ValidationError(where + ": expected 5 fields");
    GazeSample s;
    s.t_ms = parse_double(f[0], where);
    s.x_px = parse_double(f[1], where);
    s.y_px = parse_double(f[2], where);
    if (!f[3].empty()) {
      s.pupil_mm = parse_double(f[3], where);
      if (*s.pupil_mm < 0.0) throw ValidationError(where + ": negative pupil_mm");
    }
    if (f[4] == "1") {
      s.valid = true;
    } else if (f[4] == "0") {
      s.valid = false;
    } else {
      throw ValidationError(where + ": valid must be 0 or 1");
    }
    if (s.t_ms < 0.0) throw ValidationError(where + ": negative t_ms");
    if (!out.empty() && !(s.t_ms > out.back().t_ms)) {
      throw ValidationError(where + ": t_ms not strictly increasing");
    }
    out.push_back(s);
  }
  return out;
}

void write_gaze_csv(const fs::path& path, std::span<const GazeSample> samples) {
  std::string out = "t_ms,x_px,y_px,pupil_mm,valid\n";
  for (const GazeSample& s : samples) {
    out += format_double(s.t_ms) + "," + format_double(s.x_px) + "," + format_double(s.y_px) +
           "," + (s.pupil_mm ? format_double(*s.pupil_mm) : std::string()) + "," +
           (s.valid ? "1" : "0") + "\n";
  }
  write_file_atomic(path, out);
}

std::vector<Fixation> read_fixations_csv(const fs::path& path) {
  const std::string text = read_file(path);
  const auto lines = split_lines(text);
  const std::string file = path.string();
  if (lines.empty() || lines[0] != "cx_px,cy_px,start_ms,end_ms") {
    throw ValidationError(file + ":1: expected header cx_px,cy_px,start_ms,end_ms");
  }
  std::vector<Fixation> out;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const std::string where = file + ":" + std::to_string(ln + 1);
    const auto f = split_csv_line(lines[ln]);
    if (f.size() != 4) throw ValidationError(where + ": expected 4 fields");
    Fixation fx;
    fx.cx_px = parse_double(f[0], where);
    fx.cy_px = parse_double(f[1], where);
    fx.start_ms = parse_double(f[2], where);
    fx.end_ms = parse_double(f[3], where);
    if (fx.end_ms < fx.start_ms) throw ValidationError(where + ": end_ms before start_ms");
    out.push_back(fx);
  }
  return out;
}

void write_fixations_csv(const fs::path& path, std::span<const Fixation> fixations) {
  std::string out = "cx_px,cy_px,start_ms,end_ms\n";
  for (const Fixation& f : fixations) {
    out += format_double(f.cx_px) + "," + format_double(f.cy_px) + "," +
           format_double(f.start_ms) + "," + format_double(f.end_ms) + "\n";
  }
  write_file_atomic(path, out);
}

void write_heatmap_pgm(const fs::path& path, const FixationMap& map) {
  GrayImage8 img{map.width, map.height, std::vector<std::uint8_t>(map.values.size())};
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * map.values[i]));
  }
  write_pgm(path, img);
}

namespace {
constexpr char kRawMagic[] = "GFDMAP64\n";
}

void write_heatmap_raw(const fs::path& path, const FixationMap& map) {
  std::string out = kRawMagic;
  out += std::to_string(map.width) + " " + std::to_string(map.height) + "\n";
  out.append(reinterpret_cast<const char*>(map.values.data()), map.values.size() * sizeof(double));
  write_file_atomic(path, out);
}

FixationMap read_heatmap_raw(const fs::path& path) {
  const std::string data = read_file(path);
  const std::size_t magic_len = std::strlen(kRawMagic);
  if (data.compare(0, magic_len, kRawMagic) != 0) {
    throw ValidationError(path.string() + ": not a raw heatmap file");
  }
  const std::size_t nl = data.find('\n', magic_len);
  if (nl == std::string::npos) throw ValidationError(path.string() + ": truncated header");
  const std::string dims = data.substr(magic_len, nl - magic_len);
  const std::size_t sp = dims.find(' ');
  FixationMap map;
  map.width = static_cast<std::size_t>(parse_int(dims.substr(0, sp), path.string()));
  map.height = static_cast<std::size_t>(parse_int(dims.substr(sp + 1), path.string()));
  const std::size_t n = map.width * map.height;
  if (data.size() != nl + 1 + n * sizeof(double)) {
    throw ValidationError(path.string() + ": raster size mismatch");
  }
  map.values.resize(n);
  std::memcpy(map.values.data(), data.data() + nl + 1, n * sizeof(double));
  return map;
}

}  // namespace gfd

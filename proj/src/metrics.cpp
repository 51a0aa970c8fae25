#include "gfd/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "gfd/error.hpp"
#include "json.hpp"

namespace gfd {

using nlohmann::ordered_json;

std::string_view overlap_name(OverlapKind k) { return k == OverlapKind::kIoBB ? "IoBB" : "IoU"; }

OverlapKind parse_overlap(std::string_view s) {
  std::string lower(s);
  for (char& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (lower == "iobb") return OverlapKind::kIoBB;
  if (lower == "iou") return OverlapKind::kIoU;
  throw ValidationError("unknown overlap metric '" + std::string(s) + "' (expected iobb|iou)");
}

double overlap(OverlapKind kind, const Box& pred, const Box& gt) {
  return kind == OverlapKind::kIoBB ? iobb(pred, gt) : iou(pred, gt);
}

std::vector<std::size_t> rank_detections(std::span<const ScoredBox> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const ScoredBox& x = dets[a];
    const ScoredBox& y = dets[b];
    if (x.score != y.score) return x.score > y.score;
    if (x.box != y.box) return x.box < y.box;
    return x.image < y.image;
  });
  return order;
}

MatchResult match_detections(std::span<const ScoredBox> dets, std::span<const GroundTruthBox> gts,
                             double thresh, OverlapKind kind) {
  MatchResult m;
  m.det_gt.assign(dets.size(), -1);
  m.gt_det.assign(gts.size(), -1);
  m.order = rank_detections(dets);
  for (std::size_t d : m.order) {
    int best = -1;
    double best_ov = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].image != dets[d].image || m.gt_det[g] >= 0) continue;
      const double ov = overlap(kind, dets[d].box, gts[g].box);
      if (ov >= thresh && ov > best_ov) {
        best_ov = ov;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      m.det_gt[d] = best;
      m.gt_det[best] = static_cast<int>(d);
      ++m.true_positives;
    }
  }
  return m;
}

std::vector<ScoredBox> top_per_image(std::span<const ScoredBox> dets, std::size_t max_per_image) {
  std::map<std::size_t, std::size_t> taken;
  std::vector<ScoredBox> out;
  for (std::size_t d : rank_detections(dets)) {
    if (taken[dets[d].image]++ < max_per_image) out.push_back(dets[d]);
  }
  return out;
}

std::optional<double> average_precision(std::span<const ScoredBox> dets,
                                        std::span<const GroundTruthBox> gts, double thresh,
                                        OverlapKind kind) {
  if (gts.empty()) return std::nullopt;
  const MatchResult m = match_detections(dets, gts, thresh, kind);
  const std::size_t n = m.order.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += m.is_tp(m.order[i]);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(gts.size());
  }
  // Precision envelope, then area over the recall steps.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return std::clamp(ap, 0.0, 1.0);
}

std::optional<double> average_recall(std::span<const ScoredBox> dets,
                                     std::span<const GroundTruthBox> gts, double thresh,
                                     OverlapKind kind, std::size_t max_dets) {
  if (gts.empty()) return std::nullopt;
  const auto kept = top_per_image(dets, max_dets);
  const MatchResult m = match_detections(kept, gts, thresh, kind);
  return static_cast<double>(m.true_positives) / static_cast<double>(gts.size());
}

ClassMetrics class_metrics(ClassLabel label, std::span<const ScoredBox> dets,
                           std::span<const GroundTruthBox> gts, double thresh, OverlapKind kind,
                           std::size_t max_dets) {
  ClassMetrics c;
  c.label = label;
  const auto kept = top_per_image(dets, max_dets);
  c.n_gt = gts.size();
  c.n_det = kept.size();
  c.ap = average_precision(kept, gts, thresh, kind);
  c.ar = average_recall(kept, gts, thresh, kind, max_dets);
  const MatchResult m = match_detections(kept, gts, thresh, kind);
  c.precision = kept.empty() ? 0.0 : static_cast<double>(m.true_positives) / kept.size();
  c.recall = gts.empty() ? 0.0 : static_cast<double>(m.true_positives) / gts.size();
  return c;
}

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string metric_header(std::string_view metric, OverlapKind kind, double thresh) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", thresh);
  return std::string(metric) + "@[" + std::string(overlap_name(kind)) + "=" + buf + "]";
}

MetricsReport build_report(std::span<const ClassMetrics> rows, const ReportMeta& meta,
                           std::optional<ReferenceAverages> reference) {
  MetricsReport r;
  r.meta = meta;
  for (ClassLabel label : kAllClasses) {
    ClassMetrics row;
    row.label = label;
    for (const auto& in : rows) {
      if (in.label == label) row = in;
    }
    r.rows.push_back(row);
  }
  double sum_ap = 0.0, sum_ar = 0.0;
  std::size_t n_ap = 0, n_ar = 0;
  for (const auto& row : r.rows) {
    if (row.n_gt == 0 && !row.ap) {
      r.warnings.push_back(std::string(class_display_name(row.label)) +
                           ": no ground truth, excluded from averages");
    }
    if (row.ap) {
      sum_ap += *row.ap;
      ++n_ap;
    }
    if (row.ar) {
      sum_ar += *row.ar;
      ++n_ar;
    }
  }
  if (n_ap > 0) r.average_ap = sum_ap / static_cast<double>(n_ap);
  if (n_ar > 0) r.average_ar = sum_ar / static_cast<double>(n_ar);
  if (reference) {
    auto check = [&](const char* what, std::optional<double> mean, double ref) {
      if (mean && format_metric(*mean) == format_metric(ref)) return;
      std::string msg = std::string("reference ") + what + " average " + format_metric(ref) +
                        " is not the arithmetic mean of the per-class values (" +
                        (mean ? format_metric(*mean) : std::string("undefined")) + ")";
      r.warnings.push_back(msg);
    };
    check("AP", r.average_ap, reference->ap);
    check("AR", r.average_ar, reference->ar);
  }
  return r;
}

namespace {

ordered_json opt_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json report_object(const MetricsReport& r) {
  const std::string ap_h = metric_header("AP", r.meta.kind, r.meta.thresh);
  const std::string ar_h = metric_header("AR", r.meta.kind, r.meta.thresh);
  ordered_json rows = ordered_json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"class", class_key(row.label)},
                    {"name", class_display_name(row.label)},
                    {ap_h, opt_json(row.ap)},
                    {ar_h, opt_json(row.ar)},
                    {"precision", row.precision},
                    {"recall", row.recall},
                    {"n_gt", row.n_gt},
                    {"n_det", row.n_det},
                    {"excluded_from_average", !row.ap.has_value()}});
  }
  return {{"model", r.meta.model_tag},
          {"metric", overlap_name(r.meta.kind)},
          {"threshold", r.meta.thresh},
          {"threshold_comparison", ">="},
          {"ap_method", "all-point interpolated precision-recall area"},
          {"ar_method", "recall at max detections per image"},
          {"max_detections", r.meta.max_dets},
          {"classes", rows},
          {"average", {{ap_h, opt_json(r.average_ap)}, {ar_h, opt_json(r.average_ar)}}},
          {"warnings", r.warnings}};
}

std::string cell(const std::optional<double>& v) { return v ? format_metric(*v) : "n/a"; }

std::string render_table(const std::vector<std::vector<std::string>>& table) {
  std::vector<std::size_t> width(table[0].size(), 0);
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    out += "|";
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += " " + row[c] + std::string(width[c] - row[c].size(), ' ') + " |";
    }
    out += "\n";
  };
  emit(table[0]);
  out += "|";
  for (std::size_t c = 0; c < width.size(); ++c) {
    out += (c == 0 ? ":" : "") + std::string(width[c] + (c == 0 ? 1 : 2), '-') + "|";
  }
  out += "\n";
  for (std::size_t r = 1; r < table.size(); ++r) emit(table[r]);
  return out;
}

std::string warnings_md(const std::vector<std::string>& warnings, const std::string& prefix) {
  std::string out;
  for (const auto& w : warnings) out += "- warning: " + prefix + w + "\n";
  return out;
}

}  // namespace

std::string report_json(const MetricsReport& r) { return report_object(r).dump(2) + "\n"; }

std::string report_markdown(const MetricsReport& r) {
  std::vector<std::vector<std::string>> table;
  table.push_back({"Abnormality", metric_header("AP", r.meta.kind, r.meta.thresh),
                   metric_header("AR", r.meta.kind, r.meta.thresh)});
  for (const auto& row : r.rows) {
    table.push_back({std::string(class_display_name(row.label)), cell(row.ap), cell(row.ar)});
  }
  table.push_back({"Average", cell(r.average_ap), cell(r.average_ar)});
  std::string out = "## " + r.meta.model_tag + "\n\n" + render_table(table);
  if (!r.warnings.empty()) out += "\n" + warnings_md(r.warnings, "");
  return out;
}

std::string comparison_json(const MetricsReport& a, const MetricsReport& b) {
  ordered_json j{{"columns", {a.meta.model_tag, b.meta.model_tag}},
                 {"reports", {report_object(a), report_object(b)}}};
  return j.dump(2) + "\n";
}

std::string comparison_markdown(const MetricsReport& a, const MetricsReport& b) {
  if (a.meta.kind != b.meta.kind || a.meta.thresh != b.meta.thresh) {
    throw ValidationError("comparison needs both reports at the same metric and threshold");
  }
  const std::string ap_h = metric_header("AP", a.meta.kind, a.meta.thresh);
  const std::string ar_h = metric_header("AR", a.meta.kind, a.meta.thresh);
  std::vector<std::vector<std::string>> table;
  table.push_back({"Abnormality", ap_h, ar_h, ap_h, ar_h});
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    table.push_back({std::string(class_display_name(a.rows[i].label)), cell(a.rows[i].ap),
                     cell(a.rows[i].ar), cell(b.rows[i].ap), cell(b.rows[i].ar)});
  }
  table.push_back({"Average", cell(a.average_ap), cell(a.average_ar), cell(b.average_ap),
                   cell(b.average_ar)});
  std::string out = "Columns 2-3: " + a.meta.model_tag + "; columns 4-5: " + b.meta.model_tag +
                    "\n\n" + render_table(table);
  const std::string w = warnings_md(a.warnings, a.meta.model_tag + ": ") +
                        warnings_md(b.warnings, b.meta.model_tag + ": ");
  if (!w.empty()) out += "\n" + w;
  return out;
}

}  // namespace gfd

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gfd/boxes.hpp"
#include "gfd/dataset.hpp"

namespace gfd {

enum class OverlapKind { kIoBB, kIoU };

std::string_view overlap_name(OverlapKind k);  // "IoBB" | "IoU"
OverlapKind parse_overlap(std::string_view s);  // case-insensitive iobb | iou
double overlap(OverlapKind kind, const Box& pred, const Box& gt);

// Boxes of one class, tagged with the image they belong to. Matching never
// crosses images.
struct ScoredBox {
  std::size_t image = 0;
  Box box;
  double score = 0.0;
};
struct GroundTruthBox {
  std::size_t image = 0;
  Box box;
};

struct MatchResult {
  // Indexed like the input detections.
  std::vector<int> det_gt;  // matched gt index or -1 (false positive)
  std::vector<int> gt_det;  // matching detection index or -1
  // Input indices in ranking order: score desc, then box, then image.
  std::vector<std::size_t> order;
  std::size_t true_positives = 0;

  bool is_tp(std::size_t det) const { return det_gt[det] >= 0; }
};

// Greedy in ranking order: each detection takes the highest-overlap unmatched
// gt of its image with overlap >= thresh (lower gt index on ties).
MatchResult match_detections(std::span<const ScoredBox> dets, std::span<const GroundTruthBox> gts,
                             double thresh, OverlapKind kind);

// Ranking order used by match_detections.
std::vector<std::size_t> rank_detections(std::span<const ScoredBox> dets);

// Highest-scoring max_per_image detections of every image.
std::vector<ScoredBox> top_per_image(std::span<const ScoredBox> dets, std::size_t max_per_image);

// All-point interpolated area under the precision-recall curve. Empty when
// there is no ground truth.
std::optional<double> average_precision(std::span<const ScoredBox> dets,
                                        std::span<const GroundTruthBox> gts, double thresh,
                                        OverlapKind kind);
// Fraction of gts matched by the top max_dets detections of each image.
std::optional<double> average_recall(std::span<const ScoredBox> dets,
                                     std::span<const GroundTruthBox> gts, double thresh,
                                     OverlapKind kind, std::size_t max_dets = 100);

struct ClassMetrics {
  ClassLabel label = ClassLabel::kEnlargedCardiacSilhouette;
  std::optional<double> ap;
  std::optional<double> ar;
  // Over the retained detections: TP / n_det and TP / n_gt.
  double precision = 0.0;
  double recall = 0.0;
  std::size_t n_gt = 0;
  std::size_t n_det = 0;
};

ClassMetrics class_metrics(ClassLabel label, std::span<const ScoredBox> dets,
                           std::span<const GroundTruthBox> gts, double thresh, OverlapKind kind,
                           std::size_t max_dets = 100);

struct ReportMeta {
  std::string model_tag;
  OverlapKind kind = OverlapKind::kIoBB;
  double thresh = 0.5;
  std::size_t max_dets = 100;
};

// Printed averages to compare against; a mismatch becomes a report warning.
struct ReferenceAverages {
  double ap = 0.0;
  double ar = 0.0;
};

struct MetricsReport {
  ReportMeta meta;
  std::vector<ClassMetrics> rows;  // one per class, fixed class order
  std::optional<double> average_ap;
  std::optional<double> average_ar;
  std::vector<std::string> warnings;
};

// `rows` may list classes in any order; missing classes become empty rows.
MetricsReport build_report(std::span<const ClassMetrics> rows, const ReportMeta& meta,
                           std::optional<ReferenceAverages> reference = std::nullopt);

// e.g. "AP@[IoBB=0.50]".
std::string metric_header(std::string_view metric, OverlapKind kind, double thresh);
std::string format_metric(double v);  // 6 decimals

std::string report_json(const MetricsReport& r);
std::string report_markdown(const MetricsReport& r);
std::string comparison_json(const MetricsReport& a, const MetricsReport& b);
std::string comparison_markdown(const MetricsReport& a, const MetricsReport& b);

inline constexpr std::string_view kImageOnlyTag = "Mask CNN (image only)";
inline constexpr std::string_view kMultimodalTag = "Mask_CNN (images + fixations)";

}  // namespace gfd

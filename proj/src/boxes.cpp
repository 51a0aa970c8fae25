#include "gfd/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gfd/error.hpp"

namespace gfd {

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return w > 0.0 && h > 0.0 ? w * h : 0.0;
}

double iou(const Box& a, const Box& b) {
  const double aa = a.area(), ab = b.area();
  if (aa <= 0.0 && ab <= 0.0) {
    throw ValidationError("iou of two zero-area boxes " + box_str(a) + " " + box_str(b));
  }
  const double inter = intersection_area(a, b);
  return inter / (aa + ab - inter);
}

double iobb(const Box& pred, const Box& gt) {
  const double ap = pred.area();
  if (ap <= 0.0) throw ValidationError("iobb of zero-area prediction " + box_str(pred));
  return std::min(1.0, intersection_area(pred, gt) / ap);
}

Box clip_box(const Box& b, double width, double height) {
  return {std::clamp(b.x0, 0.0, width), std::clamp(b.y0, 0.0, height),
          std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height)};
}

BoxDelta encode_box(const Box& reference, const Box& target) {
  const double aw = reference.width(), ah = reference.height();
  if (!(aw > 0.0 && ah > 0.0) || !target.valid()) {
    throw ValidationError("encode_box needs valid boxes, got " + box_str(reference) + " -> " +
                          box_str(target));
  }
  return {(target.cx() - reference.cx()) / aw, (target.cy() - reference.cy()) / ah,
          std::log(target.width() / aw), std::log(target.height() / ah)};
}

Box decode_box(const Box& reference, const BoxDelta& d) {
  const double aw = reference.width(), ah = reference.height();
  const double cx = reference.cx() + d[0] * aw;
  const double cy = reference.cy() + d[1] * ah;
  const double w = aw * std::exp(std::min(d[2], kMaxLogScale));
  const double h = ah * std::exp(std::min(d[3], kMaxLogScale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<Box> decode_boxes(std::span<const Box> anchors, std::span<const BoxDelta> deltas,
                              double width, double height) {
  if (anchors.size() != deltas.size()) {
    throw ValidationError("decode_boxes: " + std::to_string(anchors.size()) + " anchors vs " +
                          std::to_string(deltas.size()) + " deltas");
  }
  std::vector<Box> out(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    out[i] = clip_box(decode_box(anchors[i], deltas[i]), width, height);
  }
  return out;
}

std::vector<Box> generate_anchors(std::size_t feat_h, std::size_t feat_w, double stride,
                                  std::span<const double> scales, std::span<const double> ratios,
                                  double img_w, double img_h) {
  if (scales.empty() || ratios.empty()) {
    throw ValidationError("generate_anchors needs at least one scale and one ratio");
  }
  std::vector<Box> out;
  out.reserve(feat_h * feat_w * scales.size() * ratios.size());
  for (std::size_t i = 0; i < feat_h; ++i) {
    for (std::size_t j = 0; j < feat_w; ++j) {
      const double cx = (static_cast<double>(j) + 0.5) * stride;
      const double cy = (static_cast<double>(i) + 0.5) * stride;
      for (double s : scales) {
        for (double r : ratios) {
          const double w = s / std::sqrt(r), h = s * std::sqrt(r);
          out.push_back(
              clip_box({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}, img_w, img_h));
        }
      }
    }
  }
  return out;
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_thresh) {
  if (boxes.size() != scores.size()) throw ValidationError("nms: boxes/scores length mismatch");
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) {
    throw ValidationError("nms: iou_thresh must lie in (0, 1)");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  std::vector<bool> removed(boxes.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (removed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!removed[j] && iou(boxes[i], boxes[j]) > iou_thresh) removed[j] = true;
    }
  }
  return keep;
}

}  // namespace gfd

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "gfd/box.hpp"

namespace gfd {

double intersection_area(const Box& a, const Box& b);
// area(a ∩ b) / area(b ∪ a). Throws if both boxes have zero area.
double iou(const Box& a, const Box& b);
// area(pred ∩ gt) / area(pred). Throws if pred has zero area.
double iobb(const Box& pred, const Box& gt);

Box clip_box(const Box& b, double width, double height);

// (tx, ty, tw, th) relative to a reference box.
using BoxDelta = std::array<double, 4>;

// Upper bound on tw/th before exponentiation.
inline constexpr double kMaxLogScale = 2.772588722239781;  // ln 16

BoxDelta encode_box(const Box& reference, const Box& target);
// Unclipped decode; tw and th are clamped to kMaxLogScale.
Box decode_box(const Box& reference, const BoxDelta& delta);
std::vector<Box> decode_boxes(std::span<const Box> anchors, std::span<const BoxDelta> deltas,
                              double width, double height);

// One anchor per (cell, scale, ratio), in that nesting order. Ratio r gives
// w = s / sqrt(r), h = s * sqrt(r). Centers sit at (j + 0.5) * stride.
std::vector<Box> generate_anchors(std::size_t feat_h, std::size_t feat_w, double stride,
                                  std::span<const double> scales, std::span<const double> ratios,
                                  double img_w, double img_h);

// Greedy suppression in descending score; equal scores keep the lower index first.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_thresh);

}  // namespace gfd

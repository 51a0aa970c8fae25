#pragma once

#include <cstdint>
#include <vector>

#include "gfd/detector.hpp"

namespace gfd {

// Finite-difference checks of every differentiable op on randomized inputs
// drawn from `seed`; one entry per op.
std::vector<LayerGradError> op_gradient_suite(std::uint64_t seed, double eps = 1e-6);

// Small multimodal detector (32x32 input, one frozen proposal near the
// ground truth, randomized weights and biases) for end-to-end checks.
struct GradCheckCase {
  Detector model;
  GrayImage image;
  FixationMap fixations;
  std::vector<TargetBox> targets;
  std::vector<Box> proposals;
};
GradCheckCase make_grad_check_case(std::uint64_t seed);

// End-to-end check of the total loss against every parameter; one entry per layer.
std::vector<LayerGradError> detector_gradient_suite(std::uint64_t seed, double eps = 1e-6);

}  // namespace gfd

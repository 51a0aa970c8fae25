#pragma once

// Forward and backward kernels for the layer types the detector uses.
// Every forward kernel validates shapes and rejects non-finite outputs.

#include <cstddef>
#include <span>
#include <vector>

#include "gfd/box.hpp"
#include "gfd/tensor.hpp"

namespace gfd {

enum class CombineMode { kSum, kMul };

// Cross-correlation over (N,C,H,W) input with (C_out,C_in,kH,kW) weights.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad);
Tensor conv2d(const Tensor& input, const LayerParams& params, int stride, int pad);
// Accumulates into grad_input (skipped when empty), grad_weight and grad_bias.
void conv2d_backward(const Tensor& input, const Tensor& weight, int stride, int pad,
                     std::span<const double> grad_out, std::span<double> grad_input,
                     std::span<double> grad_weight, std::span<double> grad_bias);

Tensor relu(const Tensor& input);
void relu_backward(const Tensor& input, std::span<const double> grad_out,
                   std::span<double> grad_input);

struct PoolResult {
  Tensor output;
  // Flat input index of each output's maximum (first index wins ties).
  std::vector<std::size_t> argmax;
};
PoolResult maxpool2d_with_indices(const Tensor& input, int kernel, int stride);
Tensor maxpool2d(const Tensor& input, int kernel, int stride);
void maxpool2d_backward(const std::vector<std::size_t>& argmax, std::span<const double> grad_out,
                        std::span<double> grad_input);

// (N,D) x (M,D)^T + b -> (N,M)
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor linear(const Tensor& input, const LayerParams& params);
void linear_backward(const Tensor& input, const Tensor& weight, std::span<const double> grad_out,
                     std::span<double> grad_input, std::span<double> grad_weight,
                     std::span<double> grad_bias);

double sigmoid(double x);
Tensor sigmoid(const Tensor& input);

Tensor elementwise_combine(const Tensor& a, const Tensor& b, CombineMode mode);

// ROI-align over a (1,C,H,W) feature map. Boxes are in image coordinates and
// are mapped by `spatial_scale`; sample coordinates use the half-pixel offset
// (feature value (i,j) sits at continuous position (j+0.5, i+0.5)).
// Output is (R,C,out,out); each cell averages sampling x sampling bilinear samples.
Tensor roi_align(const Tensor& features, std::span<const Box> boxes, std::size_t out_size,
                 double spatial_scale, int sampling_ratio);
void roi_align_backward(const Shape& feature_shape, std::span<const Box> boxes,
                        std::size_t out_size, double spatial_scale, int sampling_ratio,
                        std::span<const double> grad_out, std::span<double> grad_features);

}  // namespace gfd

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gfd/box.hpp"
#include "gfd/ops.hpp"
#include "gfd/tensor.hpp"

namespace gfd {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Records the fixed sequence of layer applications of one forward pass and
// replays their backward kernels in reverse. Parameter leaves accumulate
// their gradient into the external Tensor's grad buffer on backward().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false); }
  Var leaf(Tensor value) { return push(std::move(value), true); }
  Var param(Tensor& external);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() target with respect to `v`.
  std::span<const double> grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  double scalar(Var v) const;

  Var conv2d(Var x, Var weight, Var bias, int stride, int pad);
  Var conv2d(Var x, LayerParams& layer, int stride, int pad);
  Var relu(Var x);
  Var maxpool2d(Var x, int kernel, int stride);
  Var linear(Var x, Var weight, Var bias);
  Var linear(Var x, LayerParams& layer);
  Var sigmoid(Var x);
  Var combine(Var a, Var b, CombineMode mode);
  Var roi_align(Var features, std::vector<Box> boxes, std::size_t out_size, double spatial_scale,
                int sampling_ratio);
  Var reshape(Var x, Shape shape);

  // Scalar reductions.
  Var weighted_sum(Var x, std::vector<double> weights);
  Var add(Var a, Var b);
  // sum_i bce(x[idx_i], target_i) / denom, computed from logits.
  Var bce_with_logits(Var x, std::vector<std::size_t> idx, std::vector<double> target,
                      double denom);
  // Mean softmax cross-entropy over the rows of (R,K) logits.
  Var softmax_cross_entropy(Var logits, std::vector<std::size_t> labels);
  // sum_i smoothL1(x[idx_i] - target_i) / denom.
  Var smooth_l1(Var x, std::vector<std::size_t> idx, std::vector<double> target, double denom);

  // Reverse pass from a scalar node; zeroes previous tape gradients first.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* external = nullptr;
  };

  Var push(Tensor value, bool requires_grad);
  std::span<double> grad_buffer(Var v);
  void record(std::function<void()> fn) { backward_fns_.push_back(std::move(fn)); }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> backward_fns_;
};

double smooth_l1_value(double x);
double bce_logit_value(double logit, double target);

}  // namespace gfd

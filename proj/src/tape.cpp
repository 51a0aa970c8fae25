#include "gfd/tape.hpp"

#include <algorithm>
#include <cmath>

#include "gfd/error.hpp"

namespace gfd {

double smooth_l1_value(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double bce_logit_value(double logit, double target) {
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

Var Tape::push(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::param(Tensor& external) {
  Var v = push(external, true);
  nodes_[v.id].external = &external;
  return v;
}

double Tape::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.numel() != 1) {
    throw ValidationError("expected a scalar, got shape " + shape_str(t.shape()));
  }
  return t[0];
}

std::span<double> Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() != n.value.numel()) n.grad.assign(n.value.numel(), 0.0);
  return n.grad;
}

Var Tape::conv2d(Var x, Var weight, Var bias, int stride, int pad) {
  Tensor out = gfd::conv2d(value(x), value(weight), value(bias), stride, pad);
  const bool rg = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  Var y = push(std::move(out), rg);
  if (rg) {
    record([this, x, weight, bias, y, stride, pad] {
      std::span<double> gx;
      if (requires_grad(x)) gx = grad_buffer(x);
      auto gw = grad_buffer(weight);
      auto gb = grad_buffer(bias);
      conv2d_backward(value(x), value(weight), stride, pad, grad_buffer(y), gx, gw, gb);
    });
  }
  return y;
}

Var Tape::conv2d(Var x, LayerParams& layer, int stride, int pad) {
  layer.validate();
  return conv2d(x, param(layer.weight), param(layer.bias), stride, pad);
}

Var Tape::relu(Var x) {
  Var y = push(gfd::relu(value(x)), requires_grad(x));
  if (requires_grad(x)) {
    record([this, x, y] { relu_backward(value(x), grad_buffer(y), grad_buffer(x)); });
  }
  return y;
}

Var Tape::maxpool2d(Var x, int kernel, int stride) {
  PoolResult r = maxpool2d_with_indices(value(x), kernel, stride);
  Var y = push(std::move(r.output), requires_grad(x));
  if (requires_grad(x)) {
    record([this, x, y, argmax = std::move(r.argmax)] {
      maxpool2d_backward(argmax, grad_buffer(y), grad_buffer(x));
    });
  }
  return y;
}

Var Tape::linear(Var x, Var weight, Var bias) {
  Tensor out = gfd::linear(value(x), value(weight), value(bias));
  const bool rg = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  Var y = push(std::move(out), rg);
  if (rg) {
    record([this, x, weight, bias, y] {
      std::span<double> gx;
      if (requires_grad(x)) gx = grad_buffer(x);
      auto gw = grad_buffer(weight);
      auto gb = grad_buffer(bias);
      linear_backward(value(x), value(weight), grad_buffer(y), gx, gw, gb);
    });
  }
  return y;
}

Var Tape::linear(Var x, LayerParams& layer) {
  layer.validate();
  return linear(x, param(layer.weight), param(layer.bias));
}

Var Tape::sigmoid(Var x) {
  Var y = push(gfd::sigmoid(value(x)), requires_grad(x));
  if (requires_grad(x)) {
    record([this, x, y] {
      const auto s = value(y).data();
      auto gy = grad_buffer(y);
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < s.size(); ++i) gx[i] += gy[i] * s[i] * (1.0 - s[i]);
    });
  }
  return y;
}

Var Tape::combine(Var a, Var b, CombineMode mode) {
  const bool rg = requires_grad(a) || requires_grad(b);
  Var y = push(elementwise_combine(value(a), value(b), mode), rg);
  if (rg) {
    record([this, a, b, y, mode] {
      auto gy = grad_buffer(y);
      if (requires_grad(a)) {
        auto ga = grad_buffer(a);
        const auto vb = value(b).data();
        for (std::size_t i = 0; i < gy.size(); ++i) {
          ga[i] += mode == CombineMode::kSum ? gy[i] : gy[i] * vb[i];
        }
      }
      if (requires_grad(b)) {
        auto gb = grad_buffer(b);
        const auto va = value(a).data();
        for (std::size_t i = 0; i < gy.size(); ++i) {
          gb[i] += mode == CombineMode::kSum ? gy[i] : gy[i] * va[i];
        }
      }
    });
  }
  return y;
}

Var Tape::roi_align(Var features, std::vector<Box> boxes, std::size_t out_size,
                    double spatial_scale, int sampling_ratio) {
  Tensor out = gfd::roi_align(value(features), boxes, out_size, spatial_scale, sampling_ratio);
  Var y = push(std::move(out), requires_grad(features));
  if (requires_grad(features)) {
    record([this, features, y, boxes = std::move(boxes), out_size, spatial_scale,
            sampling_ratio] {
      roi_align_backward(value(features).shape(), boxes, out_size, spatial_scale, sampling_ratio,
                         grad_buffer(y), grad_buffer(features));
    });
  }
  return y;
}

Var Tape::reshape(Var x, Shape shape) {
  Tensor t = value(x);
  t.reshape(std::move(shape));
  Var y = push(std::move(t), requires_grad(x));
  if (requires_grad(x)) {
    record([this, x, y] {
      auto gy = grad_buffer(y);
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

Var Tape::weighted_sum(Var x, std::vector<double> weights) {
  const auto xv = value(x).data();
  if (weights.size() != xv.size()) {
    throw ValidationError("weighted_sum: " + std::to_string(weights.size()) +
                          " weights for tensor " + shape_str(value(x).shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += weights[i] * xv[i];
  Var y = push(Tensor({1}, {acc}), requires_grad(x));
  if (requires_grad(x)) {
    record([this, x, y, weights = std::move(weights)] {
      const double g = grad_buffer(y)[0];
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
    });
  }
  return y;
}

Var Tape::add(Var a, Var b) {
  return combine(a, b, CombineMode::kSum);
}

Var Tape::bce_with_logits(Var x, std::vector<std::size_t> idx, std::vector<double> target,
                          double denom) {
  if (idx.size() != target.size() || denom <= 0.0) {
    throw ValidationError("bce_with_logits: index/target length mismatch or bad denominator");
  }
  const auto xv = value(x).data();
  double acc = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) acc += bce_logit_value(xv[idx[i]], target[i]);
  Var y = push(Tensor({1}, {acc / denom}), requires_grad(x));
  nodes_[y.id].value.check_finite("bce_with_logits");
  if (requires_grad(x)) {
    record([this, x, y, idx = std::move(idx), target = std::move(target), denom] {
      const double g = grad_buffer(y)[0] / denom;
      const auto xv = value(x).data();
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        gx[idx[i]] += g * (gfd::sigmoid(xv[idx[i]]) - target[i]);
      }
    });
  }
  return y;
}

Var Tape::softmax_cross_entropy(Var logits, std::vector<std::size_t> labels) {
  const Tensor& z = value(logits);
  if (z.rank() != 2 || z.dim(0) != labels.size() || labels.empty()) {
    throw ValidationError("softmax_cross_entropy: logits " + shape_str(z.shape()) + " vs " +
                          std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = z.dim(0), k = z.dim(1);
  std::vector<double> probs(rows * k);
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= k) throw ValidationError("softmax_cross_entropy: label out of range");
    const double* zr = &z.data()[r * k];
    const double m = *std::max_element(zr, zr + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(zr[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(zr[j] - lse);
    acc += lse - zr[labels[r]];
  }
  Var y = push(Tensor({1}, {acc / static_cast<double>(rows)}), requires_grad(logits));
  nodes_[y.id].value.check_finite("softmax_cross_entropy");
  if (requires_grad(logits)) {
    record([this, logits, y, labels = std::move(labels), probs = std::move(probs), rows, k] {
      const double g = grad_buffer(y)[0] / static_cast<double>(rows);
      auto gz = grad_buffer(logits);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
          gz[r * k + j] += g * (probs[r * k + j] - (j == labels[r] ? 1.0 : 0.0));
        }
      }
    });
  }
  return y;
}

Var Tape::smooth_l1(Var x, std::vector<std::size_t> idx, std::vector<double> target,
                    double denom) {
  if (idx.size() != target.size() || denom <= 0.0) {
    throw ValidationError("smooth_l1: index/target length mismatch or bad denominator");
  }
  const auto xv = value(x).data();
  double acc = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) acc += smooth_l1_value(xv[idx[i]] - target[i]);
  Var y = push(Tensor({1}, {acc / denom}), requires_grad(x));
  nodes_[y.id].value.check_finite("smooth_l1");
  if (requires_grad(x)) {
    record([this, x, y, idx = std::move(idx), target = std::move(target), denom] {
      const double g = grad_buffer(y)[0] / denom;
      const auto xv = value(x).data();
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double d = xv[idx[i]] - target[i];
        const double dd = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
        gx[idx[i]] += g * dd;
      }
    });
  }
  return y;
}

void Tape::backward(Var loss) {
  if (value(loss).numel() != 1) {
    throw ValidationError("backward needs a scalar output, got shape " +
                          shape_str(value(loss).shape()));
  }
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  if (!requires_grad(loss)) return;
  grad_buffer(loss)[0] = 1.0;
  // Ops recorded after the loss cannot influence it; their output grads stay zero.
  for (auto it = backward_fns_.rbegin(); it != backward_fns_.rend(); ++it) (*it)();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.external == nullptr || n.grad.empty()) continue;
    if (n.external->numel() != n.grad.size()) {
      throw ValidationError("parameter changed shape while recorded on the tape");
    }
    auto g = n.external->grad();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
  }
}

}  // namespace gfd

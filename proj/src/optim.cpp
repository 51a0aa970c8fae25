#include "gfd/optim.hpp"

#include <algorithm>
#include <cmath>

#include "gfd/error.hpp"

namespace gfd {

namespace {

double eval_loss(const LossClosure& fn, const std::vector<Tensor>& inputs, Tape& tape,
                 std::vector<Var>& leaves) {
  leaves.clear();
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  Var out = fn(tape, leaves);
  if (tape.value(out).numel() != 1) {
    throw ValidationError("grad_check closure must return a scalar, got shape " +
                          shape_str(tape.value(out).shape()));
  }
  return tape.scalar(out);
}

}  // namespace

double grad_check(const LossClosure& fn, std::vector<Tensor> inputs, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ValidationError("grad_check eps must lie in [1e-7, 1e-3]");
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    Var out = fn(tape, leaves);
    if (tape.value(out).numel() != 1) {
      throw ValidationError("grad_check closure must return a scalar, got shape " +
                            shape_str(tape.value(out).shape()));
    }
    tape.backward(out);
    for (Var v : leaves) {
      auto g = tape.grad(v);
      std::vector<double> copy(g.begin(), g.end());
      copy.resize(tape.value(v).numel(), 0.0);
      analytic.push_back(std::move(copy));
    }
  }

  double worst = 0.0;
  std::vector<Var> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].numel(); ++k) {
      const double orig = inputs[i][k];
      inputs[i][k] = orig + eps;
      Tape plus;
      const double f_plus = eval_loss(fn, inputs, plus, leaves);
      inputs[i][k] = orig - eps;
      Tape minus;
      const double f_minus = eval_loss(fn, inputs, minus, leaves);
      inputs[i][k] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[i][k];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

void sgd_step(std::span<LayerParams* const> params, double lr, double momentum) {
  for (LayerParams* p : params) {
    if (!p->weight.has_grad() || !p->bias.has_grad()) {
      throw ValidationError("sgd_step: layer without populated gradient");
    }
  }
  auto update = [&](Tensor& t, std::vector<double>& vel) {
    if (vel.size() != t.numel()) vel.assign(t.numel(), 0.0);
    auto w = t.data();
    auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      vel[i] = momentum * vel[i] - lr * g[i];
      w[i] += vel[i];
    }
    t.zero_grad();
  };
  for (LayerParams* p : params) {
    update(p->weight, p->weight_velocity);
    update(p->bias, p->bias_velocity);
  }
}

LayerParams make_conv_layer(std::size_t c_out, std::size_t c_in, std::size_t k, Rng& rng,
                            double gain) {
  LayerParams p;
  p.kind = LayerKind::kConv2d;
  p.weight = Tensor({c_out, c_in, k, k});
  p.bias = Tensor({c_out});
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(c_in * k * k));
  for (double& w : p.weight.data()) w = rng.uniform(-bound, bound);
  return p;
}

LayerParams make_linear_layer(std::size_t out, std::size_t in, Rng& rng, double gain) {
  LayerParams p;
  p.kind = LayerKind::kLinear;
  p.weight = Tensor({out, in});
  p.bias = Tensor({out});
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(in));
  for (double& w : p.weight.data()) w = rng.uniform(-bound, bound);
  return p;
}

}  // namespace gfd

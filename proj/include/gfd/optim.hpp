#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gfd/random.hpp"
#include "gfd/tape.hpp"
#include "gfd/tensor.hpp"

namespace gfd {

// Builds the scalar loss from leaves that wrap the inputs, in order.
using LossClosure = std::function<Var(Tape&, std::span<const Var>)>;

// Max over every input element of |analytic - central difference| / max(1, |analytic|).
double grad_check(const LossClosure& fn, std::vector<Tensor> inputs, double eps);

// v <- momentum * v - lr * g; w <- w + v; gradients are zeroed afterwards.
void sgd_step(std::span<LayerParams* const> params, double lr, double momentum);

// Kaiming-uniform weights (bound = gain * sqrt(6 / fan_in)), zero bias.
LayerParams make_conv_layer(std::size_t c_out, std::size_t c_in, std::size_t k, Rng& rng,
                            double gain = 1.0);
LayerParams make_linear_layer(std::size_t out, std::size_t in, Rng& rng, double gain = 1.0);

}  // namespace gfd

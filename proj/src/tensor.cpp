#include "gfd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gfd/error.hpp"

namespace gfd {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {
void check_rank(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw ValidationError("tensor rank must be 1..4, got shape " + shape_str(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_rank(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_rank(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw ValidationError("tensor shape " + shape_str(shape_) + " does not match data length " +
                          std::to_string(data_.size()));
  }
}

std::span<double> Tensor::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

void Tensor::reshape(Shape shape) {
  check_rank(shape);
  if (shape_numel(shape) != data_.size()) {
    throw ValidationError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::check_finite(const char* what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError(std::string("non-finite value in ") + what + " output at flat index " +
                         std::to_string(i));
    }
  }
}

void LayerParams::validate() const {
  if (kind == LayerKind::kConv2d) {
    if (weight.rank() != 4) {
      throw ValidationError("conv weight must be (C_out,C_in,kH,kW), got " +
                            shape_str(weight.shape()));
    }
  } else if (weight.rank() != 2) {
    throw ValidationError("linear weight must be (M,D), got " + shape_str(weight.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ValidationError("bias shape " + shape_str(bias.shape()) + " does not match weight " +
                          shape_str(weight.shape()));
  }
}

}  // namespace gfd

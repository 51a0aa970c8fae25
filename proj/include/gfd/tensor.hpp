#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gfd {

// Extents in N,C,H,W order; rank 1 to 4.
using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense f64 array with an optional gradient buffer of identical shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 accessors.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool has_grad() const { return !grad_.empty(); }
  // Allocates a zeroed gradient buffer on first use.
  std::span<double> grad();
  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  // Same data, new extents; element count must match.
  void reshape(Shape shape);

  // Throws NumericError naming `what` if any element is NaN/Inf.
  void check_finite(const char* what) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

enum class LayerKind { kConv2d, kLinear };

// Weights are (C_out, C_in, kH, kW) for conv and (M, D) for linear; bias is (C_out).
struct LayerParams {
  LayerKind kind = LayerKind::kLinear;
  Tensor weight;
  Tensor bias;
  // Momentum buffers, same shapes as weight and bias once allocated.
  std::vector<double> weight_velocity;
  std::vector<double> bias_velocity;

  void validate() const;
  std::size_t out_features() const { return weight.dim(0); }
};

}  // namespace gfd

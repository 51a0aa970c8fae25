#include "gfd/ops.hpp"

#include <algorithm>
#include <cmath>

#include "gfd/error.hpp"

namespace gfd {

std::string box_str(const Box& b) {
  return "(" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) +
         "," + std::to_string(b.y1) + ")";
}

namespace {

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ValidationError(std::string(what) + " expects a rank-4 (N,C,H,W) tensor, got " +
                          shape_str(t.shape()));
  }
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, int stride, int pad) {
  const long span = static_cast<long>(in) + 2L * pad - static_cast<long>(k);
  if (span < 0) return 0;
  return static_cast<std::size_t>(span / stride) + 1;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  require_rank4(input, "conv2d");
  if (stride < 1 || pad < 0) throw ValidationError("conv2d needs stride >= 1 and pad >= 0");
  if (weight.rank() != 4 || weight.dim(1) != input.dim(1) || bias.rank() != 1 ||
      bias.dim(0) != weight.dim(0)) {
    throw ValidationError("conv2d shape mismatch: input " + shape_str(input.shape()) +
                          " vs weight " + shape_str(weight.shape()) + " / bias " +
                          shape_str(bias.shape()));
  }
  const std::size_t n_batch = input.dim(0), c_in = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t oh = conv_out_extent(h, kh, stride, pad);
  const std::size_t ow = conv_out_extent(w, kw, stride, pad);
  if (oh == 0 || ow == 0) {
    throw ValidationError("conv2d kernel " + shape_str(weight.shape()) +
                          " larger than padded input " + shape_str(input.shape()));
  }
  Tensor out({n_batch, c_out, oh, ow});
  const auto x = input.data();
  const auto wt = weight.data();
  auto y = out.data();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < c_out; ++co) {
      double* yp = &y[((n * c_out) + co) * oh * ow];
      std::fill(yp, yp + oh * ow, bias[co]);
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* xp = &x[((n * c_in) + ci) * h * w];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = wt[((co * c_in + ci) * kh + ky) * kw + kx];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const long iy = static_cast<long>(oy) * stride + static_cast<long>(ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              const double* xrow = xp + iy * static_cast<long>(w);
              double* yrow = yp + oy * ow;
              if (stride == 1) {
                const long off = static_cast<long>(kx) - pad;
                const long lo = std::max(0L, -off);
                const long hi = std::min(static_cast<long>(ow), static_cast<long>(w) - off);
                for (long ox = lo; ox < hi; ++ox) yrow[ox] += wv * xrow[ox + off];
              } else {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                  const long ix = static_cast<long>(ox) * stride + static_cast<long>(kx) - pad;
                  if (ix < 0 || ix >= static_cast<long>(w)) continue;
                  yrow[ox] += wv * xrow[ix];
                }
              }
            }
          }
        }
      }
    }
  }
  out.check_finite("conv2d");
  return out;
}

Tensor conv2d(const Tensor& input, const LayerParams& params, int stride, int pad) {
  params.validate();
  return conv2d(input, params.weight, params.bias, stride, pad);
}

void conv2d_backward(const Tensor& input, const Tensor& weight, int stride, int pad,
                     std::span<const double> grad_out, std::span<double> grad_input,
                     std::span<double> grad_weight, std::span<double> grad_bias) {
  const std::size_t n_batch = input.dim(0), c_in = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t oh = conv_out_extent(h, kh, stride, pad);
  const std::size_t ow = conv_out_extent(w, kw, stride, pad);
  const auto x = input.data();
  const auto wt = weight.data();
  const bool want_input = !grad_input.empty();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < c_out; ++co) {
      const double* gp = &grad_out[((n * c_out) + co) * oh * ow];
      double bsum = 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) bsum += gp[i];
      grad_bias[co] += bsum;
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double* xp = &x[((n * c_in) + ci) * h * w];
        double* gxp = want_input ? &grad_input[((n * c_in) + ci) * h * w] : nullptr;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t widx = ((co * c_in + ci) * kh + ky) * kw + kx;
            const double wv = wt[widx];
            double gw = 0.0;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const long iy = static_cast<long>(oy) * stride + static_cast<long>(ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              const double* xrow = xp + iy * static_cast<long>(w);
              const double* grow = gp + oy * ow;
              if (stride == 1) {
                const long off = static_cast<long>(kx) - pad;
                const long lo = std::max(0L, -off);
                const long hi = std::min(static_cast<long>(ow), static_cast<long>(w) - off);
                for (long ox = lo; ox < hi; ++ox) gw += grow[ox] * xrow[ox + off];
                if (want_input) {
                  double* gxrow = gxp + iy * static_cast<long>(w);
                  for (long ox = lo; ox < hi; ++ox) gxrow[ox + off] += wv * grow[ox];
                }
              } else {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                  const long ix = static_cast<long>(ox) * stride + static_cast<long>(kx) - pad;
                  if (ix < 0 || ix >= static_cast<long>(w)) continue;
                  gw += grow[ox] * xrow[ix];
                  if (want_input) gxp[iy * static_cast<long>(w) + ix] += wv * grow[ox];
                }
              }
            }
            grad_weight[widx] += gw;
          }
        }
      }
    }
  }
}

Tensor relu(const Tensor& input) {
  // max(0, NaN) would silently hide a NaN, so inputs are checked too.
  input.check_finite("relu input");
  Tensor out(input.shape());
  auto y = out.data();
  const auto x = input.data();
  // Strict comparison keeps the subgradient at 0 equal to 0 and never emits -0.0.
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  out.check_finite("relu");
  return out;
}

void relu_backward(const Tensor& input, std::span<const double> grad_out,
                   std::span<double> grad_input) {
  const auto x = input.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0) grad_input[i] += grad_out[i];
  }
}

PoolResult maxpool2d_with_indices(const Tensor& input, int kernel, int stride) {
  require_rank4(input, "maxpool2d");
  if (kernel < 1 || stride < 1) throw ValidationError("maxpool2d needs kernel, stride >= 1");
  const std::size_t n_batch = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto k = static_cast<std::size_t>(kernel);
  if (k > h || k > w) {
    throw ValidationError("maxpool2d window " + std::to_string(kernel) + " larger than input " +
                          shape_str(input.shape()));
  }
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  PoolResult r{Tensor({n_batch, c, oh, ow}), {}};
  r.argmax.resize(r.output.numel());
  const auto x = input.data();
  auto y = r.output.data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n_batch * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + (oy * stride) * w + ox * stride;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = base + (oy * stride + dy) * w + ox * stride + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[o] = x[best];
        r.argmax[o] = best;
      }
    }
  }
  r.output.check_finite("maxpool2d");
  return r;
}

Tensor maxpool2d(const Tensor& input, int kernel, int stride) {
  return maxpool2d_with_indices(input, kernel, stride).output;
}

void maxpool2d_backward(const std::vector<std::size_t>& argmax, std::span<const double> grad_out,
                        std::span<double> grad_input) {
  for (std::size_t i = 0; i < argmax.size(); ++i) grad_input[argmax[i]] += grad_out[i];
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(1) ||
      bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ValidationError("linear shape mismatch: input " + shape_str(input.shape()) +
                          " vs weight " + shape_str(weight.shape()) + " / bias " +
                          shape_str(bias.shape()));
  }
  const std::size_t n = input.dim(0), d = input.dim(1), m = weight.dim(0);
  Tensor out({n, m});
  const auto x = input.data();
  const auto wt = weight.data();
  auto y = out.data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = &x[r * d];
    for (std::size_t j = 0; j < m; ++j) {
      const double* wr = &wt[j * d];
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += xr[k] * wr[k];
      y[r * m + j] = acc + bias[j];
    }
  }
  out.check_finite("linear");
  return out;
}

Tensor linear(const Tensor& input, const LayerParams& params) {
  params.validate();
  return linear(input, params.weight, params.bias);
}

void linear_backward(const Tensor& input, const Tensor& weight, std::span<const double> grad_out,
                     std::span<double> grad_input, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
  const std::size_t n = input.dim(0), d = input.dim(1), m = weight.dim(0);
  const auto x = input.data();
  const auto wt = weight.data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = &x[r * d];
    for (std::size_t j = 0; j < m; ++j) {
      const double g = grad_out[r * m + j];
      if (g == 0.0) continue;
      grad_bias[j] += g;
      double* gw = &grad_weight[j * d];
      const double* wr = &wt[j * d];
      for (std::size_t k = 0; k < d; ++k) gw[k] += g * xr[k];
      if (!grad_input.empty()) {
        double* gx = &grad_input[r * d];
        for (std::size_t k = 0; k < d; ++k) gx[k] += g * wr[k];
      }
    }
  }
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& input) {
  Tensor out(input.shape());
  auto y = out.data();
  const auto x = input.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  out.check_finite("sigmoid");
  return out;
}

Tensor elementwise_combine(const Tensor& a, const Tensor& b, CombineMode mode) {
  if (a.shape() != b.shape()) {
    throw ValidationError("elementwise_combine shape mismatch: " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
  Tensor out(a.shape());
  auto y = out.data();
  const auto x = a.data();
  const auto z = b.data();
  if (mode == CombineMode::kSum) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  }
  out.check_finite("elementwise_combine");
  return out;
}

namespace {

struct BilinearTap {
  std::size_t idx[4];
  double weight[4];
  bool inside;
};

// Bilinear sample at continuous (y, x) in value-index coordinates; follows the
// usual ROI-align border rule (samples beyond one cell outside contribute 0).
BilinearTap bilinear_tap(double y, double x, std::size_t h, std::size_t w) {
  BilinearTap t{};
  if (y < -1.0 || y > static_cast<double>(h) || x < -1.0 || x > static_cast<double>(w)) {
    t.inside = false;
    return t;
  }
  t.inside = true;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  auto y_low = static_cast<std::size_t>(y);
  auto x_low = static_cast<std::size_t>(x);
  std::size_t y_high, x_high;
  if (y_low >= h - 1) {
    y_high = y_low = h - 1;
    y = static_cast<double>(y_low);
  } else {
    y_high = y_low + 1;
  }
  if (x_low >= w - 1) {
    x_high = x_low = w - 1;
    x = static_cast<double>(x_low);
  } else {
    x_high = x_low + 1;
  }
  const double ly = y - static_cast<double>(y_low), lx = x - static_cast<double>(x_low);
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  t.idx[0] = y_low * w + x_low;
  t.idx[1] = y_low * w + x_high;
  t.idx[2] = y_high * w + x_low;
  t.idx[3] = y_high * w + x_high;
  t.weight[0] = hy * hx;
  t.weight[1] = hy * lx;
  t.weight[2] = ly * hx;
  t.weight[3] = ly * lx;
  return t;
}

// Visits every (output cell, tap) pair with the tap's averaged weight.
template <typename Fn>
void for_each_roi_tap(const Shape& fshape, std::span<const Box> boxes, std::size_t out_size,
                      double spatial_scale, int sampling_ratio, Fn&& fn) {
  const std::size_t h = fshape[2], w = fshape[3];
  const auto grid = static_cast<std::size_t>(sampling_ratio);
  const double inv_count = 1.0 / static_cast<double>(grid * grid);
  for (std::size_t r = 0; r < boxes.size(); ++r) {
    const Box& b = boxes[r];
    const double x0 = b.x0 * spatial_scale - 0.5, y0 = b.y0 * spatial_scale - 0.5;
    const double bin_w = (b.x1 - b.x0) * spatial_scale / static_cast<double>(out_size);
    const double bin_h = (b.y1 - b.y0) * spatial_scale / static_cast<double>(out_size);
    for (std::size_t py = 0; py < out_size; ++py) {
      for (std::size_t px = 0; px < out_size; ++px) {
        const std::size_t cell = py * out_size + px;
        for (std::size_t iy = 0; iy < grid; ++iy) {
          const double y = y0 + static_cast<double>(py) * bin_h +
                           (static_cast<double>(iy) + 0.5) * bin_h / static_cast<double>(grid);
          for (std::size_t ix = 0; ix < grid; ++ix) {
            const double x = x0 + static_cast<double>(px) * bin_w +
                             (static_cast<double>(ix) + 0.5) * bin_w / static_cast<double>(grid);
            const BilinearTap t = bilinear_tap(y, x, h, w);
            if (!t.inside) continue;
            for (int k = 0; k < 4; ++k) fn(r, cell, t.idx[k], t.weight[k] * inv_count);
          }
        }
      }
    }
  }
}

void check_roi_args(const Shape& fshape, std::span<const Box> boxes, std::size_t out_size,
                    int sampling_ratio) {
  if (fshape.size() != 4 || fshape[0] != 1) {
    throw ValidationError("roi_align expects a (1,C,H,W) feature map, got " + shape_str(fshape));
  }
  if (out_size < 1 || sampling_ratio < 1) {
    throw ValidationError("roi_align needs out_size >= 1 and sampling_ratio >= 1");
  }
  for (const Box& b : boxes) {
    if (!(b.width() > 0.0) || !(b.height() > 0.0)) {
      throw ValidationError("roi_align got degenerate box " + box_str(b));
    }
  }
}

}  // namespace

Tensor roi_align(const Tensor& features, std::span<const Box> boxes, std::size_t out_size,
                 double spatial_scale, int sampling_ratio) {
  check_roi_args(features.shape(), boxes, out_size, sampling_ratio);
  const std::size_t c = features.dim(1), plane = features.dim(2) * features.dim(3);
  const std::size_t cells = out_size * out_size;
  Tensor out({boxes.size(), c, out_size, out_size});
  auto y = out.data();
  const auto x = features.data();
  for_each_roi_tap(features.shape(), boxes, out_size, spatial_scale, sampling_ratio,
                   [&](std::size_t r, std::size_t cell, std::size_t idx, double wgt) {
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       y[(r * c + ch) * cells + cell] += wgt * x[ch * plane + idx];
                     }
                   });
  out.check_finite("roi_align");
  return out;
}

void roi_align_backward(const Shape& feature_shape, std::span<const Box> boxes,
                        std::size_t out_size, double spatial_scale, int sampling_ratio,
                        std::span<const double> grad_out, std::span<double> grad_features) {
  const std::size_t c = feature_shape[1], plane = feature_shape[2] * feature_shape[3];
  const std::size_t cells = out_size * out_size;
  for_each_roi_tap(feature_shape, boxes, out_size, spatial_scale, sampling_ratio,
                   [&](std::size_t r, std::size_t cell, std::size_t idx, double wgt) {
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       grad_features[ch * plane + idx] += wgt * grad_out[(r * c + ch) * cells + cell];
                     }
                   });
}

}  // namespace gfd

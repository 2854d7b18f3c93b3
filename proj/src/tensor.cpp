#include "csad/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace csad {

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

static void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor shape " + shape_to_string(shape) + " has a zero extent");
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_numel(shape_) != data_.size())
    throw ShapeError("shape " + shape_to_string(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeError(std::string(what) + ": expected shape " + shape_to_string(expected) +
                     ", got " + shape_to_string(t.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
}

namespace {

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, const char* what, F f) {
  require_same_shape(a, b, what);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor square(const Tensor& a) {
  return map_unary(a, [](double x) { return x * x; });
}
Tensor abs(const Tensor& a) {
  return map_unary(a, [](double x) { return std::fabs(x); });
}
Tensor scale(const Tensor& a, double s) {
  return map_unary(a, [s](double x) { return x * s; });
}
Tensor add_scalar(const Tensor& a, double s) {
  return map_unary(a, [s](double x) { return x + s; });
}

Tensor abs_backward(const Tensor& input, const Tensor& upstream) {
  return map_binary(input, upstream, "abs_backward", [](double x, double g) {
    return x > 0 ? g : (x < 0 ? -g : 0.0);
  });
}

Tensor square_backward(const Tensor& input, const Tensor& upstream) {
  return map_binary(input, upstream, "square_backward",
                    [](double x, double g) { return 2.0 * x * g; });
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor relu(const Tensor& input) {
  return map_unary(input, [](double x) { return x > 0 ? x : 0.0; });
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  return map_binary(input, upstream, "relu_backward",
                    [](double x, double g) { return x > 0 ? g : 0.0; });
}

Tensor sigmoid(const Tensor& input) {
  return map_unary(input, [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& upstream) {
  return map_binary(output, upstream, "sigmoid_backward",
                    [](double s, double g) { return g * s * (1.0 - s); });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                     shape_to_string(shape));
  return Tensor(std::move(shape), a.values());
}

Tensor transpose(const Tensor& matrix) {
  require_rank(matrix, 2, "transpose");
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  Tensor out({cols, rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(c, r) = matrix.at(r, c);
  return out;
}

Tensor channel_sum(const Tensor& input) {
  require_rank(input, 3, "channel_sum");
  const std::size_t channels = input.dim(0), plane = input.dim(1) * input.dim(2);
  Tensor out({input.dim(1), input.dim(2)});
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = input.data().data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) out[i] += src[i];
  }
  return out;
}

Tensor add_channel_bias(const Tensor& input, const Tensor& bias) {
  require_rank(input, 3, "add_channel_bias");
  require_shape(bias, {input.dim(0)}, "add_channel_bias bias");
  const std::size_t plane = input.dim(1) * input.dim(2);
  Tensor out = input;
  for (std::size_t c = 0; c < input.dim(0); ++c) {
    double* dst = out.data().data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] += bias[c];
  }
  return out;
}

Tensor channel_bias_backward(const Tensor& upstream) {
  require_rank(upstream, 3, "channel_bias_backward");
  const std::size_t plane = upstream.dim(1) * upstream.dim(2);
  Tensor out({upstream.dim(0)});
  for (std::size_t c = 0; c < upstream.dim(0); ++c) {
    const double* src = upstream.data().data() + c * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += src[i];
    out[c] = s;
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_channels");
  require_rank(b, 3, "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw ShapeError("concat_channels: spatial mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  std::vector<double> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(data));
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t first_channels) {
  require_rank(t, 3, "split_channels");
  if (first_channels == 0 || first_channels >= t.dim(0))
    throw ShapeError("split_channels: cannot split " + shape_to_string(t.shape()) + " at " +
                     std::to_string(first_channels));
  const std::size_t plane = t.dim(1) * t.dim(2);
  const auto mid = t.data().begin() + static_cast<std::ptrdiff_t>(first_channels * plane);
  Tensor a({first_channels, t.dim(1), t.dim(2)}, std::vector<double>(t.data().begin(), mid));
  Tensor b({t.dim(0) - first_channels, t.dim(1), t.dim(2)},
           std::vector<double>(mid, t.data().end()));
  return {std::move(a), std::move(b)};
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      const double* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& upstream) {
  require_rank(a, 2, "matmul_backward lhs");
  require_rank(b, 2, "matmul_backward rhs");
  require_shape(upstream, {a.dim(0), b.dim(1)}, "matmul_backward upstream");
  return {matmul(upstream, transpose(b)), matmul(transpose(a), upstream)};
}

namespace {

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, kh, kw, out_h, out_w;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernels, std::size_t stride,
                           std::size_t padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  if (stride == 0) throw ParameterError("conv2d: stride must be >= 1");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2),  kernels.dim(0),
                 kernels.dim(2), kernels.dim(3), 0, 0};
  if (kernels.dim(1) != g.c_in)
    throw ShapeError("conv2d: kernels " + shape_to_string(kernels.shape()) + " expect " +
                     std::to_string(kernels.dim(1)) + " input channels, input is " +
                     shape_to_string(input.shape()));
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding)
    throw ShapeError("conv2d: kernel " + shape_to_string(kernels.shape()) +
                     " larger than padded input " + shape_to_string(input.shape()));
  g.out_h = (g.h + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.w + 2 * padding - g.kw) / stride + 1;
  return g;
}

// Output indices o in [lo, hi) for which o*stride + k - pad lands in [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t pad, std::size_t stride,
                                                std::size_t extent, std::size_t out_extent) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto offset = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  std::ptrdiff_t lo = 0;
  if (offset < 0) lo = (-offset + s - 1) / s;
  std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(extent) - 1 - offset);
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_extent));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

// Each output accumulates its taps in (c_in, ky, kx) order starting from +0.0;
// the brute-force oracle in verify relies on that order for bitwise equality.
namespace {

// Unit-stride convolution on a zero-padded copy of the input. With the output
// laid out on the padded row pitch, every tap (ci, ky, kx) becomes one
// contiguous multiply-add over the whole plane; the extra columns per row are
// scratch and are dropped when cropping. Each output still accumulates its
// taps in (ci, ky, kx) order from +0.0, and padded taps add exact zeros, so the
// result is bitwise identical to the strided path.
struct PaddedPlanes {
  std::size_t hp, wp, span;  // padded height/width, valid length of an output plane
  std::vector<double> data;
};

PaddedPlanes pad_planes(const Tensor& t, std::size_t pad, std::size_t out_h, std::size_t out_w) {
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  PaddedPlanes p{h + 2 * pad, w + 2 * pad, 0, {}};
  p.span = (out_h - 1) * p.wp + out_w;
  p.data.assign(c * p.hp * p.wp, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      const double* src = t.data().data() + (ch * h + y) * w;
      std::copy(src, src + w, p.data.data() + (ch * p.hp + y + pad) * p.wp + pad);
    }
  return p;
}

Tensor conv2d_unit(const Tensor& input, const Tensor& kernels, std::size_t padding,
                   const ConvGeometry& g) {
  const PaddedPlanes in = pad_planes(input, padding, g.out_h, g.out_w);
  const std::size_t plane = in.hp * in.wp;
  std::vector<double> acc(in.span);
  Tensor out({g.c_out, g.out_h, g.out_w});
  const double* ker = kernels.data().data();
  for (std::size_t co = 0; co < g.c_out; ++co) {
    std::fill(acc.begin(), acc.end(), 0.0);
    double* a = acc.data();
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      const double* src = in.data.data() + ci * plane;
      const double* k = ker + (co * g.c_in + ci) * g.kh * g.kw;
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const double wv = k[ky * g.kw + kx];
          const double* s = src + ky * in.wp + kx;
          for (std::size_t q = 0; q < in.span; ++q) a[q] += s[q] * wv;
        }
    }
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
      std::copy(a + oy * in.wp, a + oy * in.wp + g.out_w, &out.at(co, oy, 0));
  }
  return out;
}

ConvGrads conv2d_backward_unit(const Tensor& input, const Tensor& kernels, const Tensor& upstream,
                               std::size_t padding, const ConvGeometry& g) {
  const PaddedPlanes in = pad_planes(input, padding, g.out_h, g.out_w);
  const std::size_t plane = in.hp * in.wp;
  // Upstream on the padded pitch; scratch columns stay zero.
  std::vector<double> up(g.c_out * in.span, 0.0);
  for (std::size_t co = 0; co < g.c_out; ++co)
    for (std::size_t oy = 0; oy < g.out_h; ++oy)
    {
      const double* row = upstream.data().data() + (co * g.out_h + oy) * g.out_w;
      std::copy(row, row + g.out_w, up.data() + co * in.span + oy * in.wp);
    }
  std::vector<double> gin(g.c_in * plane, 0.0);
  ConvGrads grads{Tensor(input.shape()), Tensor(kernels.shape())};
  const double* ker = kernels.data().data();
  double* gker = grads.kernels.data().data();
  for (std::size_t co = 0; co < g.c_out; ++co) {
    const double* u = up.data() + co * in.span;
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      const double* src = in.data.data() + ci * plane;
      double* gsrc = gin.data() + ci * plane;
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::size_t widx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
          const double wv = ker[widx];
          const std::size_t shift = ky * in.wp + kx;
          const double* s = src + shift;
          double* gs = gsrc + shift;
          double part[4] = {0.0, 0.0, 0.0, 0.0};
          std::size_t q = 0;
          for (; q + 4 <= in.span; q += 4)
            for (std::size_t l = 0; l < 4; ++l) part[l] += u[q + l] * s[q + l];
          for (; q < in.span; ++q) part[0] += u[q] * s[q];
          gker[widx] = (part[0] + part[1]) + (part[2] + part[3]);
          for (q = 0; q < in.span; ++q) gs[q] += u[q] * wv;
        }
    }
  }
  for (std::size_t ci = 0; ci < g.c_in; ++ci)
    for (std::size_t y = 0; y < g.h; ++y) {
      const double* row = gin.data() + (ci * in.hp + y + padding) * in.wp + padding;
      std::copy(row, row + g.w, &grads.input.at(ci, y, 0));
    }
  return grads;
}

Tensor conv2d_strided(const Tensor& input, const Tensor& kernels, std::size_t stride,
                      std::size_t padding, const ConvGeometry& g) {
  Tensor out({g.c_out, g.out_h, g.out_w});
  const double* in = input.data().data();
  const double* ker = kernels.data().data();
  double* dst = out.data().data();
  for (std::size_t co = 0; co < g.c_out; ++co) {
    double* plane = dst + co * g.out_h * g.out_w;
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      const double* src = in + ci * g.h * g.w;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto [y0, y1] = valid_range(ky, padding, stride, g.h, g.out_h);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const double wv = ker[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
          const auto [x0, x1] = valid_range(kx, padding, stride, g.w, g.out_w);
          for (std::size_t oy = y0; oy < y1; ++oy) {
            const double* srow = src + (oy * stride + ky - padding) * g.w;
            double* orow = plane + oy * g.out_w;
            if (stride == 1) {
              for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += srow[ox + kx - padding] * wv;
            } else {
              for (std::size_t ox = x0; ox < x1; ++ox)
                orow[ox] += srow[ox * stride + kx - padding] * wv;
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward_strided(const Tensor& input, const Tensor& kernels,
                                  const Tensor& upstream, std::size_t stride, std::size_t padding,
                                  const ConvGeometry& g) {
  ConvGrads grads{Tensor(input.shape()), Tensor(kernels.shape())};
  const double* in = input.data().data();
  const double* ker = kernels.data().data();
  const double* up = upstream.data().data();
  double* gin = grads.input.data().data();
  double* gker = grads.kernels.data().data();
  for (std::size_t co = 0; co < g.c_out; ++co) {
    const double* uplane = up + co * g.out_h * g.out_w;
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      const double* src = in + ci * g.h * g.w;
      double* gsrc = gin + ci * g.h * g.w;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto [y0, y1] = valid_range(ky, padding, stride, g.h, g.out_h);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::size_t widx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
          const double wv = ker[widx];
          const auto [x0, x1] = valid_range(kx, padding, stride, g.w, g.out_w);
          // Four partial sums so the reduction over ox can vectorise.
          double acc[4] = {0.0, 0.0, 0.0, 0.0};
          for (std::size_t oy = y0; oy < y1; ++oy) {
            const std::size_t row_off = (oy * stride + ky - padding) * g.w;
            const double* srow = src + row_off;
            double* grow = gsrc + row_off;
            const double* urow = uplane + oy * g.out_w;
            if (stride == 1) {
              // ox >= x0 guarantees ox + kx >= padding.
              for (std::size_t ox = x0; ox < x1; ++ox) grow[ox + kx - padding] += urow[ox] * wv;
              std::size_t ox = x0;
              for (; ox + 4 <= x1; ox += 4)
                for (std::size_t l = 0; l < 4; ++l) acc[l] += urow[ox + l] * srow[ox + l + kx - padding];
              for (; ox < x1; ++ox) acc[0] += urow[ox] * srow[ox + kx - padding];
            } else {
              for (std::size_t ox = x0; ox < x1; ++ox) {
                const std::size_t ix = ox * stride + kx - padding;
                acc[0] += urow[ox] * srow[ix];
                grow[ix] += urow[ox] * wv;
              }
            }
          }
          gker[widx] = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        }
      }
    }
  }
  return grads;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding) {
  const auto g = conv_geometry(input, kernels, stride, padding);
  return stride == 1 ? conv2d_unit(input, kernels, padding, g)
                     : conv2d_strided(input, kernels, stride, padding, g);
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& upstream,
                          std::size_t stride, std::size_t padding) {
  const auto g = conv_geometry(input, kernels, stride, padding);
  require_shape(upstream, {g.c_out, g.out_h, g.out_w}, "conv2d_backward upstream");
  return stride == 1 ? conv2d_backward_unit(input, kernels, upstream, padding, g)
                     : conv2d_backward_strided(input, kernels, upstream, stride, padding, g);
}

Tensor spatial_softmax(const Tensor& map) {
  require_rank(map, 2, "spatial_softmax");
  const double peak = *std::max_element(map.data().begin(), map.data().end());
  Tensor out(map.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    out[i] = std::exp(map[i] - peak);
    total += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= total;
  return out;
}

Tensor spatial_softmax_backward(const Tensor& map, const Tensor& upstream) {
  require_same_shape(map, upstream, "spatial_softmax_backward");
  const Tensor p = spatial_softmax(map);
  const double inner = dot(p, upstream);
  Tensor out(map.shape());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (upstream[i] - inner);
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;  // weight on hi
};

std::vector<Tap> bilinear_taps(std::size_t source, std::size_t target) {
  std::vector<Tap> taps(target);
  const double ratio = static_cast<double>(source) / static_cast<double>(target);
  for (std::size_t i = 0; i < target; ++i) {
    double pos = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(source - 1));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, source - 1);
    taps[i] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& input, std::size_t target_h, std::size_t target_w) {
  require_rank(input, 3, "bilinear_upsample");
  if (target_h == 0 || target_w == 0)
    throw ParameterError("bilinear_upsample: target size must be positive");
  const std::size_t channels = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h == target_h && w == target_w) return input;
  const auto ty = bilinear_taps(h, target_h);
  const auto tx = bilinear_taps(w, target_w);
  Tensor out({channels, target_h, target_w});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < target_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < target_w; ++x) {
        const Tap& b = tx[x];
        const double top = input.at(c, a.lo, b.lo) * (1.0 - b.frac) + input.at(c, a.lo, b.hi) * b.frac;
        const double bot = input.at(c, a.hi, b.lo) * (1.0 - b.frac) + input.at(c, a.hi, b.hi) * b.frac;
        out.at(c, y, x) = top * (1.0 - a.frac) + bot * a.frac;
      }
    }
  return out;
}

Tensor bilinear_upsample_backward(const Tensor& upstream, std::size_t source_h,
                                  std::size_t source_w) {
  require_rank(upstream, 3, "bilinear_upsample_backward");
  if (source_h == 0 || source_w == 0)
    throw ParameterError("bilinear_upsample_backward: source size must be positive");
  const std::size_t channels = upstream.dim(0), th = upstream.dim(1), tw = upstream.dim(2);
  if (th == source_h && tw == source_w) return upstream;
  const auto ty = bilinear_taps(source_h, th);
  const auto tx = bilinear_taps(source_w, tw);
  Tensor grad({channels, source_h, source_w});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < th; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < tw; ++x) {
        const Tap& b = tx[x];
        const double g = upstream.at(c, y, x);
        grad.at(c, a.lo, b.lo) += g * (1.0 - a.frac) * (1.0 - b.frac);
        grad.at(c, a.lo, b.hi) += g * (1.0 - a.frac) * b.frac;
        grad.at(c, a.hi, b.lo) += g * a.frac * (1.0 - b.frac);
        grad.at(c, a.hi, b.hi) += g * a.frac * b.frac;
      }
    }
  return grad;
}

namespace {

// Index (dy, dx) of the first maximum in the 2x2 window, scanning row-major.
std::pair<std::size_t, std::size_t> window_argmax(const Tensor& in, std::size_t c, std::size_t y,
                                                  std::size_t x) {
  std::size_t by = 0, bx = 0;
  double best = in.at(c, 2 * y, 2 * x);
  for (std::size_t dy = 0; dy < 2; ++dy)
    for (std::size_t dx = 0; dx < 2; ++dx) {
      const double v = in.at(c, 2 * y + dy, 2 * x + dx);
      if (v > best) {
        best = v;
        by = dy;
        bx = dx;
      }
    }
  return {by, bx};
}

}  // namespace

Tensor maxpool2x2(const Tensor& input) {
  require_rank(input, 3, "maxpool2x2");
  if (input.dim(1) < 2 || input.dim(2) < 2)
    throw ShapeError("maxpool2x2: input " + shape_to_string(input.shape()) + " smaller than 2x2");
  const std::size_t oh = input.dim(1) / 2, ow = input.dim(2) / 2;
  Tensor out({input.dim(0), oh, ow});
  for (std::size_t c = 0; c < input.dim(0); ++c)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const auto [dy, dx] = window_argmax(input, c, y, x);
        out.at(c, y, x) = input.at(c, 2 * y + dy, 2 * x + dx);
      }
  return out;
}

Tensor maxpool2x2_backward(const Tensor& input, const Tensor& upstream) {
  require_rank(input, 3, "maxpool2x2_backward");
  require_shape(upstream, {input.dim(0), input.dim(1) / 2, input.dim(2) / 2},
                "maxpool2x2_backward upstream");
  Tensor grad(input.shape());
  for (std::size_t c = 0; c < upstream.dim(0); ++c)
    for (std::size_t y = 0; y < upstream.dim(1); ++y)
      for (std::size_t x = 0; x < upstream.dim(2); ++x) {
        const auto [dy, dx] = window_argmax(input, c, y, x);
        grad.at(c, 2 * y + dy, 2 * x + dx) += upstream.at(c, y, x);
      }
  return grad;
}

// ---------------------------------------------------------------------------
// RT1: "RT1\n" <rank>\n <d0 d1 ...>\n then little-endian float64 payload.

namespace {

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return r;
}

}  // namespace

void write_rt1(std::ostream& out, const Tensor& t) {
  out << "RT1\n" << t.rank() << "\n";
  for (std::size_t i = 0; i < t.rank(); ++i) out << (i ? " " : "") << t.dim(i);
  out << "\n";
  for (double v : t.data()) {
    const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
    char buf[8];
    std::memcpy(buf, &bits, 8);
    out.write(buf, 8);
  }
  if (!out) throw std::runtime_error("RT1: write failed");
}

Tensor read_rt1(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "RT1") throw std::runtime_error("RT1: bad magic");
  if (!std::getline(in, line)) throw std::runtime_error("RT1: missing rank line");
  std::size_t rank = 0;
  try {
    rank = std::stoul(line);
  } catch (const std::exception&) {
    throw std::runtime_error("RT1: malformed rank line '" + line + "'");
  }
  if (rank == 0) throw std::runtime_error("RT1: rank must be >= 1");
  if (!std::getline(in, line)) throw std::runtime_error("RT1: missing shape line");
  std::istringstream dims(line);
  Shape shape;
  std::size_t d = 0;
  while (dims >> d) shape.push_back(d);
  if (shape.size() != rank)
    throw std::runtime_error("RT1: shape line '" + line + "' does not match rank " +
                             std::to_string(rank));
  for (auto e : shape)
    if (e == 0) throw std::runtime_error("RT1: zero extent in shape '" + line + "'");
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) {
    char buf[8];
    if (!in.read(buf, 8)) throw std::runtime_error("RT1: truncated payload");
    std::uint64_t bits = 0;
    std::memcpy(&bits, buf, 8);
    v = std::bit_cast<double>(to_little_endian(bits));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_rt1(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_rt1(out, t);
}

Tensor load_rt1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return read_rt1(in);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace csad

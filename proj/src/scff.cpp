#include "csad/scff.hpp"

#include <algorithm>
#include <cmath>

namespace csad {

Tensor project_general(const Tensor& features, const Tensor& proj_kernels) {
  require_rank(proj_kernels, 4, "project_general kernels");
  if (proj_kernels.dim(2) != 1 || proj_kernels.dim(3) != 1)
    throw ShapeError("project_general: kernels must be 1x1, got " +
                     shape_to_string(proj_kernels.shape()));
  return conv2d(features, proj_kernels, 1, 0);
}

CorrelationMatrix spatial_correlation(const Tensor& x, const Tensor& y) {
  require_rank(x, 3, "spatial_correlation");
  require_same_shape(x, y, "spatial_correlation");
  const std::size_t channels = x.dim(0), n = x.dim(1) * x.dim(2);
  const Tensor xm = reshape(x, {channels, n});
  const Tensor ym = reshape(y, {channels, n});
  const double normalizer = static_cast<double>(channels);
  return {scale(matmul(transpose(xm), ym), 1.0 / normalizer), normalizer};
}

Tensor column_softmax(const Tensor& z) {
  require_rank(z, 2, "column_softmax");
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  Tensor out(z.shape());
  for (std::size_t j = 0; j < cols; ++j) {
    double peak = z.at(0, j);
    for (std::size_t i = 1; i < rows; ++i) peak = std::max(peak, z.at(i, j));
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      out.at(i, j) = std::exp(z.at(i, j) - peak);
      total += out.at(i, j);
    }
    for (std::size_t i = 0; i < rows; ++i) out.at(i, j) /= total;
  }
  return out;
}

Tensor column_softmax_backward(const Tensor& z, const Tensor& upstream) {
  require_same_shape(z, upstream, "column_softmax_backward");
  const Tensor p = column_softmax(z);
  Tensor grad(z.shape());
  for (std::size_t j = 0; j < z.dim(1); ++j) {
    double inner = 0.0;
    for (std::size_t i = 0; i < z.dim(0); ++i) inner += p.at(i, j) * upstream.at(i, j);
    for (std::size_t i = 0; i < z.dim(0); ++i)
      grad.at(i, j) = p.at(i, j) * (upstream.at(i, j) - inner);
  }
  return grad;
}

ScffForward scff_forward(const Tensor& f_t2w, const Tensor& f_adc, const Tensor& proj_kernels) {
  require_rank(f_t2w, 3, "scff t2w features");
  require_same_shape(f_t2w, f_adc, "scff inputs");
  ScffForward fwd;
  fwd.general_t2w = project_general(f_t2w, proj_kernels);
  fwd.general_adc = project_general(f_adc, proj_kernels);
  fwd.corr = spatial_correlation(fwd.general_t2w, fwd.general_adc);
  fwd.weights_t2w = column_softmax(fwd.corr.z);
  fwd.weights_adc = column_softmax(transpose(fwd.corr.z));

  const std::size_t ch = fwd.general_t2w.dim(0), h = f_t2w.dim(1), w = f_t2w.dim(2);
  const Tensor out_t2w = matmul(reshape(fwd.general_t2w, {ch, h * w}), fwd.weights_t2w);
  const Tensor out_adc = matmul(reshape(fwd.general_adc, {ch, h * w}), fwd.weights_adc);
  fwd.fused = concat_channels(reshape(out_t2w, {ch, h, w}), reshape(out_adc, {ch, h, w}));
  return fwd;
}

ScffGrads scff_backward(const ScffForward& fwd, const Tensor& f_t2w, const Tensor& f_adc,
                        const Tensor& proj_kernels, const Tensor& upstream) {
  require_shape(upstream, fwd.fused.shape(), "scff_backward upstream");
  const std::size_t ch = fwd.general_t2w.dim(0), h = f_t2w.dim(1), w = f_t2w.dim(2);
  const std::size_t n = h * w;
  auto [up_t2w, up_adc] = split_channels(upstream, ch);
  const Tensor g1 = reshape(up_t2w, {ch, n});
  const Tensor g2 = reshape(up_adc, {ch, n});
  const Tensor x = reshape(fwd.general_t2w, {ch, n});
  const Tensor y = reshape(fwd.general_adc, {ch, n});

  // out_t2w = x * W1, out_adc = y * W2
  const auto d1 = matmul_backward(x, fwd.weights_t2w, g1);
  const auto d2 = matmul_backward(y, fwd.weights_adc, g2);

  // W1 = colsoftmax(Z), W2 = colsoftmax(Z^T)
  Tensor grad_z = column_softmax_backward(fwd.corr.z, d1.b);
  grad_z = add(grad_z, transpose(column_softmax_backward(transpose(fwd.corr.z), d2.b)));

  // Z = x^T y / T
  const double inv_t = 1.0 / fwd.corr.normalizer;
  Tensor grad_x = add(d1.a, scale(matmul(y, transpose(grad_z)), inv_t));
  Tensor grad_y = add(d2.a, scale(matmul(x, grad_z), inv_t));

  const auto p1 = conv2d_backward(f_t2w, proj_kernels, reshape(grad_x, {ch, h, w}), 1, 0);
  const auto p2 = conv2d_backward(f_adc, proj_kernels, reshape(grad_y, {ch, h, w}), 1, 0);
  return {p1.input, p2.input, add(p1.kernels, p2.kernels)};
}

}  // namespace csad

#include "csad/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace csad::verify {

Tensor numeric_grad(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ParameterError("numeric_grad: eps must be > 0");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NonFiniteError("numeric_grad: non-finite function value at coordinate " +
                           std::to_string(i));
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

GradCheckReport compare_gradients(std::string op_name, const Tensor& analytic,
                                  const Tensor& numeric, double threshold) {
  if (analytic.shape() != numeric.shape())
    throw ShapeError("compare_gradients(" + op_name + "): analytic " +
                     shape_to_string(analytic.shape()) + " vs numeric " +
                     shape_to_string(numeric.shape()));
  GradCheckReport r{std::move(op_name), 0.0, 0, threshold, true, 1};
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double e = relative_error(analytic[i], numeric[i]);
    if (e > r.max_rel_error || std::isnan(e)) {
      r.max_rel_error = e;
      r.worst_index = i;
    }
  }
  r.pass = r.max_rel_error < threshold;
  return r;
}

void merge_report(GradCheckReport& acc, const GradCheckReport& next) {
  if (acc.instances == 0) {
    acc = next;
    return;
  }
  if (next.max_rel_error > acc.max_rel_error || std::isnan(next.max_rel_error)) {
    acc.max_rel_error = next.max_rel_error;
    acc.worst_index = next.worst_index;
  }
  acc.instances += next.instances;
  acc.pass = acc.max_rel_error < acc.threshold;
}

std::string format_report(const GradCheckReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-4s %-28s max_rel_error=%.3e worst_index=%zu threshold=%.0e instances=%zu",
                r.pass ? "PASS" : "FAIL", r.op_name.c_str(), r.max_rel_error, r.worst_index,
                r.threshold, r.instances);
  return buf;
}

Tensor brute_conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
                    std::size_t padding) {
  if (input.rank() != 3 || kernels.rank() != 4 || kernels.dim(1) != input.dim(0))
    throw ShapeError("brute_conv2d: incompatible shapes " + shape_to_string(input.shape()) +
                     " and " + shape_to_string(kernels.shape()));
  if (stride == 0) throw ParameterError("brute_conv2d: stride must be >= 1");
  const long c_in = static_cast<long>(input.dim(0));
  const long h = static_cast<long>(input.dim(1));
  const long w = static_cast<long>(input.dim(2));
  const long c_out = static_cast<long>(kernels.dim(0));
  const long kh = static_cast<long>(kernels.dim(2));
  const long kw = static_cast<long>(kernels.dim(3));
  const long pad = static_cast<long>(padding);
  const long s = static_cast<long>(stride);
  if (kh > h + 2 * pad || kw > w + 2 * pad) throw ShapeError("brute_conv2d: kernel too large");
  const long oh = (h + 2 * pad - kh) / s + 1;
  const long ow = (w + 2 * pad - kw) / s + 1;
  const auto& in = input.values();
  const auto& k = kernels.values();
  std::vector<double> out(static_cast<std::size_t>(c_out * oh * ow));
  for (long co = 0; co < c_out; ++co)
    for (long oy = 0; oy < oh; ++oy)
      for (long ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (long ci = 0; ci < c_in; ++ci)
          for (long ky = 0; ky < kh; ++ky)
            for (long kx = 0; kx < kw; ++kx) {
              const long iy = oy * s + ky - pad;
              const long ix = ox * s + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += in[static_cast<std::size_t>((ci * h + iy) * w + ix)] *
                     k[static_cast<std::size_t>(((co * c_in + ci) * kh + ky) * kw + kx)];
            }
        out[static_cast<std::size_t>((co * oh + oy) * ow + ox)] = acc;
      }
  return Tensor({static_cast<std::size_t>(c_out), static_cast<std::size_t>(oh),
                 static_cast<std::size_t>(ow)},
                std::move(out));
}

Tensor brute_correlation(const Tensor& x, const Tensor& y) {
  if (x.rank() != 3 || x.shape() != y.shape())
    throw ShapeError("brute_correlation: shape mismatch " + shape_to_string(x.shape()) + " vs " +
                     shape_to_string(y.shape()));
  const std::size_t channels = x.dim(0), n = x.dim(1) * x.dim(2);
  const auto& xv = x.values();
  const auto& yv = y.values();
  std::vector<double> z(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < channels; ++c) acc += xv[c * n + i] * yv[c * n + j];
      z[i * n + j] = acc / static_cast<double>(channels);
    }
  return Tensor({n, n}, std::move(z));
}

Confusion brute_confusion(const SegMask& pred, const SegMask& truth) {
  if (pred.height() != truth.height() || pred.width() != truth.width())
    throw ShapeError("brute_confusion: mask dimensions differ");
  Confusion c;
  for (std::size_t y = 0; y < pred.height(); ++y)
    for (std::size_t x = 0; x < pred.width(); ++x) {
      const bool p = pred(y, x) == 1;
      const bool t = truth(y, x) == 1;
      if (p && t) ++c.tp;
      else if (p) ++c.fp;
      else if (t) ++c.fn;
      else ++c.tn;
    }
  return c;
}

SampleMetrics brute_metrics(const SegMask& pred, const SegMask& truth) {
  const Confusion c = brute_confusion(pred, truth);
  const double tp = static_cast<double>(c.tp);
  const double fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn);
  const std::size_t a = c.tp + c.fp;  // predicted
  const std::size_t b = c.tp + c.fn;  // truth
  const std::size_t u = c.tp + c.fp + c.fn;
  SampleMetrics m;
  m.dice = a + b == 0 ? 100.0 : 200.0 * tp / ((tp + fp) + (tp + fn));
  m.voe = u == 0 ? 0.0 : 100.0 * (1.0 - tp / static_cast<double>(u));
  m.rvd = a == 0 ? (b == 0 ? 0.0 : 100.0) : 100.0 * ((tp + fn) - (tp + fp)) / (tp + fp);
  m.sensitivity = b == 0 ? (a == 0 ? 100.0 : 0.0) : 100.0 * tp / (tp + fn);
  m.precision = a == 0 ? (b == 0 ? 100.0 : 0.0) : 100.0 * tp / (tp + fp);
  return m;
}

}  // namespace csad::verify

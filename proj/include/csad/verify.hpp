#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csad/objectives.hpp"
#include "csad/tensor.hpp"

// Independent reference implementations. Nothing in this module calls the
// mainline kernels it is used to check.
namespace csad::verify {

using ScalarFn = std::function<double(const Tensor&)>;

/// Raised when the function under differentiation returns a non-finite value.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Central differences, one coordinate at a time.
Tensor numeric_grad(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

/// |a-b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double threshold = 1e-4;
  bool pass = true;
  std::size_t instances = 0;
};

GradCheckReport compare_gradients(std::string op_name, const Tensor& analytic,
                                  const Tensor& numeric, double threshold);

/// Folds `next` into `acc`, keeping the worst instance.
void merge_report(GradCheckReport& acc, const GradCheckReport& next);

std::string format_report(const GradCheckReport& r);

/// Quadruple loop: out[co][oy][ox] = sum over (ci, ky, kx) of in * k, padding skipped.
Tensor brute_conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
                    std::size_t padding);

/// z[i][j] = (1/C) sum_c x[c][i] y[c][j] over flattened positions, computed by double loop.
Tensor brute_correlation(const Tensor& x, const Tensor& y);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion brute_confusion(const SegMask& pred, const SegMask& truth);

/// Metric 5-tuple from confusion counts, with the same empty-mask conventions
/// as `csad::evaluate`.
SampleMetrics brute_metrics(const SegMask& pred, const SegMask& truth);

struct SuiteOptions {
  double threshold = 1e-4;
  double network_threshold = 1e-3;
  std::size_t instances = 50;
  std::uint64_t seed = 2024;
  double eps = 1e-5;
  // The network loss sums thousands of terms, so rounding dominates at the
  // default step; a larger one still stays inside the 1e-3 kink margin.
  double network_eps = 3e-5;
};

/// Gradient checks for every differentiable operation plus the tiny end-to-end network.
std::vector<GradCheckReport> run_gradcheck_suite(const SuiteOptions& opts);

}  // namespace csad::verify

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "csad/tensor.hpp"

namespace csad {

/// Binary ground-truth grid; every cell is exactly 0 or 1.
class SegMask {
 public:
  SegMask() = default;
  SegMask(std::size_t height, std::size_t width);
  SegMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> cells);

  /// Accepts a rank-2 (or [1,H,W]) tensor whose entries are exactly 0.0 or 1.0.
  static SegMask from_tensor(const Tensor& t);
  Tensor to_tensor() const;

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return cells_.size(); }
  std::size_t count() const;

  std::uint8_t operator()(std::size_t y, std::size_t x) const { return cells_[y * width_ + x]; }
  std::uint8_t& operator()(std::size_t y, std::size_t x) { return cells_[y * width_ + x]; }
  const std::vector<std::uint8_t>& cells() const { return cells_; }

  friend bool operator==(const SegMask&, const SegMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> cells_;
};

/// Predicted foreground probabilities, a [H,W] tensor with values in [0,1].
class SegProb {
 public:
  explicit SegProb(Tensor grid);
  const Tensor& grid() const { return grid_; }
  std::size_t height() const { return grid_.dim(0); }
  std::size_t width() const { return grid_.dim(1); }

 private:
  Tensor grid_;
};

struct LossConfig {
  double alpha = 1.0;    // weight on the attention-distillation term
  double beta = 0.1;     // weight on WBCE
  double sigma = 1.0;    // Dice smoothing
  double lambda = 0.95;  // WBCE foreground weight

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  Tensor grad;  // d value / d pred, shaped like pred
};

/// Soft Dice loss, 1 - (2 sum(p*y) + sigma) / (sum(p) + sum(y) + sigma).
LossValue dice_loss(const SegProb& pred, const SegMask& truth, double sigma);

/// Pixel-mean weighted BCE; pred is clamped to [1e-7, 1-1e-7] and clamped
/// entries receive zero gradient.
LossValue wbce_loss(const SegProb& pred, const SegMask& truth, double lambda);

/// Gradient of wbce_loss w.r.t. the logits z, with pred = sigmoid(z), taken
/// in closed form: (-lambda*y*(1-p) + (1-lambda)*(1-y)*p) / N. Unlike chaining
/// through the clamped probability, saturated outputs keep a restoring push.
Tensor wbce_logit_grad(const SegProb& pred, const SegMask& truth, double lambda);

struct LossBreakdown {
  double dice = 0.0;
  double wbce = 0.0;
  double csad = 0.0;
  double total = 0.0;
};

/// Combines precomputed components: dice + beta*wbce + alpha*csad.
LossBreakdown combine_losses(double dice, double wbce, double csad, const LossConfig& cfg);
LossBreakdown total_loss(const SegProb& pred, const SegMask& truth, double l_csad_value,
                         const LossConfig& cfg);

SegMask threshold_mask(const SegProb& pred, double threshold);

/// Per-sample scores, all in percent.
struct SampleMetrics {
  double dice = 0.0;
  double sensitivity = 0.0;
  double precision = 0.0;
  double voe = 0.0;
  double rvd = 0.0;

  friend bool operator==(const SampleMetrics&, const SampleMetrics&) = default;
};

/// A = prediction, B = ground truth. Degenerate denominators:
///   both empty             -> Dice 100, VOE 0, RVD 0, Sensitivity 100, Precision 100
///   prediction empty only  -> RVD +100, Precision 0
///   truth empty only       -> Sensitivity 0
SampleMetrics evaluate(const SegMask& pred, const SegMask& truth);

struct MetricsReport {
  std::vector<SampleMetrics> per_sample;
  SampleMetrics mean;
  SampleMetrics stddev;  // sample standard deviation (n-1); 0 for a single sample
};

/// Reduces in input order so the result is independent of how samples were produced.
MetricsReport aggregate(std::vector<SampleMetrics> per_sample);

/// Key/value text form: a [summary] section with "metric = mean ± std" lines and a
/// [samples] section with one record per image.
void write_report(std::ostream& out, const MetricsReport& report);
MetricsReport read_report(std::istream& in);

/// "58.2 ± 1.0"
std::string format_mean_std(double mean, double stddev, int decimals = 1);

}  // namespace csad

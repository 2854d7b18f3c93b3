#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "csad/tensor.hpp"

namespace csad {

/// Nonnegative [H,W] map whose entries sum to 1.
class AttentionMap {
 public:
  /// Validates rank, nonnegativity and unit mass (within 1e-9).
  explicit AttentionMap(Tensor map);

  const Tensor& map() const { return map_; }
  std::size_t height() const { return map_.dim(0); }
  std::size_t width() const { return map_.dim(1); }

 private:
  Tensor map_;
};

/// Attention map of one feature tensor: bilinear resize to the target size,
/// sum of squared activations over channels, then spatial softmax.
AttentionMap amgb(const Tensor& features, std::size_t target_h, std::size_t target_w);

/// Gradient of a scalar w.r.t. `features` given its gradient w.r.t. the map.
Tensor amgb_backward(const Tensor& features, std::size_t target_h, std::size_t target_w,
                     const Tensor& upstream);

/// Symmetric pixelwise KL divergence averaged as 1/(2WH) * sum(a ln a/b + b ln b/a).
/// Arguments of the logarithm are clamped to >= 1e-12.
double l_ad(const AttentionMap& a, const AttentionMap& b);

struct AdGrads {
  double value = 0.0;
  Tensor grad_a;
  Tensor grad_b;
};
AdGrads l_ad_with_grad(const AttentionMap& a, const AttentionMap& b);

enum class Modality { T2W, ADC };

/// None, position-wise (m -> m) or interlaced (m -> m+1) layer connection.
enum class Scheme { NLC, PLC, ILC };

std::string_view to_string(Scheme s);
Scheme scheme_from_string(std::string_view s);

/// One directed distillation term: the map at `source_stage` of `source`
/// is aligned with the map at `target_stage` of the other modality.
/// Stages are 0-based.
struct DistillPair {
  Modality source = Modality::T2W;
  std::size_t source_stage = 0;
  std::size_t target_stage = 0;

  friend bool operator==(const DistillPair&, const DistillPair&) = default;
};

struct DistillPlan {
  Scheme scheme = Scheme::NLC;
  std::size_t n_blocks = 0;
  std::vector<DistillPair> pairs;
};

DistillPlan build_distill_plan(Scheme scheme, std::size_t n_blocks);

/// Which ends of a directed pair receive distillation gradients. With
/// `student_only`, the source map is treated as a constant teacher.
enum class DistillGradient { Both, StudentOnly };

std::string_view to_string(DistillGradient g);
DistillGradient distill_gradient_from_string(std::string_view s);

struct CsadLoss {
  double value = 0.0;
  std::size_t terms = 0;            // number of l_ad terms summed
  std::vector<Tensor> grad_t2w;     // d value / d map, per stage
  std::vector<Tensor> grad_adc;
};

/// Sum of l_ad over the plan's directed pairs.
CsadLoss l_csad(const std::vector<AttentionMap>& maps_t2w,
                const std::vector<AttentionMap>& maps_adc, const DistillPlan& plan,
                DistillGradient mode = DistillGradient::Both);

}  // namespace csad

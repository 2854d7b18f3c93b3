#pragma once

#include "csad/tensor.hpp"

namespace csad {

/// Pairwise position similarity z[i][j] = <x_i, y_j> / normalizer, shape [HW, HW].
struct CorrelationMatrix {
  Tensor z;
  double normalizer = 1.0;
};

/// Shared 1x1 projection [C~,C,1,1] applied to a [C,H,W] feature map.
Tensor project_general(const Tensor& features, const Tensor& proj_kernels);

/// Correlation between two projected maps of identical shape; normalizer = channel count.
CorrelationMatrix spatial_correlation(const Tensor& x, const Tensor& y);

/// Softmax down each column of a matrix, so every column sums to 1.
Tensor column_softmax(const Tensor& z);
Tensor column_softmax_backward(const Tensor& z, const Tensor& upstream);

/// Intermediate values of one fusion pass, kept for the backward pass and for export.
///
/// The T2W half re-weights T2W positions with `weights_t2w = column_softmax(Z)`:
/// output position j is a convex combination of T2W positions i weighted by
/// their similarity to ADC position j. The ADC half is the mirror image using
/// `weights_adc = column_softmax(Z^T)`, so swapping the two inputs swaps the
/// output halves exactly.
struct ScffForward {
  Tensor general_t2w;  // [C~,H,W]
  Tensor general_adc;
  CorrelationMatrix corr;
  Tensor weights_t2w;  // [HW,HW], columns sum to 1
  Tensor weights_adc;
  Tensor fused;        // [2C~,H,W]
};

ScffForward scff_forward(const Tensor& f_t2w, const Tensor& f_adc, const Tensor& proj_kernels);

inline Tensor scff_fuse(const Tensor& f_t2w, const Tensor& f_adc, const Tensor& proj_kernels) {
  return scff_forward(f_t2w, f_adc, proj_kernels).fused;
}

struct ScffGrads {
  Tensor t2w;
  Tensor adc;
  Tensor proj;
};

ScffGrads scff_backward(const ScffForward& fwd, const Tensor& f_t2w, const Tensor& f_adc,
                        const Tensor& proj_kernels, const Tensor& upstream);

}  // namespace csad

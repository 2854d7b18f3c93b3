#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "csad/attention.hpp"
#include "csad/objectives.hpp"
#include "csad/scff.hpp"
#include "csad/synth.hpp"
#include "csad/tensor.hpp"

namespace csad {

/// Raised when a loss component or parameter update becomes non-finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How the two final encoder features are merged before decoding.
enum class Fusion { SCFF, Concat };

std::string_view to_string(Fusion f);
Fusion fusion_from_string(std::string_view s);

struct NetConfig {
  std::size_t input_h = 64;
  std::size_t input_w = 64;
  std::size_t stages = 5;
  std::size_t base_channels = 8;
  /// Width of the shared SCFF projection; 0 selects half the bottleneck width.
  std::size_t proj_channels = 0;
  Scheme scheme = Scheme::ILC;
  Fusion fusion = Fusion::SCFF;
  DistillGradient distill_gradient = DistillGradient::Both;
  double threshold = 0.5;

  void validate() const;

  /// Encoder width at stage m (0-based): base * 2^m.
  std::size_t stage_channels(std::size_t m) const { return base_channels << m; }
  std::size_t bottleneck_channels() const { return stage_channels(stages - 1); }
  std::size_t projection_channels() const;
  std::size_t fused_channels() const;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 2;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;
  bool augment = false;
  LossConfig loss;

  void validate() const;
};

using ParamMap = std::map<std::string, Tensor>;

/// Every learnable tensor, keyed by a stable dotted name.
struct ModelState {
  NetConfig config;
  ParamMap params;

  const Tensor& param(const std::string& name) const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  friend bool operator==(const ModelState& a, const ModelState& b) {
    return a.params == b.params;
  }
};

/// Gain on the SCFF projection's init bound. At unit gain the correlation
/// logits are so small that every softmax column is near uniform and the
/// fused map carries no spatial structure.
inline constexpr double kProjInitGain = 3.0;

/// Fan-in scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero.
/// The SCFF projection bound is scaled by kProjInitGain; the 1x1 head starts
/// at zero so the first prediction is 0.5 everywhere.
/// Each parameter draws from its own PCG32 stream derived from its name.
ModelState init_model(const NetConfig& config, std::uint64_t seed);

/// Per-image z-score (sample std); the network applies it to both inputs
/// before the encoders. A constant image maps to zeros.
Tensor standardize_image(const Tensor& image);

struct ConvBlockCache {
  Tensor input;
  Tensor pre1, act1;
  Tensor pre2, act2;  // act2 is the stage feature map fed to the AMGB
};

struct DecoderCache {
  Tensor input;
  Tensor upsampled;
  Tensor pre, act;
};

struct ForwardCache {
  std::vector<ConvBlockCache> enc_t2w, enc_adc;
  std::optional<ScffForward> scff;
  Tensor fused;
  std::vector<DecoderCache> dec;
  Tensor head_input;
  Tensor prob;  // [1,H,W] sigmoid output
};

struct ForwardResult {
  SegProb pred;
  std::vector<AttentionMap> attn_t2w;
  std::vector<AttentionMap> attn_adc;
  ForwardCache cache;
};

/// Two-stream encoder with an AMGB after every stage, fusion of the last
/// stage, decoder back to input resolution and a logistic head.
ForwardResult forward(const ModelState& model, const Tensor& t2w, const Tensor& adc);

SegMask predict_mask(const ModelState& model, const Tensor& t2w, const Tensor& adc,
                     double threshold);

using TrainSample = PhantomSample;

struct SampleGradient {
  ParamMap grads;
  LossBreakdown loss;
  std::size_t csad_terms = 0;
};

/// Total loss of one sample and its gradient w.r.t. every parameter.
SampleGradient loss_and_gradient(const ModelState& model, const TrainSample& sample,
                                 const LossConfig& loss_cfg);

/// Mean gradient over the batch followed by w <- w - lr * g.
/// Returns the batch-mean loss breakdown.
LossBreakdown backward_and_step(ModelState& model, const std::vector<TrainSample>& batch,
                                const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown loss;        // mean over the epoch's samples
  double val_dice = 0.0;     // mean hard Dice (%) on the validation set; NaN if none
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs cfg.epochs passes of shuffled mini-batch SGD.
void train(ModelState& model, const std::vector<TrainSample>& train_set,
           const std::vector<TrainSample>& val_set, const TrainConfig& cfg,
           const EpochCallback& on_epoch = {});

/// Mean hard Dice (%) of thresholded predictions.
double mean_dice(const ModelState& model, const std::vector<TrainSample>& samples);

MetricsReport evaluate_model(const ModelState& model, const std::vector<TrainSample>& samples);

}  // namespace csad

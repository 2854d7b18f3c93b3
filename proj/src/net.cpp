#include "csad/net.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "csad/rng.hpp"

namespace csad {

std::string_view to_string(Fusion f) { return f == Fusion::SCFF ? "scff" : "concat"; }

Fusion fusion_from_string(std::string_view s) {
  if (s == "scff") return Fusion::SCFF;
  if (s == "concat") return Fusion::Concat;
  throw ParameterError("unknown fusion '" + std::string(s) + "' (expected scff or concat)");
}

void NetConfig::validate() const {
  if (stages < 2) throw ParameterError("net.stages must be >= 2");
  if (stages > 16) throw ParameterError("net.stages must be <= 16");
  if (base_channels < 1) throw ParameterError("net.base_channels must be >= 1");
  const std::size_t div = std::size_t{1} << (stages - 1);
  if (input_h == 0 || input_w == 0 || input_h % div != 0 || input_w % div != 0)
    throw ParameterError("net.input_size must be positive and divisible by 2^(stages-1) = " +
                         std::to_string(div));
  if (fusion == Fusion::SCFF && projection_channels() == 0)
    throw ParameterError("net.proj_channels resolves to 0; set it explicitly");
  if (!(threshold >= 0.0)) throw ParameterError("net.threshold must be >= 0");
}

std::size_t NetConfig::projection_channels() const {
  return proj_channels != 0 ? proj_channels : bottleneck_channels() / 2;
}

std::size_t NetConfig::fused_channels() const {
  return fusion == Fusion::SCFF ? 2 * projection_channels() : 2 * bottleneck_channels();
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ParameterError("train.epochs must be >= 1");
  if (batch_size < 1) throw ParameterError("train.batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ParameterError("train.learning_rate must be finite and >= 0");
  loss.validate();
}

const Tensor& ModelState::param(const std::string& name) const {
  const auto it = params.find(name);
  if (it == params.end()) throw ParameterError("model has no parameter '" + name + "'");
  return it->second;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

bool ModelState::all_finite() const {
  for (const auto& [_, t] : params)
    if (!t.all_finite()) return false;
  return true;
}

namespace {

const char* stream_name(Modality m) { return m == Modality::T2W ? "t2w" : "adc"; }

std::string enc_name(Modality m, std::size_t stage, const char* leaf) {
  return std::string("enc.") + stream_name(m) + ".s" + std::to_string(stage) + "." + leaf;
}

std::string dec_name(std::size_t block, const char* leaf) {
  return "dec.b" + std::to_string(block) + "." + leaf;
}

Tensor uniform_kernels(const std::string& name, std::uint64_t seed, Shape shape,
                       double gain = 1.0) {
  const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
  const double bound = gain * std::sqrt(6.0 / fan_in);
  Pcg32 rng(seed, fnv1a64(name));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

void add_conv(ParamMap& params, const std::string& prefix, std::uint64_t seed, std::size_t out,
              std::size_t in, std::size_t k) {
  params.emplace(prefix + ".w", uniform_kernels(prefix + ".w", seed, {out, in, k, k}));
  params.emplace(prefix + ".b", Tensor({out}));
}

// Input channel count of decoder block b.
std::size_t decoder_in(const NetConfig& c, std::size_t b) {
  return b == 0 ? c.fused_channels() : c.stage_channels(c.stages - 1 - b);
}
std::size_t decoder_out(const NetConfig& c, std::size_t b) {
  return c.stage_channels(c.stages - 2 - b);
}

}  // namespace

ModelState init_model(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState model{config, {}};
  for (Modality m : {Modality::T2W, Modality::ADC}) {
    for (std::size_t s = 0; s < config.stages; ++s) {
      const std::size_t in = s == 0 ? 1 : config.stage_channels(s - 1);
      const std::size_t out = config.stage_channels(s);
      const std::string prefix = enc_name(m, s, "");
      add_conv(model.params, prefix + "conv1", seed, out, in, 3);
      add_conv(model.params, prefix + "conv2", seed, out, out, 3);
    }
  }
  if (config.fusion == Fusion::SCFF)
    model.params.emplace("scff.proj.w",
                         uniform_kernels("scff.proj.w", seed,
                                         {config.projection_channels(),
                                          config.bottleneck_channels(), 1, 1},
                                         kProjInitGain));
  for (std::size_t b = 0; b + 1 < config.stages; ++b)
    add_conv(model.params, "dec.b" + std::to_string(b) + ".conv", seed, decoder_out(config, b),
             decoder_in(config, b), 3);
  model.params.emplace("head.w", Tensor({1, config.stage_channels(0), 1, 1}));
  model.params.emplace("head.b", Tensor({1}));
  return model;
}

Tensor standardize_image(const Tensor& image) {
  const std::size_t n = image.size();
  if (n == 0) return image;
  double mean = 0.0;
  for (double v : image.data()) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : image.data()) ss += (v - mean) * (v - mean);
  const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  const double inv = sd > 1e-12 ? 1.0 / sd : 0.0;
  Tensor out(image.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = (image[i] - mean) * inv;
  return out;
}

namespace {

ConvBlockCache encoder_stage(const ModelState& model, Modality m, std::size_t stage,
                             Tensor input) {
  ConvBlockCache c;
  c.input = std::move(input);
  c.pre1 = add_channel_bias(conv2d(c.input, model.param(enc_name(m, stage, "conv1.w")), 1, 1),
                            model.param(enc_name(m, stage, "conv1.b")));
  c.act1 = relu(c.pre1);
  c.pre2 = add_channel_bias(conv2d(c.act1, model.param(enc_name(m, stage, "conv2.w")), 1, 1),
                            model.param(enc_name(m, stage, "conv2.b")));
  c.act2 = relu(c.pre2);
  return c;
}

std::vector<ConvBlockCache> run_encoder(const ModelState& model, Modality m, const Tensor& image) {
  std::vector<ConvBlockCache> stages;
  stages.reserve(model.config.stages);
  for (std::size_t s = 0; s < model.config.stages; ++s) {
    Tensor input = s == 0 ? image : maxpool2x2(stages.back().act2);
    stages.push_back(encoder_stage(model, m, s, std::move(input)));
  }
  return stages;
}

void check_image(const Tensor& t, const NetConfig& c, const char* what) {
  require_shape(t, {1, c.input_h, c.input_w}, what);
}

}  // namespace

ForwardResult forward(const ModelState& model, const Tensor& t2w, const Tensor& adc) {
  const NetConfig& cfg = model.config;
  check_image(t2w, cfg, "forward t2w");
  check_image(adc, cfg, "forward adc");

  ForwardCache cache;
  cache.enc_t2w = run_encoder(model, Modality::T2W, standardize_image(t2w));
  cache.enc_adc = run_encoder(model, Modality::ADC, standardize_image(adc));

  std::vector<AttentionMap> attn_t2w, attn_adc;
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    attn_t2w.push_back(amgb(cache.enc_t2w[s].act2, cfg.input_h, cfg.input_w));
    attn_adc.push_back(amgb(cache.enc_adc[s].act2, cfg.input_h, cfg.input_w));
  }

  const Tensor& last_t2w = cache.enc_t2w.back().act2;
  const Tensor& last_adc = cache.enc_adc.back().act2;
  if (cfg.fusion == Fusion::SCFF) {
    cache.scff = scff_forward(last_t2w, last_adc, model.param("scff.proj.w"));
    cache.fused = cache.scff->fused;
  } else {
    cache.fused = concat_channels(last_t2w, last_adc);
  }

  Tensor x = cache.fused;
  for (std::size_t b = 0; b + 1 < cfg.stages; ++b) {
    DecoderCache d;
    d.input = std::move(x);
    d.upsampled = bilinear_upsample(d.input, 2 * d.input.dim(1), 2 * d.input.dim(2));
    d.pre = add_channel_bias(conv2d(d.upsampled, model.param(dec_name(b, "conv.w")), 1, 1),
                             model.param(dec_name(b, "conv.b")));
    d.act = relu(d.pre);
    x = d.act;
    cache.dec.push_back(std::move(d));
  }
  cache.head_input = std::move(x);
  const Tensor logits = add_channel_bias(conv2d(cache.head_input, model.param("head.w"), 1, 0),
                                         model.param("head.b"));
  cache.prob = sigmoid(logits);
  SegProb pred(reshape(cache.prob, {cfg.input_h, cfg.input_w}));
  return {std::move(pred), std::move(attn_t2w), std::move(attn_adc), std::move(cache)};
}

SegMask predict_mask(const ModelState& model, const Tensor& t2w, const Tensor& adc,
                     double threshold) {
  return threshold_mask(forward(model, t2w, adc).pred, threshold);
}

namespace {

void accumulate(ParamMap& grads, const std::string& name, Tensor g) {
  auto [it, inserted] = grads.try_emplace(name, std::move(g));
  if (!inserted) it->second = add(it->second, g);
}

void require_finite(double v, const char* component) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite loss component '") + component + "' (" +
                       std::to_string(v) + ")");
}

// Backpropagates through one stream's encoder. `grad_features[s]` holds the
// gradient arriving at stage s's output from outside the encoder (AMGB, fusion).
void encoder_backward(const ModelState& model, Modality m,
                      const std::vector<ConvBlockCache>& stages,
                      std::vector<Tensor> grad_features, ParamMap& grads) {
  Tensor grad_act2 = std::move(grad_features.back());
  for (std::size_t s = stages.size(); s-- > 0;) {
    const ConvBlockCache& c = stages[s];
    const Tensor g_pre2 = relu_backward(c.pre2, grad_act2);
    auto conv2 = conv2d_backward(c.act1, model.param(enc_name(m, s, "conv2.w")), g_pre2, 1, 1);
    accumulate(grads, enc_name(m, s, "conv2.w"), std::move(conv2.kernels));
    accumulate(grads, enc_name(m, s, "conv2.b"), channel_bias_backward(g_pre2));
    const Tensor g_pre1 = relu_backward(c.pre1, conv2.input);
    auto conv1 = conv2d_backward(c.input, model.param(enc_name(m, s, "conv1.w")), g_pre1, 1, 1);
    accumulate(grads, enc_name(m, s, "conv1.w"), std::move(conv1.kernels));
    accumulate(grads, enc_name(m, s, "conv1.b"), channel_bias_backward(g_pre1));
    if (s > 0) {
      grad_act2 = maxpool2x2_backward(stages[s - 1].act2, conv1.input);
      if (!grad_features[s - 1].empty()) grad_act2 = add(grad_act2, grad_features[s - 1]);
    }
  }
}

}  // namespace

SampleGradient loss_and_gradient(const ModelState& model, const TrainSample& sample,
                                 const LossConfig& loss_cfg) {
  const NetConfig& cfg = model.config;
  ForwardResult fwd = forward(model, sample.t2w, sample.adc);
  const ForwardCache& cache = fwd.cache;

  const LossValue dice = dice_loss(fwd.pred, sample.mask, loss_cfg.sigma);
  const LossValue wbce = wbce_loss(fwd.pred, sample.mask, loss_cfg.lambda);
  const DistillPlan plan = build_distill_plan(cfg.scheme, cfg.stages);
  const CsadLoss csad = l_csad(fwd.attn_t2w, fwd.attn_adc, plan, cfg.distill_gradient);
  require_finite(dice.value, "dice");
  require_finite(wbce.value, "wbce");
  require_finite(csad.value, "csad");

  SampleGradient out;
  out.loss = combine_losses(dice.value, wbce.value, csad.value, loss_cfg);
  require_finite(out.loss.total, "total");
  out.csad_terms = csad.terms;

  // Head: prob = sigmoid(conv1x1(head_input) + b). WBCE enters in logit form.
  const Tensor g_dice = sigmoid_backward(cache.prob, reshape(dice.grad, cache.prob.shape()));
  const Tensor g_wbce = wbce_logit_grad(fwd.pred, sample.mask, loss_cfg.lambda);
  const Tensor g_logits = add(g_dice, scale(reshape(g_wbce, g_dice.shape()), loss_cfg.beta));
  auto head = conv2d_backward(cache.head_input, model.param("head.w"), g_logits, 1, 0);
  accumulate(out.grads, "head.w", std::move(head.kernels));
  accumulate(out.grads, "head.b", channel_bias_backward(g_logits));

  Tensor g = std::move(head.input);
  for (std::size_t b = cache.dec.size(); b-- > 0;) {
    const DecoderCache& d = cache.dec[b];
    const Tensor g_pre = relu_backward(d.pre, g);
    auto conv = conv2d_backward(d.upsampled, model.param(dec_name(b, "conv.w")), g_pre, 1, 1);
    accumulate(out.grads, dec_name(b, "conv.w"), std::move(conv.kernels));
    accumulate(out.grads, dec_name(b, "conv.b"), channel_bias_backward(g_pre));
    g = bilinear_upsample_backward(conv.input, d.input.dim(1), d.input.dim(2));
  }

  const std::size_t stages = cfg.stages;
  std::vector<Tensor> g_t2w(stages), g_adc(stages);
  const Tensor& last_t2w = cache.enc_t2w.back().act2;
  const Tensor& last_adc = cache.enc_adc.back().act2;
  if (cfg.fusion == Fusion::SCFF) {
    auto sg = scff_backward(*cache.scff, last_t2w, last_adc, model.param("scff.proj.w"), g);
    accumulate(out.grads, "scff.proj.w", std::move(sg.proj));
    g_t2w.back() = std::move(sg.t2w);
    g_adc.back() = std::move(sg.adc);
  } else {
    auto [a, b] = split_channels(g, last_t2w.dim(0));
    g_t2w.back() = std::move(a);
    g_adc.back() = std::move(b);
  }

  if (csad.terms > 0 && loss_cfg.alpha != 0.0) {
    for (std::size_t s = 0; s < stages; ++s) {
      const auto add_distill = [&](std::vector<Tensor>& dst, const Tensor& feats,
                                   const Tensor& map_grad) {
        Tensor gf = amgb_backward(feats, cfg.input_h, cfg.input_w, scale(map_grad, loss_cfg.alpha));
        dst[s] = dst[s].empty() ? std::move(gf) : add(dst[s], gf);
      };
      add_distill(g_t2w, cache.enc_t2w[s].act2, csad.grad_t2w[s]);
      add_distill(g_adc, cache.enc_adc[s].act2, csad.grad_adc[s]);
    }
  }

  encoder_backward(model, Modality::T2W, cache.enc_t2w, std::move(g_t2w), out.grads);
  encoder_backward(model, Modality::ADC, cache.enc_adc, std::move(g_adc), out.grads);
  return out;
}

LossBreakdown backward_and_step(ModelState& model, const std::vector<TrainSample>& batch,
                                const TrainConfig& cfg) {
  if (batch.empty()) throw ParameterError("backward_and_step: empty batch");
  ParamMap sum;
  LossBreakdown mean;
  for (const auto& sample : batch) {
    SampleGradient sg = loss_and_gradient(model, sample, cfg.loss);
    for (auto& [name, g] : sg.grads) accumulate(sum, name, std::move(g));
    mean.dice += sg.loss.dice;
    mean.wbce += sg.loss.wbce;
    mean.csad += sg.loss.csad;
    mean.total += sg.loss.total;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  mean.dice *= inv;
  mean.wbce *= inv;
  mean.csad *= inv;
  mean.total *= inv;

  for (auto& [name, w] : model.params) {
    const auto it = sum.find(name);
    if (it == sum.end()) continue;
    const Tensor& g = it->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double step = cfg.learning_rate * (g[i] * inv);
      if (!std::isfinite(step))
        throw NumericError("non-finite gradient for parameter '" + name + "'");
      w[i] -= step;
    }
  }
  return mean;
}

double mean_dice(const ModelState& model, const std::vector<TrainSample>& samples) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const auto& s : samples)
    total += evaluate(predict_mask(model, s.t2w, s.adc, model.config.threshold), s.mask).dice;
  return total / static_cast<double>(samples.size());
}

MetricsReport evaluate_model(const ModelState& model, const std::vector<TrainSample>& samples) {
  std::vector<SampleMetrics> per_sample;
  per_sample.reserve(samples.size());
  for (const auto& s : samples)
    per_sample.push_back(
        evaluate(predict_mask(model, s.t2w, s.adc, model.config.threshold), s.mask));
  return aggregate(std::move(per_sample));
}

void train(ModelState& model, const std::vector<TrainSample>& train_set,
           const std::vector<TrainSample>& val_set, const TrainConfig& cfg,
           const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ParameterError("train: empty training set");
  Pcg32 rng(cfg.seed, rng_stream::kShuffle);
  std::vector<std::size_t> order(train_set.size());
  std::vector<TrainSample> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(static_cast<std::uint32_t>(i))]);

    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t k = start; k < stop; ++k) {
        const TrainSample& s = train_set[order[k]];
        if (cfg.augment) {
          const std::uint64_t aug_seed =
              fnv1a64(std::to_string(cfg.seed) + ":" + std::to_string(epoch) + ":" +
                      std::to_string(order[k]));
          batch.push_back(augment(s, aug_seed));
        } else {
          batch.push_back(s);
        }
      }
      const LossBreakdown l = backward_and_step(model, batch, cfg);
      const double w = static_cast<double>(batch.size());
      rec.loss.dice += l.dice * w;
      rec.loss.wbce += l.wbce * w;
      rec.loss.csad += l.csad * w;
      rec.loss.total += l.total * w;
    }
    const double inv = 1.0 / static_cast<double>(order.size());
    rec.loss.dice *= inv;
    rec.loss.wbce *= inv;
    rec.loss.csad *= inv;
    rec.loss.total *= inv;
    rec.val_dice = mean_dice(model, val_set);
    if (on_epoch) on_epoch(rec);
  }
}

}  // namespace csad

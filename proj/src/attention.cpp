#include "csad/attention.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace csad {

AttentionMap::AttentionMap(Tensor map) : map_(std::move(map)) {
  require_rank(map_, 2, "AttentionMap");
  double total = 0.0;
  for (double v : map_.data()) {
    if (!(v >= 0.0 && v <= 1.0))
      throw ParameterError("AttentionMap: entry " + std::to_string(v) + " outside [0,1]");
    total += v;
  }
  if (std::fabs(total - 1.0) > 1e-9)
    throw ParameterError("AttentionMap: entries sum to " + std::to_string(total) + ", not 1");
}

namespace {

// Source taps of an align_corners=false bilinear resize along one axis.
struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> resize_taps(std::size_t source, std::size_t target) {
  std::vector<Tap> taps(target);
  const double ratio = static_cast<double>(source) / static_cast<double>(target);
  for (std::size_t i = 0; i < target; ++i) {
    const double pos =
        std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(source - 1));
    const auto lo = static_cast<std::size_t>(pos);
    taps[i] = {lo, std::min(lo + 1, source - 1), pos - static_cast<double>(lo)};
  }
  return taps;
}

// Resizes one channel at a time into a reused plane, so deep narrow feature maps
// are never materialised at full resolution. `visit(c, plane)` sees each channel.
template <class Visit>
void for_each_resized(const Tensor& features, std::size_t th, std::size_t tw,
                      const std::vector<Tap>& ty, const std::vector<Tap>& tx, Visit&& visit) {
  const std::size_t h = features.dim(1), w = features.dim(2);
  std::vector<double> plane(th * tw);
  for (std::size_t c = 0; c < features.dim(0); ++c) {
    const double* src = features.data().data() + c * h * w;
    for (std::size_t y = 0; y < th; ++y) {
      const Tap& a = ty[y];
      const double* r0 = src + a.lo * w;
      const double* r1 = src + a.hi * w;
      for (std::size_t x = 0; x < tw; ++x) {
        const Tap& b = tx[x];
        const double top = r0[b.lo] * (1.0 - b.frac) + r0[b.hi] * b.frac;
        const double bot = r1[b.lo] * (1.0 - b.frac) + r1[b.hi] * b.frac;
        plane[y * tw + x] = top * (1.0 - a.frac) + bot * a.frac;
      }
    }
    visit(c, plane);
  }
}

Tensor resized_energy(const Tensor& features, std::size_t th, std::size_t tw,
                      const std::vector<Tap>& ty, const std::vector<Tap>& tx) {
  Tensor energy({th, tw});
  for_each_resized(features, th, tw, ty, tx, [&](std::size_t, const std::vector<double>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) energy[i] += r[i] * r[i];
  });
  return energy;
}

}  // namespace

AttentionMap amgb(const Tensor& features, std::size_t target_h, std::size_t target_w) {
  require_rank(features, 3, "amgb features");
  if (target_h == 0 || target_w == 0) throw ParameterError("amgb: target size must be positive");
  const auto ty = resize_taps(features.dim(1), target_h);
  const auto tx = resize_taps(features.dim(2), target_w);
  return AttentionMap(spatial_softmax(resized_energy(features, target_h, target_w, ty, tx)));
}

Tensor amgb_backward(const Tensor& features, std::size_t target_h, std::size_t target_w,
                     const Tensor& upstream) {
  require_rank(features, 3, "amgb_backward features");
  if (target_h == 0 || target_w == 0)
    throw ParameterError("amgb_backward: target size must be positive");
  require_shape(upstream, {target_h, target_w}, "amgb_backward upstream");
  const auto ty = resize_taps(features.dim(1), target_h);
  const auto tx = resize_taps(features.dim(2), target_w);
  const Tensor grad_energy = spatial_softmax_backward(
      resized_energy(features, target_h, target_w, ty, tx), upstream);
  const std::size_t h = features.dim(1), w = features.dim(2);
  Tensor grad(features.shape());
  for_each_resized(features, target_h, target_w, ty, tx,
                   [&](std::size_t c, const std::vector<double>& r) {
                     double* g = grad.data().data() + c * h * w;
                     for (std::size_t y = 0; y < target_h; ++y) {
                       const Tap& a = ty[y];
                       for (std::size_t x = 0; x < target_w; ++x) {
                         const Tap& b = tx[x];
                         const double d = 2.0 * r[y * target_w + x] * grad_energy.at(y, x);
                         const double top = d * (1.0 - a.frac), bot = d * a.frac;
                         g[a.lo * w + b.lo] += top * (1.0 - b.frac);
                         g[a.lo * w + b.hi] += top * b.frac;
                         g[a.hi * w + b.lo] += bot * (1.0 - b.frac);
                         g[a.hi * w + b.hi] += bot * b.frac;
                       }
                     }
                   });
  return grad;
}

namespace {

constexpr double kLogFloor = 1e-12;

double kl_term(double p, double q) {
  const double pc = std::max(p, kLogFloor);
  const double qc = std::max(q, kLogFloor);
  return pc * std::log(pc / qc);
}

void require_same_dims(const AttentionMap& a, const AttentionMap& b) {
  require_same_shape(a.map(), b.map(), "l_ad");
}

}  // namespace

double l_ad(const AttentionMap& a, const AttentionMap& b) {
  require_same_dims(a, b);
  const Tensor& pa = a.map();
  const Tensor& pb = b.map();
  double total = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) total += kl_term(pa[i], pb[i]) + kl_term(pb[i], pa[i]);
  return total / (2.0 * static_cast<double>(pa.size()));
}

AdGrads l_ad_with_grad(const AttentionMap& a, const AttentionMap& b) {
  require_same_dims(a, b);
  const Tensor& pa = a.map();
  const Tensor& pb = b.map();
  const double norm = 1.0 / (2.0 * static_cast<double>(pa.size()));
  AdGrads out{l_ad(a, b), Tensor(pa.shape()), Tensor(pb.shape())};
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double x = std::max(pa[i], kLogFloor);
    const double y = std::max(pb[i], kLogFloor);
    const double log_ratio = std::log(x / y);
    if (pa[i] > kLogFloor) out.grad_a[i] = norm * (log_ratio + 1.0 - y / x);
    if (pb[i] > kLogFloor) out.grad_b[i] = norm * (-log_ratio + 1.0 - x / y);
  }
  return out;
}

std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::NLC: return "NLC";
    case Scheme::PLC: return "PLC";
    case Scheme::ILC: return "ILC";
  }
  return "?";
}

Scheme scheme_from_string(std::string_view s) {
  if (s == "NLC" || s == "nlc") return Scheme::NLC;
  if (s == "PLC" || s == "plc") return Scheme::PLC;
  if (s == "ILC" || s == "ilc") return Scheme::ILC;
  throw ParameterError("unknown connection scheme '" + std::string(s) + "' (expected NLC, PLC or ILC)");
}

std::string_view to_string(DistillGradient g) {
  return g == DistillGradient::Both ? "both" : "student_only";
}

DistillGradient distill_gradient_from_string(std::string_view s) {
  if (s == "both") return DistillGradient::Both;
  if (s == "student_only") return DistillGradient::StudentOnly;
  throw ParameterError("unknown distill gradient mode '" + std::string(s) +
                       "' (expected both or student_only)");
}

DistillPlan build_distill_plan(Scheme scheme, std::size_t n_blocks) {
  if (n_blocks < 2) throw ParameterError("build_distill_plan: need at least 2 blocks");
  DistillPlan plan{scheme, n_blocks, {}};
  switch (scheme) {
    case Scheme::NLC:
      break;
    case Scheme::PLC:
      for (std::size_t m = 0; m < n_blocks; ++m) {
        plan.pairs.push_back({Modality::T2W, m, m});
        plan.pairs.push_back({Modality::ADC, m, m});
      }
      break;
    case Scheme::ILC:
      for (std::size_t m = 0; m + 1 < n_blocks; ++m) {
        plan.pairs.push_back({Modality::T2W, m, m + 1});
        plan.pairs.push_back({Modality::ADC, m, m + 1});
      }
      break;
  }
  return plan;
}

CsadLoss l_csad(const std::vector<AttentionMap>& maps_t2w,
                const std::vector<AttentionMap>& maps_adc, const DistillPlan& plan,
                DistillGradient mode) {
  if (maps_t2w.size() != plan.n_blocks || maps_adc.size() != plan.n_blocks)
    throw ShapeError("l_csad: plan covers " + std::to_string(plan.n_blocks) + " blocks, got " +
                     std::to_string(maps_t2w.size()) + " T2W and " +
                     std::to_string(maps_adc.size()) + " ADC maps");
  CsadLoss out;
  for (const auto& m : maps_t2w) out.grad_t2w.emplace_back(m.map().shape());
  for (const auto& m : maps_adc) out.grad_adc.emplace_back(m.map().shape());

  for (const auto& pair : plan.pairs) {
    const bool from_t2w = pair.source == Modality::T2W;
    const auto& src = from_t2w ? maps_t2w : maps_adc;
    const auto& dst = from_t2w ? maps_adc : maps_t2w;
    auto& src_grad = from_t2w ? out.grad_t2w : out.grad_adc;
    auto& dst_grad = from_t2w ? out.grad_adc : out.grad_t2w;

    const AdGrads term = l_ad_with_grad(src.at(pair.source_stage), dst.at(pair.target_stage));
    out.value += term.value;
    ++out.terms;
    if (mode == DistillGradient::Both)
      src_grad[pair.source_stage] = add(src_grad[pair.source_stage], term.grad_a);
    dst_grad[pair.target_stage] = add(dst_grad[pair.target_stage], term.grad_b);
  }
  return out;
}

}  // namespace csad

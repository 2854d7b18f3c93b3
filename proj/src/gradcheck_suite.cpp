#include <algorithm>
#include <cmath>
#include <limits>

#include "csad/attention.hpp"
#include "csad/net.hpp"
#include "csad/objectives.hpp"
#include "csad/rng.hpp"
#include "csad/scff.hpp"
#include "csad/verify.hpp"

namespace csad::verify {

namespace {

Tensor random_tensor(Pcg32& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Entries bounded away from 0 so |x| and relu have no kink within eps.
Tensor kink_free_tensor(Pcg32& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = (rng.chance(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
  return t;
}

// Distinct values on a 0.01 grid so pooling windows have no near-ties.
Tensor tie_free_tensor(Pcg32& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(i);
  for (std::size_t i = t.size(); i > 1; --i)
    std::swap(t[i - 1], t[rng.below(static_cast<std::uint32_t>(i))]);
  return t;
}

std::size_t dim_in(Pcg32& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.below(static_cast<std::uint32_t>(hi - lo + 1));
}

class Suite {
 public:
  explicit Suite(const SuiteOptions& opts) : opts_(opts), rng_(opts.seed, rng_stream::kTestData) {}

  Pcg32& rng() { return rng_; }
  const SuiteOptions& options() const { return opts_; }

  void check(const std::string& name, const Tensor& analytic, const ScalarFn& f, const Tensor& x,
             double threshold) {
    check(name, analytic, f, x, threshold, opts_.eps);
  }

  void check(const std::string& name, const Tensor& analytic, const ScalarFn& f, const Tensor& x,
             double threshold, double eps) {
    const Tensor numeric = numeric_grad(f, x, eps);
    GradCheckReport r = compare_gradients(name, analytic, numeric, threshold);
    auto it = std::find_if(reports_.begin(), reports_.end(),
                           [&](const GradCheckReport& q) { return q.op_name == name; });
    if (it == reports_.end())
      reports_.push_back(r);
    else
      merge_report(*it, r);
  }

  void check(const std::string& name, const Tensor& analytic, const ScalarFn& f, const Tensor& x) {
    check(name, analytic, f, x, opts_.threshold);
  }

  std::vector<GradCheckReport> take() { return std::move(reports_); }

 private:
  SuiteOptions opts_;
  Pcg32 rng_;
  std::vector<GradCheckReport> reports_;
};

void check_conv(Suite& s) {
  auto& rng = s.rng();
  const std::size_t c_in = dim_in(rng, 1, 3), c_out = dim_in(rng, 1, 3);
  const std::size_t h = dim_in(rng, 3, 6), w = dim_in(rng, 3, 6);
  const std::size_t k = rng.chance(0.5) ? 3 : 1;
  const std::size_t pad = rng.below(2), stride = 1 + rng.below(2);
  const Tensor x = random_tensor(rng, {c_in, h, w});
  const Tensor ker = random_tensor(rng, {c_out, c_in, k, k});
  const Tensor out = conv2d(x, ker, stride, pad);
  const Tensor r = random_tensor(rng, out.shape());
  const auto g = conv2d_backward(x, ker, r, stride, pad);
  s.check("conv2d/input", g.input, [&](const Tensor& t) { return dot(conv2d(t, ker, stride, pad), r); }, x);
  s.check("conv2d/kernels", g.kernels, [&](const Tensor& t) { return dot(conv2d(x, t, stride, pad), r); }, ker);
}

void check_softmax(Suite& s) {
  auto& rng = s.rng();
  const Tensor m = random_tensor(rng, {dim_in(rng, 1, 5), dim_in(rng, 1, 5)}, -2.0, 2.0);
  const Tensor r = random_tensor(rng, m.shape());
  s.check("spatial_softmax", spatial_softmax_backward(m, r),
          [&](const Tensor& t) { return dot(spatial_softmax(t), r); }, m);
}

void check_upsample(Suite& s) {
  auto& rng = s.rng();
  const std::size_t c = dim_in(rng, 1, 3), h = dim_in(rng, 1, 5), w = dim_in(rng, 1, 5);
  const std::size_t th = dim_in(rng, 1, 10), tw = dim_in(rng, 1, 10);
  const Tensor x = random_tensor(rng, {c, h, w});
  const Tensor r = random_tensor(rng, {c, th, tw});
  s.check("bilinear_upsample", bilinear_upsample_backward(r, h, w),
          [&](const Tensor& t) { return dot(bilinear_upsample(t, th, tw), r); }, x);
}

void check_amgb(Suite& s) {
  auto& rng = s.rng();
  const std::size_t c = dim_in(rng, 1, 3), h = dim_in(rng, 2, 4), w = dim_in(rng, 2, 4);
  const std::size_t th = dim_in(rng, h, 8), tw = dim_in(rng, w, 8);
  const Tensor x = random_tensor(rng, {c, h, w});
  const Tensor r = random_tensor(rng, {th, tw});
  s.check("amgb", amgb_backward(x, th, tw, r),
          [&](const Tensor& t) { return dot(amgb(t, th, tw).map(), r); }, x);
}

void check_l_ad(Suite& s) {
  auto& rng = s.rng();
  const Shape shape{dim_in(rng, 1, 5), dim_in(rng, 1, 5)};
  const Tensor la = random_tensor(rng, shape, -2.0, 2.0);
  const Tensor lb = random_tensor(rng, shape, -2.0, 2.0);
  const AttentionMap a(spatial_softmax(la)), b(spatial_softmax(lb));
  const AdGrads g = l_ad_with_grad(a, b);
  // Maps are parameterised by logits so every probe stays a valid distribution.
  s.check("l_ad/a", spatial_softmax_backward(la, g.grad_a),
          [&](const Tensor& t) { return l_ad(AttentionMap(spatial_softmax(t)), b); }, la);
  s.check("l_ad/b", spatial_softmax_backward(lb, g.grad_b),
          [&](const Tensor& t) { return l_ad(a, AttentionMap(spatial_softmax(t))); }, lb);
}

void check_l_csad(Suite& s) {
  auto& rng = s.rng();
  const std::size_t n = dim_in(rng, 2, 3);
  const Scheme scheme = rng.chance(0.5) ? Scheme::ILC : Scheme::PLC;
  const DistillPlan plan = build_distill_plan(scheme, n);
  const std::size_t th = 6, tw = 6;
  std::vector<Tensor> ft, fa;
  for (std::size_t m = 0; m < n; ++m) {
    const std::size_t side = 6 >> m;
    ft.push_back(random_tensor(rng, {dim_in(rng, 1, 2), side, side}));
    fa.push_back(random_tensor(rng, {dim_in(rng, 1, 2), side, side}));
  }
  const auto maps = [&](const std::vector<Tensor>& fs) {
    std::vector<AttentionMap> out;
    for (const auto& f : fs) out.push_back(amgb(f, th, tw));
    return out;
  };
  const auto mt = maps(ft), ma = maps(fa);
  const CsadLoss loss = l_csad(mt, ma, plan, DistillGradient::Both);
  for (std::size_t m = 0; m < n; ++m) {
    const Tensor gt = amgb_backward(ft[m], th, tw, loss.grad_t2w[m]);
    s.check("l_csad", gt,
            [&](const Tensor& t) {
              auto fs = ft;
              fs[m] = t;
              return l_csad(maps(fs), ma, plan).value;
            },
            ft[m]);
    const Tensor ga = amgb_backward(fa[m], th, tw, loss.grad_adc[m]);
    s.check("l_csad", ga,
            [&](const Tensor& t) {
              auto fs = fa;
              fs[m] = t;
              return l_csad(mt, maps(fs), plan).value;
            },
            fa[m]);
  }
}

void check_scff(Suite& s) {
  auto& rng = s.rng();
  const std::size_t c = dim_in(rng, 1, 4), cp = dim_in(rng, 1, 3);
  const std::size_t h = dim_in(rng, 1, 3), w = dim_in(rng, 1, 3);
  const Tensor ft = random_tensor(rng, {c, h, w});
  const Tensor fa = random_tensor(rng, {c, h, w});
  const Tensor proj = random_tensor(rng, {cp, c, 1, 1});
  const ScffForward fwd = scff_forward(ft, fa, proj);
  const Tensor r = random_tensor(rng, fwd.fused.shape());
  const ScffGrads g = scff_backward(fwd, ft, fa, proj, r);
  s.check("scff_fuse/t2w", g.t2w, [&](const Tensor& t) { return dot(scff_fuse(t, fa, proj), r); }, ft);
  s.check("scff_fuse/adc", g.adc, [&](const Tensor& t) { return dot(scff_fuse(ft, t, proj), r); }, fa);
  s.check("scff_fuse/proj", g.proj, [&](const Tensor& t) { return dot(scff_fuse(ft, fa, t), r); }, proj);
}

SegMask random_mask(Pcg32& rng, std::size_t h, std::size_t w) {
  SegMask m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m(y, x) = rng.chance(0.3) ? 1 : 0;
  return m;
}

void check_seg_losses(Suite& s) {
  auto& rng = s.rng();
  const Tensor p = random_tensor(rng, {8, 8}, 0.05, 0.95);
  const SegMask y = random_mask(rng, 8, 8);
  const double sigma = rng.uniform(0.5, 2.0), lambda = rng.uniform(0.5, 0.99);
  s.check("dice_loss", dice_loss(SegProb(p), y, sigma).grad,
          [&](const Tensor& t) { return dice_loss(SegProb(t), y, sigma).value; }, p);
  s.check("wbce_loss", wbce_loss(SegProb(p), y, lambda).grad,
          [&](const Tensor& t) { return wbce_loss(SegProb(t), y, lambda).value; }, p);
}

void check_elementwise(Suite& s) {
  auto& rng = s.rng();
  const Shape shape{dim_in(rng, 1, 3), dim_in(rng, 2, 4), dim_in(rng, 2, 4)};
  const Tensor x = kink_free_tensor(rng, shape);
  const Tensor r = random_tensor(rng, shape);
  s.check("relu", relu_backward(x, r), [&](const Tensor& t) { return dot(relu(t), r); }, x);
  s.check("abs", abs_backward(x, r), [&](const Tensor& t) { return dot(abs(t), r); }, x);
  s.check("square", square_backward(x, r), [&](const Tensor& t) { return dot(square(t), r); }, x);
  s.check("sigmoid", sigmoid_backward(sigmoid(x), r),
          [&](const Tensor& t) { return dot(sigmoid(t), r); }, x);
  const Tensor y = random_tensor(rng, shape);
  s.check("mul", mul(y, r), [&](const Tensor& t) { return dot(mul(t, y), r); }, x);
  const Tensor bias = random_tensor(rng, {shape[0]});
  s.check("add_channel_bias", channel_bias_backward(r),
          [&](const Tensor& t) { return dot(add_channel_bias(x, t), r); }, bias);
  const Tensor r2 = random_tensor(rng, {shape[1], shape[2]});
  Tensor cs_grad(shape);
  for (std::size_t c = 0; c < shape[0]; ++c)
    for (std::size_t i = 0; i < r2.size(); ++i) cs_grad[c * r2.size() + i] = r2[i];
  s.check("channel_sum", cs_grad, [&](const Tensor& t) { return dot(channel_sum(t), r2); }, x);

  const Tensor pool_in = tie_free_tensor(rng, {shape[0], 2 * shape[1], 2 * shape[2]});
  const Tensor rp = random_tensor(rng, shape);
  s.check("maxpool2x2", maxpool2x2_backward(pool_in, rp),
          [&](const Tensor& t) { return dot(maxpool2x2(t), rp); }, pool_in);

  const std::size_t m = dim_in(rng, 1, 4), k = dim_in(rng, 1, 4), n = dim_in(rng, 1, 4);
  const Tensor a = random_tensor(rng, {m, k}), b = random_tensor(rng, {k, n});
  const Tensor rm = random_tensor(rng, {m, n});
  const auto mg = matmul_backward(a, b, rm);
  s.check("matmul/a", mg.a, [&](const Tensor& t) { return dot(matmul(t, b), rm); }, a);
  s.check("matmul/b", mg.b, [&](const Tensor& t) { return dot(matmul(a, t), rm); }, b);
}

// Smallest |pre-activation| or pooling-window gap in a forward pass. Finite
// differences are only meaningful when this exceeds the probe size.
double kink_margin(const ForwardCache& c) {
  double margin = std::numeric_limits<double>::infinity();
  const auto scan = [&](const Tensor& t) {
    for (double v : t.data()) margin = std::min(margin, std::fabs(v));
  };
  const auto pool_gap = [&](const Tensor& t) {
    for (std::size_t ch = 0; ch < t.dim(0); ++ch)
      for (std::size_t y = 0; y + 1 < t.dim(1); y += 2)
        for (std::size_t x = 0; x + 1 < t.dim(2); x += 2) {
          double v[4] = {t.at(ch, y, x), t.at(ch, y, x + 1), t.at(ch, y + 1, x), t.at(ch, y + 1, x + 1)};
          std::sort(v, v + 4);
          if (v[3] > 0.0) margin = std::min(margin, v[3] - v[2]);
        }
  };
  for (const auto* stream : {&c.enc_t2w, &c.enc_adc})
    for (std::size_t s = 0; s < stream->size(); ++s) {
      scan((*stream)[s].pre1);
      scan((*stream)[s].pre2);
      if (s + 1 < stream->size()) pool_gap((*stream)[s].act2);
    }
  for (const auto& d : c.dec) scan(d.pre);
  return margin;
}

void check_network(Suite& s, Fusion fusion, double threshold) {
  auto& rng = s.rng();
  NetConfig cfg;
  cfg.input_h = cfg.input_w = 8;
  cfg.stages = 2;
  cfg.base_channels = 2;
  cfg.fusion = fusion;
  cfg.scheme = rng.chance(0.5) ? Scheme::ILC : Scheme::PLC;
  LossConfig loss;
  for (int attempt = 0;; ++attempt) {
    ModelState model = init_model(cfg, rng.next_u32());
    // The head starts at zero, which would hide every decoder gradient.
    model.params.at("head.w") = random_tensor(rng, model.param("head.w").shape(), -0.5, 0.5);
    TrainSample sample{random_tensor(rng, {1, 8, 8}, 0.0, 1.0), random_tensor(rng, {1, 8, 8}, 0.0, 1.0),
                       random_mask(rng, 8, 8), 0};
    const ForwardResult fwd = forward(model, sample.t2w, sample.adc);
    // The clamp in WBCE is a kink too: its value flattens where the
    // logit-form gradient keeps pushing.
    const auto& p = fwd.pred.grid().data();
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    const bool saturated = *lo < 1e-6 || *hi > 1.0 - 1e-6;
    if ((saturated || kink_margin(fwd.cache) < 1e-3) && attempt < 100) continue;

    const SampleGradient sg = loss_and_gradient(model, sample, loss);
    Tensor analytic({model.parameter_count()}), flat({model.parameter_count()});
    std::vector<std::pair<std::string, std::size_t>> layout;
    std::size_t off = 0;
    for (const auto& [name, t] : model.params) {
      const Tensor& g = sg.grads.at(name);
      for (std::size_t i = 0; i < t.size(); ++i) {
        analytic[off + i] = g[i];
        flat[off + i] = t[i];
      }
      layout.emplace_back(name, t.size());
      off += t.size();
    }
    const ScalarFn f = [&](const Tensor& theta) {
      ModelState probe = model;
      std::size_t o = 0;
      for (const auto& [name, n] : layout) {
        Tensor& t = probe.params.at(name);
        for (std::size_t i = 0; i < n; ++i) t[i] = theta[o + i];
        o += n;
      }
      const ForwardResult r = forward(probe, sample.t2w, sample.adc);
      const double d = dice_loss(r.pred, sample.mask, loss.sigma).value;
      const double w = wbce_loss(r.pred, sample.mask, loss.lambda).value;
      const double c = l_csad(r.attn_t2w, r.attn_adc, build_distill_plan(cfg.scheme, cfg.stages)).value;
      return combine_losses(d, w, c, loss).total;
    };
    s.check(std::string("network/") + std::string(to_string(fusion)), analytic, f, flat, threshold,
            s.options().network_eps);
    return;
  }
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const SuiteOptions& opts) {
  Suite suite(opts);
  for (std::size_t i = 0; i < opts.instances; ++i) {
    check_conv(suite);
    check_softmax(suite);
    check_upsample(suite);
    check_amgb(suite);
    check_l_ad(suite);
    check_l_csad(suite);
    check_scff(suite);
    check_seg_losses(suite);
    check_elementwise(suite);
    check_network(suite, Fusion::SCFF, opts.network_threshold);
    check_network(suite, Fusion::Concat, opts.network_threshold);
  }
  return suite.take();
}

}  // namespace csad::verify

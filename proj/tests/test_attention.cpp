#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "csad/attention.hpp"
#include "csad/rng.hpp"
#include "csad/verify.hpp"

using namespace csad;

namespace {

Tensor random_tensor(Pcg32& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

AttentionMap random_map(Pcg32& rng, std::size_t h, std::size_t w, double spread = 3.0) {
  return AttentionMap(spatial_softmax(random_tensor(rng, {h, w}, -spread, spread)));
}

}  // namespace

TEST(AttentionMap, RejectsInvalidMaps) {
  EXPECT_THROW(AttentionMap(Tensor({2, 2}, 0.3)), ParameterError);
  EXPECT_THROW(AttentionMap(Tensor({1, 2}, {1.5, -0.5})), ParameterError);
  EXPECT_THROW(AttentionMap(Tensor({4}, 0.25)), ShapeError);
  EXPECT_NO_THROW(AttentionMap(Tensor({2, 2}, 0.25)));
}

TEST(Amgb, ConstantFeaturesGiveUniformMap) {
  const AttentionMap m = amgb(Tensor({3, 4, 4}, 2.0), 4, 4);
  for (double v : m.map().data()) EXPECT_NEAR(v, 1.0 / 16.0, 1e-15);
}

TEST(Amgb, SingleHotFeatureConcentratesMass) {
  Tensor f({1, 2, 2});
  f.at(0, 1, 0) = 10.0;
  const AttentionMap m = amgb(f, 2, 2);
  EXPECT_GT(m.map().at(1, 0), 0.999);
}

TEST(Amgb, UpsamplesToTarget) {
  Pcg32 rng(2);
  const AttentionMap m = amgb(random_tensor(rng, {4, 3, 5}), 12, 10);
  EXPECT_EQ(m.map().shape(), (Shape{12, 10}));
  EXPECT_THROW(amgb(Tensor({1, 2, 2}), 0, 2), ParameterError);
  EXPECT_THROW(amgb(Tensor({2, 2}), 2, 2), ShapeError);
}

TEST(Amgb, MatchesComposedReference) {
  Pcg32 rng(4);
  for (int i = 0; i < 20; ++i) {
    const Tensor f = random_tensor(rng, {1 + rng.below(4), 2 + rng.below(4), 2 + rng.below(4)});
    const std::size_t th = 2 + rng.below(10), tw = 2 + rng.below(10);
    const Tensor ref = spatial_softmax(channel_sum(square(bilinear_upsample(f, th, tw))));
    const Tensor got = amgb(f, th, tw).map();
    for (std::size_t j = 0; j < ref.size(); ++j) ASSERT_NEAR(got[j], ref[j], 1e-15);
  }
}

TEST(Amgb, ArgmaxStableUnderPositiveScaling) {
  Pcg32 rng(6);
  for (int i = 0; i < 200; ++i) {
    const Tensor f = random_tensor(rng, {2, 6, 6});
    const Tensor a = amgb(f, 6, 6).map();
    const Tensor b = amgb(scale(f, rng.uniform(0.5, 3.0)), 6, 6).map();
    const auto ia = std::max_element(a.data().begin(), a.data().end()) - a.data().begin();
    const auto ib = std::max_element(b.data().begin(), b.data().end()) - b.data().begin();
    EXPECT_EQ(ia, ib);
  }
}

TEST(Amgb, TenThousandMapsAreNormalised) {
  Pcg32 rng(8);
  for (int i = 0; i < 10000; ++i) {
    const Tensor f = random_tensor(rng, {1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)}, -2.0, 2.0);
    const AttentionMap m = amgb(f, 4, 4);
    ASSERT_NEAR(sum(m.map()), 1.0, 1e-9);
  }
}

TEST(Amgb, DoesNotModifyInput) {
  Pcg32 rng(10);
  const Tensor f = random_tensor(rng, {2, 3, 3});
  const Tensor copy = f;
  (void)amgb(f, 6, 6);
  (void)amgb_backward(f, 6, 6, Tensor({6, 6}, 1.0));
  EXPECT_EQ(f, copy);
}

TEST(LAd, IdenticalMapsGiveZero) {
  const AttentionMap a(Tensor({2, 2}, 0.25));
  EXPECT_EQ(l_ad(a, a), 0.0);
}

TEST(LAd, TwoPixelValue) {
  const AttentionMap a(Tensor({1, 2}, {0.5, 0.5}));
  const AttentionMap b(Tensor({1, 2}, {0.9, 0.1}));
  EXPECT_NEAR(l_ad(a, b), 0.21972245773362192, 1e-15);
}

TEST(LAd, ZeroEntriesStayFinite) {
  const AttentionMap a(Tensor({1, 2}, {1.0, 0.0}));
  const AttentionMap b(Tensor({1, 2}, {0.0, 1.0}));
  EXPECT_TRUE(std::isfinite(l_ad(a, b)));
  EXPECT_GT(l_ad(a, b), 0.0);
}

TEST(LAd, SymmetricAndNonnegativeOnRandomPairs) {
  Pcg32 rng(12);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t h = 1 + rng.below(5), w = 1 + rng.below(5);
    const AttentionMap a = random_map(rng, h, w), b = random_map(rng, h, w);
    const double ab = l_ad(a, b), ba = l_ad(b, a);
    ASSERT_GE(ab, 0.0);
    ASSERT_NEAR(ab, ba, 1e-15 + 1e-12 * ab);
    ASSERT_EQ(l_ad(a, a), 0.0);
  }
}

TEST(LAd, ShapeMismatch) {
  EXPECT_THROW(l_ad(AttentionMap(Tensor({2, 2}, 0.25)), AttentionMap(Tensor({1, 4}, 0.25))),
               ShapeError);
}

TEST(LAd, GradientMatchesFiniteDifferenceThroughSoftmax) {
  Pcg32 rng(14);
  const Tensor la = random_tensor(rng, {3, 3}), lb = random_tensor(rng, {3, 3});
  const AttentionMap b(spatial_softmax(lb));
  const AdGrads g = l_ad_with_grad(AttentionMap(spatial_softmax(la)), b);
  const Tensor analytic = spatial_softmax_backward(la, g.grad_a);
  const Tensor numeric = verify::numeric_grad(
      [&](const Tensor& t) { return l_ad(AttentionMap(spatial_softmax(t)), b); }, la);
  EXPECT_TRUE(verify::compare_gradients("l_ad", analytic, numeric, 1e-4).pass);
}

TEST(DistillPlan, TermCounts) {
  EXPECT_EQ(build_distill_plan(Scheme::ILC, 5).pairs.size(), 8u);
  EXPECT_EQ(build_distill_plan(Scheme::PLC, 5).pairs.size(), 10u);
  EXPECT_EQ(build_distill_plan(Scheme::NLC, 5).pairs.size(), 0u);
  EXPECT_EQ(build_distill_plan(Scheme::PLC, 3).pairs.size(), 6u);
  EXPECT_EQ(build_distill_plan(Scheme::ILC, 2).pairs.size(), 2u);
  EXPECT_THROW(build_distill_plan(Scheme::ILC, 1), ParameterError);
}

TEST(DistillPlan, InterlacedPairsAdvanceOneStage) {
  const DistillPlan plan = build_distill_plan(Scheme::ILC, 5);
  std::size_t from_t2w = 0;
  for (const DistillPair& p : plan.pairs) {
    EXPECT_EQ(p.target_stage, p.source_stage + 1);
    EXPECT_LT(p.target_stage, 5u);
    from_t2w += p.source == Modality::T2W;
  }
  EXPECT_EQ(from_t2w, 4u);
}

TEST(DistillPlan, PositionWisePairsStayOnStage) {
  const DistillPlan plan = build_distill_plan(Scheme::PLC, 4);
  for (const DistillPair& p : plan.pairs) EXPECT_EQ(p.source_stage, p.target_stage);
  const auto count = std::count(plan.pairs.begin(), plan.pairs.end(),
                                DistillPair{Modality::ADC, 2, 2});
  EXPECT_EQ(count, 1);
}

TEST(Scheme, StringRoundTrip) {
  for (Scheme s : {Scheme::NLC, Scheme::PLC, Scheme::ILC})
    EXPECT_EQ(scheme_from_string(to_string(s)), s);
  EXPECT_THROW(scheme_from_string("XLC"), ParameterError);
  EXPECT_EQ(distill_gradient_from_string("student_only"), DistillGradient::StudentOnly);
  EXPECT_THROW(distill_gradient_from_string("teacher"), ParameterError);
}

TEST(LCsad, SumsPlanTerms) {
  Pcg32 rng(16);
  std::vector<AttentionMap> t2w, adc;
  for (int m = 0; m < 3; ++m) {
    t2w.push_back(random_map(rng, 4, 4));
    adc.push_back(random_map(rng, 4, 4));
  }
  const CsadLoss ilc = l_csad(t2w, adc, build_distill_plan(Scheme::ILC, 3));
  const double expect = l_ad(t2w[0], adc[1]) + l_ad(adc[0], t2w[1]) + l_ad(t2w[1], adc[2]) +
                        l_ad(adc[1], t2w[2]);
  EXPECT_EQ(ilc.terms, 4u);
  EXPECT_NEAR(ilc.value, expect, 1e-15);
  const CsadLoss nlc = l_csad(t2w, adc, build_distill_plan(Scheme::NLC, 3));
  EXPECT_EQ(nlc.value, 0.0);
  EXPECT_EQ(nlc.terms, 0u);
  for (const Tensor& g : nlc.grad_t2w) EXPECT_EQ(g, Tensor(g.shape()));
}

TEST(LCsad, StudentOnlyLeavesSourceWithoutGradient) {
  Pcg32 rng(18);
  std::vector<AttentionMap> t2w, adc;
  for (int m = 0; m < 2; ++m) {
    t2w.push_back(random_map(rng, 3, 3));
    adc.push_back(random_map(rng, 3, 3));
  }
  // ILC with two stages: T2W 0 -> ADC 1 and ADC 0 -> T2W 1.
  const CsadLoss both = l_csad(t2w, adc, build_distill_plan(Scheme::ILC, 2), DistillGradient::Both);
  const CsadLoss student =
      l_csad(t2w, adc, build_distill_plan(Scheme::ILC, 2), DistillGradient::StudentOnly);
  EXPECT_EQ(both.value, student.value);
  EXPECT_EQ(student.grad_t2w[0], Tensor({3, 3}));
  EXPECT_EQ(student.grad_adc[0], Tensor({3, 3}));
  EXPECT_EQ(student.grad_adc[1], both.grad_adc[1]);
  EXPECT_NE(both.grad_t2w[0], Tensor({3, 3}));
}

TEST(LCsad, RejectsMismatchedStageCounts) {
  std::vector<AttentionMap> one{AttentionMap(Tensor({2, 2}, 0.25))};
  std::vector<AttentionMap> two{one[0], one[0]};
  EXPECT_THROW(l_csad(one, two, build_distill_plan(Scheme::ILC, 2)), ShapeError);
}

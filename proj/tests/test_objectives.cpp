#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "csad/objectives.hpp"
#include "csad/rng.hpp"
#include "csad/verify.hpp"

using namespace csad;

namespace {

SegMask random_mask(Pcg32& rng, std::size_t h, std::size_t w, double p) {
  SegMask m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m(y, x) = rng.chance(p) ? 1 : 0;
  return m;
}

SegProb random_prob(Pcg32& rng, std::size_t h, std::size_t w) {
  Tensor t({h, w});
  for (double& v : t.data()) v = rng.uniform(0.02, 0.98);
  return SegProb(t);
}

// Row of n cells with the first k set.
SegMask strip(std::size_t n, std::size_t first, std::size_t count) {
  SegMask m(1, n);
  for (std::size_t i = first; i < first + count; ++i) m(0, i) = 1;
  return m;
}

}  // namespace

TEST(SegMask, FromTensorAcceptsOnlyBinary) {
  EXPECT_EQ(SegMask::from_tensor(Tensor({1, 2, 2}, {0, 1, 1, 0})).count(), 2u);
  EXPECT_THROW(SegMask::from_tensor(Tensor({2, 2}, {0, 0.5, 1, 0})), ParameterError);
  EXPECT_THROW(SegMask::from_tensor(Tensor({2, 2, 2})), ShapeError);
  EXPECT_THROW(SegMask(2, 2, {0, 1, 2, 0}), ParameterError);
}

TEST(SegProb, RejectsOutOfRange) {
  EXPECT_THROW(SegProb(Tensor({1, 2}, {0.5, 1.5})), ParameterError);
  EXPECT_THROW(SegProb(Tensor({2})), ShapeError);
}

TEST(LossConfig, Validation) {
  EXPECT_NO_THROW(LossConfig{}.validate());
  EXPECT_THROW((LossConfig{1.0, 0.1, 0.0, 0.95}).validate(), ParameterError);
  EXPECT_THROW((LossConfig{-1.0, 0.1, 1.0, 0.95}).validate(), ParameterError);
  EXPECT_THROW((LossConfig{1.0, 0.1, 1.0, 1.0}).validate(), ParameterError);
}

TEST(DiceLoss, PerfectPredictionIsZero) {
  const SegMask m = strip(6, 1, 3);
  EXPECT_EQ(dice_loss(SegProb(m.to_tensor()), m, 1.0).value, 0.0);
}

TEST(DiceLoss, BothEmptyIsZero) {
  EXPECT_EQ(dice_loss(SegProb(Tensor({2, 2})), SegMask(2, 2), 1.0).value, 0.0);
}

TEST(DiceLoss, PartialOverlap) {
  // |X| = 4, |Y| = 4, overlap 2.
  const SegMask pred = strip(8, 0, 4), truth = strip(8, 2, 4);
  EXPECT_NEAR(dice_loss(SegProb(pred.to_tensor()), truth, 1.0).value, 0.4444444444444444, 1e-15);
}

TEST(DiceLoss, SymmetricForBinaryPredictions) {
  Pcg32 rng(2);
  for (int i = 0; i < 200; ++i) {
    const SegMask a = random_mask(rng, 5, 5, 0.4), b = random_mask(rng, 5, 5, 0.4);
    EXPECT_DOUBLE_EQ(dice_loss(SegProb(a.to_tensor()), b, 1.0).value,
                     dice_loss(SegProb(b.to_tensor()), a, 1.0).value);
  }
}

TEST(DiceLoss, GradientMatchesFiniteDifferences) {
  Pcg32 rng(4);
  for (int i = 0; i < 10; ++i) {
    const SegProb p = random_prob(rng, 8, 8);
    const SegMask y = random_mask(rng, 8, 8, 0.3);
    const Tensor numeric = verify::numeric_grad(
        [&](const Tensor& t) { return dice_loss(SegProb(t), y, 1.0).value; }, p.grid());
    EXPECT_TRUE(verify::compare_gradients("dice", dice_loss(p, y, 1.0).grad, numeric, 1e-4).pass);
  }
}

TEST(DiceLoss, ShapeMismatch) {
  EXPECT_THROW(dice_loss(SegProb(Tensor({2, 2})), SegMask(2, 3), 1.0), ShapeError);
  EXPECT_THROW(dice_loss(SegProb(Tensor({2, 2})), SegMask(2, 2), 0.0), ParameterError);
}

TEST(WbceLoss, SinglePixelValues) {
  const SegProb half(Tensor({1, 1}, 0.5));
  SegMask fg(1, 1);
  fg(0, 0) = 1;
  EXPECT_NEAR(wbce_loss(half, fg, 0.95).value, 0.658489821531948, 1e-15);
  EXPECT_NEAR(wbce_loss(half, SegMask(1, 1), 0.95).value, 0.03465735902799726, 1e-15);
}

TEST(WbceLoss, ExactPredictionNearZero) {
  Pcg32 rng(6);
  const SegMask y = random_mask(rng, 6, 6, 0.5);
  EXPECT_LE(wbce_loss(SegProb(y.to_tensor()), y, 0.95).value, 1e-6);
}

TEST(WbceLoss, ClampedEntriesHaveNoGradient) {
  SegMask y(1, 2);
  y(0, 0) = 1;
  const LossValue v = wbce_loss(SegProb(Tensor({1, 2}, {0.0, 1.0})), y, 0.95);
  EXPECT_TRUE(std::isfinite(v.value));
  EXPECT_EQ(v.grad, Tensor({1, 2}));
}

TEST(WbceLoss, GradientMatchesFiniteDifferences) {
  Pcg32 rng(8);
  for (int i = 0; i < 10; ++i) {
    const SegProb p = random_prob(rng, 8, 8);
    const SegMask y = random_mask(rng, 8, 8, 0.3);
    const Tensor numeric = verify::numeric_grad(
        [&](const Tensor& t) { return wbce_loss(SegProb(t), y, 0.95).value; }, p.grid());
    EXPECT_TRUE(verify::compare_gradients("wbce", wbce_loss(p, y, 0.95).grad, numeric, 1e-4).pass);
  }
}

TEST(TotalLoss, LinearCombination) {
  const LossConfig cfg;
  const LossBreakdown b = combine_losses(0.4, 0.2, 0.1, cfg);
  EXPECT_NEAR(b.total, 0.52, 1e-15);
  EXPECT_EQ(combine_losses(0.0, 0.0, 0.0, cfg).total, 0.0);
  LossConfig no_distill = cfg;
  no_distill.alpha = 0.0;
  EXPECT_EQ(combine_losses(0.4, 0.2, 5.0, no_distill).total, combine_losses(0.4, 0.2, 0.0, cfg).total);
}

TEST(TotalLoss, MonotoneInEachComponent) {
  Pcg32 rng(10);
  const LossConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    const double d = rng.uniform(), w = rng.uniform(), c = rng.uniform(), e = rng.uniform(0.0, 0.5);
    const double base = combine_losses(d, w, c, cfg).total;
    EXPECT_GE(combine_losses(d + e, w, c, cfg).total, base);
    EXPECT_GE(combine_losses(d, w + e, c, cfg).total, base);
    EXPECT_GE(combine_losses(d, w, c + e, cfg).total, base);
  }
}

TEST(TotalLoss, MatchesComponents) {
  Pcg32 rng(12);
  const SegProb p = random_prob(rng, 4, 4);
  const SegMask y = random_mask(rng, 4, 4, 0.5);
  const LossConfig cfg;
  const LossBreakdown b = total_loss(p, y, 0.3, cfg);
  EXPECT_EQ(b.dice, dice_loss(p, y, cfg.sigma).value);
  EXPECT_EQ(b.wbce, wbce_loss(p, y, cfg.lambda).value);
  EXPECT_EQ(b.csad, 0.3);
  EXPECT_DOUBLE_EQ(b.total, b.dice + 0.1 * b.wbce + 0.3);
}

TEST(ThresholdMask, InclusiveThreshold) {
  const SegMask m = threshold_mask(SegProb(Tensor({1, 3}, {0.49, 0.5, 0.9})), 0.5);
  EXPECT_EQ(m, SegMask(1, 3, {0, 1, 1}));
}

TEST(Evaluate, IdenticalMasks) {
  const SegMask m = strip(5, 1, 2);
  const SampleMetrics s = evaluate(m, m);
  EXPECT_EQ(s, (SampleMetrics{100.0, 100.0, 100.0, 0.0, 0.0}));
}

TEST(Evaluate, PartialOverlapExample) {
  // |A| = 4 predicted, |B| = 6 truth, overlap 3.
  const SegMask a = strip(10, 0, 4), b = strip(10, 1, 6);
  const SampleMetrics s = evaluate(a, b);
  EXPECT_NEAR(s.dice, 60.0, 1e-12);
  EXPECT_NEAR(s.voe, 57.14285714285714, 1e-12);
  EXPECT_NEAR(s.rvd, 50.0, 1e-12);
  EXPECT_NEAR(s.sensitivity, 50.0, 1e-12);
  EXPECT_NEAR(s.precision, 75.0, 1e-12);
}

TEST(Evaluate, EmptyCases) {
  EXPECT_EQ(evaluate(SegMask(2, 2), SegMask(2, 2)), (SampleMetrics{100.0, 100.0, 100.0, 0.0, 0.0}));
  const SampleMetrics miss = evaluate(SegMask(1, 4), strip(4, 0, 2));
  EXPECT_EQ(miss.dice, 0.0);
  EXPECT_EQ(miss.sensitivity, 0.0);
  EXPECT_EQ(miss.voe, 100.0);
  EXPECT_EQ(miss.precision, 0.0);
  EXPECT_EQ(miss.rvd, 100.0);
  const SampleMetrics false_alarm = evaluate(strip(4, 0, 2), SegMask(1, 4));
  EXPECT_EQ(false_alarm.sensitivity, 0.0);
  EXPECT_EQ(false_alarm.precision, 0.0);
  EXPECT_EQ(false_alarm.dice, 0.0);
  EXPECT_EQ(false_alarm.rvd, -100.0);
}

TEST(Evaluate, MatchesPixelCountingOracle) {
  Pcg32 rng(14);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12);
    const SegMask a = random_mask(rng, h, w, rng.uniform(0.0, 0.6));
    const SegMask b = random_mask(rng, h, w, rng.uniform(0.0, 0.6));
    ASSERT_EQ(evaluate(a, b), verify::brute_metrics(a, b));
  }
}

TEST(Evaluate, RangesHold) {
  Pcg32 rng(16);
  for (int i = 0; i < 500; ++i) {
    const SampleMetrics s = evaluate(random_mask(rng, 6, 6, 0.3), random_mask(rng, 6, 6, 0.3));
    for (double v : {s.dice, s.sensitivity, s.precision, s.voe}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 100.0);
    }
  }
}

TEST(Aggregate, MeanAndSampleStd) {
  const MetricsReport r = aggregate({SampleMetrics{50, 40, 30, 20, 10}, SampleMetrics{70, 60, 50, 40, 30}});
  EXPECT_DOUBLE_EQ(r.mean.dice, 60.0);
  EXPECT_DOUBLE_EQ(r.stddev.dice, std::sqrt(200.0));
  EXPECT_EQ(aggregate({SampleMetrics{50, 40, 30, 20, 10}}).stddev, SampleMetrics{});
  const MetricsReport empty = aggregate({});
  EXPECT_TRUE(empty.per_sample.empty());
  EXPECT_EQ(empty.mean, SampleMetrics{});
}

TEST(Report, RoundTripIsExact) {
  Pcg32 rng(18);
  std::vector<SampleMetrics> rows;
  for (int i = 0; i < 7; ++i)
    rows.push_back(evaluate(random_mask(rng, 5, 5, 0.4), random_mask(rng, 5, 5, 0.4)));
  const MetricsReport r = aggregate(rows);
  std::stringstream ss;
  write_report(ss, r);
  const MetricsReport back = read_report(ss);
  EXPECT_EQ(back.per_sample, r.per_sample);
  EXPECT_EQ(back.mean, r.mean);
  EXPECT_EQ(back.stddev, r.stddev);
}

TEST(Report, SummaryFormatting) {
  EXPECT_EQ(format_mean_std(58.2, 1.0), "58.2 ± 1.0");
  EXPECT_EQ(format_mean_std(65.66, 1.24), "65.7 ± 1.2");
  std::stringstream ss;
  write_report(ss, aggregate({SampleMetrics{60, 50, 75, 57.142857, 50}}));
  EXPECT_NE(ss.str().find("dice = 60.0 ± 0.0"), std::string::npos);
}

TEST(Report, RejectsMalformed) {
  std::stringstream ss("[summary]\nsamples = two\n");
  EXPECT_THROW(read_report(ss), std::runtime_error);
}

#include <gtest/gtest.h>

#include <cmath>

#include "csad/verify.hpp"

using namespace csad;

TEST(NumericGrad, Polynomial) {
  // f(x) = x0^2 + 3 x1 at (2, 5): gradient (4, 3).
  const Tensor g = verify::numeric_grad(
      [](const Tensor& x) { return x[0] * x[0] + 3.0 * x[1]; }, Tensor({2}, {2.0, 5.0}));
  EXPECT_NEAR(g[0], 4.0, 1e-9);
  EXPECT_NEAR(g[1], 3.0, 1e-9);
}

TEST(NumericGrad, RejectsBadStepAndNonFinite) {
  const auto f = [](const Tensor& x) { return x[0]; };
  EXPECT_THROW(verify::numeric_grad(f, Tensor({1}), 0.0), ParameterError);
  EXPECT_THROW(verify::numeric_grad([](const Tensor& x) { return std::log(x[0]); }, Tensor({1}, 0.0)),
               verify::NonFiniteError);
}

TEST(RelativeError, FloorAndSymmetry) {
  EXPECT_EQ(verify::relative_error(1.0, 1.0), 0.0);
  EXPECT_NEAR(verify::relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_EQ(verify::relative_error(2.0, 3.0), verify::relative_error(3.0, 2.0));
  EXPECT_NEAR(verify::relative_error(0.0, 1e-10), 1e-2, 1e-15);
}

TEST(CompareGradients, ReportsWorstEntry) {
  const auto r = verify::compare_gradients("op", Tensor({3}, {1.0, 2.0, 3.0}),
                                           Tensor({3}, {1.0, 2.2, 3.0}), 1e-4);
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.worst_index, 1u);
  EXPECT_THROW(verify::compare_gradients("op", Tensor({2}), Tensor({3}), 1e-4), ShapeError);
  EXPECT_NE(verify::format_report(r).find("FAIL op"), std::string::npos);
}

TEST(BruteMetrics, ConfusionCounts) {
  SegMask p(1, 4), t(1, 4);
  p(0, 0) = p(0, 1) = 1;
  t(0, 1) = t(0, 2) = 1;
  const verify::Confusion c = verify::brute_confusion(p, t);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.tn, 1u);
  EXPECT_DOUBLE_EQ(verify::brute_metrics(p, t).dice, 50.0);
}

TEST(GradcheckSuite, SmallRunPasses) {
  verify::SuiteOptions o;
  o.instances = 3;
  for (const auto& r : verify::run_gradcheck_suite(o)) {
    EXPECT_TRUE(r.pass) << verify::format_report(r);
    EXPECT_GE(r.instances, 3u) << r.op_name;
  }
}

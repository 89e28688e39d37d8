#include <cmath>

#include <gtest/gtest.h>

#include "generators.hpp"
#include "omlab/error.hpp"
#include "omlab/losses.hpp"
#include "omlab/ops.hpp"

namespace omlab {
namespace {

double focal(double logit, double target) {
  return sigmoid_focal_loss(Node::constant(Array(Shape{1, 1}, logit)), Array(Shape{1, 1}, target)).value.item();
}

TEST(FocalLoss, ConfidentCorrectIsTiny) { EXPECT_LT(focal(30.0, 1.0), 1e-10); }

TEST(FocalLoss, ZeroLogitPositive) { EXPECT_NEAR(focal(0.0, 1.0), 0.25 * 0.25 * std::log(2.0), 1e-12); }

TEST(FocalLoss, NormalizerCountsPositiveRows) {
  Array t(Shape{4, 3});
  t[0 * 3 + 1] = 1.0;
  t[2 * 3 + 0] = 1.0;
  const LossValue l = sigmoid_focal_loss(Node::constant(Array(Shape{4, 3})), t);
  EXPECT_EQ(l.normalizer, 2.0);
  const LossValue bg = sigmoid_focal_loss(Node::constant(Array(Shape{4, 3})), Array(Shape{4, 3}));
  EXPECT_EQ(bg.normalizer, 1.0);
}

TEST(FocalLoss, ExtremeLogitsStayFinite) {
  const Node x = Node::parameter(Array(Shape{2, 2}, std::vector<double>{500, -500, -500, 500}));
  Array t(Shape{2, 2});
  t[0] = 1.0;
  t[1] = 1.0;
  const LossValue l = sigmoid_focal_loss(x, t);
  EXPECT_TRUE(std::isfinite(l.value.item()));
  backward(l.value);
  EXPECT_TRUE(x.grad().all_finite());
}

TEST(FocalLoss, DecreasesAsTrueLogitGrows) {
  double prev = focal(-6.0, 1.0);
  for (double x = -5.5; x <= 6.0; x += 0.5) {
    const double cur = focal(x, 1.0);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(FocalLoss, RejectsBadTargetsAndParameters) {
  const Node x = Node::constant(Array(Shape{1, 2}));
  EXPECT_THROW(sigmoid_focal_loss(x, Array(Shape{1, 2}, 0.5)), ContractError);
  EXPECT_THROW(sigmoid_focal_loss(x, Array(Shape{2, 1})), ContractError);
  EXPECT_THROW(sigmoid_focal_loss(x, Array(Shape{1, 2}), 1.5, 2.0), ContractError);
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  const std::vector<int> labels{0, 3, 2};
  EXPECT_NEAR(softmax_cross_entropy(Node::constant(Array(Shape{3, 4}, 0.7)), labels).value.item(), std::log(4.0),
              1e-12);
}

TEST(SoftmaxCrossEntropy, DominantLogit) {
  Array x(Shape{1, 4});
  x[2] = 30.0;
  EXPECT_LT(softmax_cross_entropy(Node::constant(x), std::vector<int>{2}).value.item(), 1e-10);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  EXPECT_THROW(softmax_cross_entropy(Node::constant(Array(Shape{1, 3})), std::vector<int>{3}), ContractError);
  EXPECT_THROW(softmax_cross_entropy(Node::constant(Array(Shape{1, 3})), std::vector<int>{-1}), ContractError);
}

TEST(SoftmaxCrossEntropy, DecreasesAsTrueLogitGrows) {
  double prev = 1e9;
  for (double v = -4.0; v <= 4.0; v += 0.5) {
    Array x(Shape{1, 3}, std::vector<double>{v, 0.3, -0.2});
    const double cur = softmax_cross_entropy(Node::constant(x), std::vector<int>{0}).value.item();
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(Opl, OneClassIdenticalFeatures) {
  const Array f(Shape{3, 2}, std::vector<double>{1, 2, 1, 2, 1, 2});
  EXPECT_NEAR(opl_loss(Node::constant(f), std::vector<int>{4, 4, 4}).value.item(), 0.0, 1e-12);
}

TEST(Opl, OrthogonalClasses) {
  const Array f(Shape{4, 2}, std::vector<double>{1, 0, 2, 0, 0, 3, 0, 1});
  EXPECT_NEAR(opl_loss(Node::constant(f), std::vector<int>{0, 0, 1, 1}).value.item(), 0.0, 1e-12);
}

TEST(Opl, SharedFeatureAcrossClasses) {
  const Array f(Shape{4, 2}, 1.0);
  EXPECT_NEAR(opl_loss(Node::constant(f), std::vector<int>{0, 0, 1, 1}).value.item(), 1.0, 1e-12);
}

TEST(Opl, FewerThanTwoSamplesIsEmpty) {
  const LossValue l = opl_loss(Node::constant(Array(Shape{1, 3}, 1.0)), std::vector<int>{0});
  EXPECT_TRUE(l.empty);
  EXPECT_EQ(l.value.item(), 0.0);
}

TEST(Opl, InvariantToPerSampleRescaling) {
  Rng rng(21);
  const std::vector<int> labels{0, 1, 0, 2, 1, 2, 0};
  for (int trial = 0; trial < 10; ++trial) {
    const Array f = gen::uniform_array(rng, {7, 5});
    Array g = f;
    for (std::size_t i = 0; i < 7; ++i) {
      const double a = rng.uniform(0.01, 100.0);
      for (std::size_t k = 0; k < 5; ++k) g[i * 5 + k] *= a;
    }
    EXPECT_NEAR(opl_loss(Node::constant(f), labels).value.item(), opl_loss(Node::constant(g), labels).value.item(),
                1e-12);
  }
}

TEST(Giou, IdenticalBoxes) {
  const Array b(Shape{1, 4}, std::vector<double>{1, 2, 5, 7});
  EXPECT_NEAR(giou_loss(Node::constant(b), b).value.item(), 0.0, 1e-15);
}

TEST(Giou, HandComputedOverlap) {
  const Array p(Shape{1, 4}, std::vector<double>{0, 0, 2, 2});
  const Array g(Shape{1, 4}, std::vector<double>{1, 1, 3, 3});
  // I = 1, U = 7, E = 9.
  EXPECT_NEAR(giou_loss(Node::constant(p), g).value.item(), 1.0 - (1.0 / 7.0 - 2.0 / 9.0), 1e-12);
  EXPECT_NEAR(giou_loss(Node::constant(p), g).value.item(), 1.079365, 1e-6);
  const std::array<double, 4> a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_NEAR(generalized_iou(a, b), 1.0 / 7.0 - 2.0 / 9.0, 1e-15);
}

TEST(Giou, DegenerateGroundTruth) {
  const Array p(Shape{1, 4}, std::vector<double>{0, 0, 2, 2});
  EXPECT_THROW(giou_loss(Node::constant(p), Array(Shape{1, 4}, std::vector<double>{1, 1, 1, 3})), ContractError);
}

TEST(Giou, DisjointBoxesApproachTwo) {
  const Array p(Shape{1, 4}, std::vector<double>{0, 0, 1, 1});
  const Array g(Shape{1, 4}, std::vector<double>{99, 99, 100, 100});
  const double l = giou_loss(Node::constant(p), g).value.item();
  EXPECT_GT(l, 1.99);
  EXPECT_LE(l, 2.0);
}

TEST(Centerness, ZeroLogitTargetOne) {
  EXPECT_NEAR(centerness_loss(Node::constant(Array(Shape{1})), std::vector<double>{1.0}).value.item(), std::log(2.0),
              1e-15);
}

TEST(Centerness, TargetOutsideUnitInterval) {
  EXPECT_THROW(centerness_loss(Node::constant(Array(Shape{1})), std::vector<double>{1.2}), ContractError);
}

TEST(Losses, NonNegativeOnSeededInputs) {
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    const Array x = gen::uniform_array(rng, {6, 4}, -8, 8);
    Array t(Shape{6, 4});
    std::vector<int> labels;
    for (std::size_t i = 0; i < 6; ++i) {
      const auto c = static_cast<std::size_t>(rng.uniform_int(0, 4));
      if (c < 4) t[i * 4 + c] = 1.0;
      labels.push_back(static_cast<int>(std::min<std::size_t>(c, 3)));
    }
    EXPECT_GE(sigmoid_focal_loss(Node::constant(x), t).value.item(), 0.0);
    EXPECT_GE(softmax_cross_entropy(Node::constant(x), labels).value.item(), 0.0);
    EXPECT_GE(opl_loss(Node::constant(x), labels).value.item(), 0.0);
    std::vector<double> ct;
    for (int i = 0; i < 6; ++i) ct.push_back(rng.uniform());
    EXPECT_GE(centerness_loss(Node::constant(gen::uniform_array(rng, {6}, -8, 8)), ct).value.item(), 0.0);
  }
}

}  // namespace
}  // namespace omlab

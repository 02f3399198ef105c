#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "rfcn/head.hpp"

using namespace rfcn;

TEST(Vote, AveragesBins) {
  PooledBins bins(1, 2, 3);
  int v = 1;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      bins.at(0, 0, i, j) = v++;
      bins.at(0, 1, i, j) = -2.0;
    }
  const Matrix m = vote(bins);
  EXPECT_DOUBLE_EQ(m(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(m(0, 1), -2.0);
}

TEST(Vote, BoxVoteNeedsFourGroups) {
  EXPECT_THROW(vote_box(PooledBins(1, 3, 3)), std::invalid_argument);
  const Matrix m = vote_box(PooledBins(2, 4, 3, 0.25));
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 4u);
  EXPECT_DOUBLE_EQ(m(1, 3), 0.25);
}

TEST(Vote, BackwardIsAdjoint) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  PooledBins bins(3, 2, 3);
  for (double& x : bins.values()) x = d(rng);
  Matrix g(3, 2);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) g(r, c) = d(rng);
  const Matrix fwd = vote(bins);
  const PooledBins back = vote_backward(g, 3);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) lhs += fwd(r, c) * g(r, c);
  for (std::size_t i = 0; i < bins.values().size(); ++i) rhs += bins.values()[i] * back.values()[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Softmax, UniformLogitsGiveLogClassCount) {
  const std::vector<double> logits(21, 0.0);
  EXPECT_NEAR(softmax_ce(logits, 0).loss, std::log(21.0), 1e-12);
  EXPECT_NEAR(softmax_ce(logits, 0).loss, 3.044522, 1e-6);
}

TEST(Softmax, LargeLogitsStayFinite) {
  const std::vector<double> logits{1000.0, 0.0};
  const SoftmaxCe right = softmax_ce(logits, 0);
  const SoftmaxCe wrong = softmax_ce(logits, 1);
  EXPECT_TRUE(std::isfinite(right.loss));
  EXPECT_NEAR(right.loss, 0.0, 1e-12);
  EXPECT_NEAR(wrong.loss, 1000.0, 1e-9);
  EXPECT_NEAR(wrong.probs[0], 1.0, 1e-12);
}

TEST(Softmax, KnownValue) {
  const std::vector<double> logits{1.0, 2.0, 3.0};
  const SoftmaxCe ce = softmax_ce(logits, 2);
  EXPECT_NEAR(ce.loss, 0.407606, 1e-6);
  double sum = 0.0;
  for (double p : ce.probs) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-15);
  EXPECT_NEAR(ce.grad_logits[2], ce.probs[2] - 1.0, 1e-15);
  EXPECT_NEAR(ce.grad_logits[0], ce.probs[0], 1e-15);
}

TEST(Softmax, RejectsBadLabel) {
  const std::vector<double> logits{1.0, 2.0};
  EXPECT_THROW(softmax_ce(logits, 2), std::invalid_argument);
  EXPECT_THROW(softmax_ce(logits, -1), std::invalid_argument);
}

TEST(SmoothL1, QuadraticAndLinearRegions) {
  const SmoothL1 a = smooth_l1(BoxDelta{0.5, 0, 0, 0}, BoxDelta{});
  EXPECT_DOUBLE_EQ(a.loss, 0.125);
  EXPECT_DOUBLE_EQ(a.grad.tx, 0.5);
  const SmoothL1 b = smooth_l1(BoxDelta{0, 2.0, 0, 0}, BoxDelta{});
  EXPECT_DOUBLE_EQ(b.loss, 1.5);
  EXPECT_DOUBLE_EQ(b.grad.ty, 1.0);
  const SmoothL1 c = smooth_l1(BoxDelta{0, 0, -3.0, 0}, BoxDelta{});
  EXPECT_DOUBLE_EQ(c.grad.tw, -1.0);
}

TEST(SmoothL1, ContinuousAtBeta) {
  const double below = smooth_l1(BoxDelta{1.0 - 1e-9, 0, 0, 0}, BoxDelta{}).loss;
  const double above = smooth_l1(BoxDelta{1.0 + 1e-9, 0, 0, 0}, BoxDelta{}).loss;
  EXPECT_NEAR(below, above, 1e-8);
}

TEST(JointLoss, CombinesTerms) {
  const std::vector<double> logits{1.0, 2.0, 3.0};
  const JointLoss j = joint_loss(logits, BoxDelta{2.0, 0, 0, 0}, 2, BoxDelta{}, {});
  EXPECT_NEAR(j.loss, 1.9076, 1e-4);
  EXPECT_NEAR(j.cls_loss, 0.407606, 1e-6);
  EXPECT_DOUBLE_EQ(j.reg_loss, 1.5);

  LossConfig half;
  half.lambda = 0.5;
  const JointLoss h = joint_loss(logits, BoxDelta{2.0, 0, 0, 0}, 2, BoxDelta{}, half);
  EXPECT_NEAR(h.loss, 0.407606 + 0.75, 1e-6);
  EXPECT_DOUBLE_EQ(h.grad_delta.tx, 0.5);
}

TEST(JointLoss, BackgroundHasNoBoxTerm) {
  const std::vector<double> logits{0.3, -0.2};
  const JointLoss j = joint_loss(logits, BoxDelta{5, 5, 5, 5}, 0, std::nullopt, {});
  EXPECT_DOUBLE_EQ(j.reg_loss, 0.0);
  EXPECT_EQ(j.grad_delta, BoxDelta{});
  EXPECT_DOUBLE_EQ(j.loss, softmax_ce(logits, 0).loss);
}

TEST(JointLoss, TargetPresenceMustMatchLabel) {
  const std::vector<double> logits{0.3, -0.2};
  EXPECT_THROW(joint_loss(logits, BoxDelta{}, 1, std::nullopt, {}), std::invalid_argument);
  EXPECT_THROW(joint_loss(logits, BoxDelta{}, 0, BoxDelta{}, {}), std::invalid_argument);
}

TEST(JointLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 1.5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> logits(4);
    for (double& v : logits) v = d(rng);
    std::vector<double> pred{d(rng), d(rng), d(rng), d(rng)};
    const BoxDelta target{d(rng), d(rng), d(rng), d(rng)};
    const int label = trial % 4;
    const std::optional<BoxDelta> tgt = label > 0 ? std::optional(target) : std::nullopt;
    LossConfig cfg;
    cfg.lambda = 0.7;
    auto f = [&] { return joint_loss(logits, BoxDelta::from(pred), label, tgt, cfg).loss; };
    const JointLoss j = joint_loss(logits, BoxDelta::from(pred), label, tgt, cfg);
    const auto nl = rfcn::testing::numeric_gradient(std::span<double>(logits), f);
    const auto np = rfcn::testing::numeric_gradient(std::span<double>(pred), f);
    const auto gd = j.grad_delta.as_array();
    EXPECT_LT(rfcn::testing::relative_error(j.grad_logits, nl), 1e-6);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(gd[i], np[i], 1e-6);
  }
}

TEST(BoxCoding, KnownEncoding) {
  const BoxDelta t = encode_box(Box{8, 8, 4, 4}, Box{8, 8, 8, 4});
  EXPECT_DOUBLE_EQ(t.tx, 0.5);
  EXPECT_DOUBLE_EQ(t.ty, 0.0);
  EXPECT_NEAR(t.tw, std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(t.th, 0.0);
}

TEST(BoxCoding, RoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(0.0, 80.0), size(2.0, 60.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Box p{pos(rng), pos(rng), size(rng), size(rng)};
    const Box g{pos(rng), pos(rng), size(rng), size(rng)};
    const Box back = decode_box(p, encode_box(p, g));
    EXPECT_NEAR(back.x0, g.x0, 1e-9);
    EXPECT_NEAR(back.y0, g.y0, 1e-9);
    EXPECT_NEAR(back.w, g.w, 1e-9);
    EXPECT_NEAR(back.h, g.h, 1e-9);
  }
}

TEST(BoxCoding, DecodeClampsScale) {
  const Box p{0, 0, 10, 10};
  const Box b = decode_box(p, BoxDelta{0, 0, 50.0, -50.0});
  EXPECT_NEAR(b.w, 10.0 * 1000.0 / 16.0, 1e-9);
  EXPECT_NEAR(b.h, 10.0 * 16.0 / 1000.0, 1e-12);
  EXPECT_TRUE(std::isfinite(b.x0));
}

TEST(BoxCoding, RejectsDegenerateBoxes) {
  EXPECT_THROW(encode_box(Box{0, 0, 0, 4}, Box{0, 0, 4, 4}), std::invalid_argument);
}

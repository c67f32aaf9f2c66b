#include <array>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "rgin/gradcheck_suite.hpp"
#include "rgin/head.hpp"

using namespace rgin;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = n(rng);
  return Tensor<double>(std::move(s), std::move(v));
}

DecodedBox decode_one(std::array<double, 5> t, std::size_t row = 0, std::size_t col = 0,
                      AnchorPrior p = {1.5, 2.0}) {
  return decode_entry(std::span<const double, 5>(t), row, col, 0, p);
}

const double kLn2 = std::log(2.0);

}  // namespace

TEST(GroundingHead, FuseWithZeroTextIsZero) {
  Init init(1);
  GroundingHead<double> h(init, 6, 4, 5, 3, kLeakySlope);
  Tape<double> tape(false);
  auto fm = h.fuse(tape, random_tensor({2, 3, 3, 6}, 2), Tensor<double>::zeros({2, 4}));
  EXPECT_EQ(fm.shape(), (Shape{2, 3, 3, 5}));
  for (double v : fm.data()) EXPECT_EQ(v, 0.0);
}

TEST(GroundingHead, FuseMatchesElementwiseOracle) {
  Init init(3);
  GroundingHead<double> h(init, 3, 2, 4, 1, kLeakySlope);
  auto fv = random_tensor({1, 1, 2, 3}, 4);
  auto ft = random_tensor({1, 2}, 5);
  Tape<double> tape(false);
  auto fm = h.fuse(tape, fv, ft);
  auto act = [](double x) { return x >= 0 ? x : kLeakySlope * x; };
  for (std::size_t cell = 0; cell < 2; ++cell)
    for (std::size_t j = 0; j < 4; ++j) {
      double v = 0, t = 0;
      for (std::size_t i = 0; i < 3; ++i) v += fv[cell * 3 + i] * h.visual.weight[i * 4 + j];
      for (std::size_t i = 0; i < 2; ++i) t += ft[i] * h.textual.weight[i * 4 + j];
      EXPECT_NEAR(fm[cell * 4 + j], act(v) * act(t), 1e-12);
    }
}

TEST(GroundingHead, PredictRawShapeBiasAndMatmul) {
  Init init(6);
  GroundingHead<double> h(init, 6, 4, 5, 3, kLeakySlope);
  for (std::size_t i = 0; i < 15; ++i) h.predict.bias.mutable_data()[i] = 0.1 * double(i);
  Tape<double> tape(false);
  auto zero = h.predict_raw(tape, Tensor<double>::zeros({2, 3, 3, 5}));
  EXPECT_EQ(zero.shape(), (Shape{2, 3, 3, 15}));
  for (std::size_t i = 0; i < zero.size(); ++i) EXPECT_EQ(zero[i], 0.1 * double(i % 15));
  auto fm = random_tensor({1, 2, 2, 5}, 7);
  auto raw = h.predict_raw(tape, fm);
  for (std::size_t cell = 0; cell < 4; ++cell)
    for (std::size_t o = 0; o < 15; ++o) {
      double s = h.predict.bias[o];
      for (std::size_t i = 0; i < 5; ++i) s += fm[cell * 5 + i] * h.predict.weight[i * 15 + o];
      EXPECT_NEAR(raw[cell * 15 + o], s, 1e-12);
    }
}

TEST(Decode, ZeroLogitsSitAtCellCenterWithPriorSize) {
  auto d = decode_one({0, 0, 0, 0, 0}, 2, 4);
  EXPECT_DOUBLE_EQ(d.box.cx, 4.5);
  EXPECT_DOUBLE_EQ(d.box.cy, 2.5);
  EXPECT_DOUBLE_EQ(d.box.w, 1.5);
  EXPECT_DOUBLE_EQ(d.box.h, 2.0);
  EXPECT_DOUBLE_EQ(d.confidence, 0.5);
}

TEST(Decode, SizeAndOffsetValues) {
  auto d = decode_one({1.0, 0, kLn2, -kLn2, 3.0}, 0, 3);
  EXPECT_NEAR(d.box.cx, 3.7310586, 1e-7);
  EXPECT_NEAR(d.box.w, 3.0, 1e-12);
  EXPECT_NEAR(d.box.h, 1.0, 1e-12);
  EXPECT_NEAR(d.confidence, 1 / (1 + std::exp(-3.0)), 1e-15);
  auto clamped = decode_one({0, 0, 20, -20, 0});
  EXPECT_NEAR(clamped.box.w, 1.5 * std::exp(kMaxLogSize), 1e-9);
  EXPECT_NEAR(clamped.box.h, 2.0 * std::exp(-kMaxLogSize), 1e-15);
  EXPECT_THROW(decode_one({NAN, 0, 0, 0, 0}), std::invalid_argument);
}

TEST(Decode, LayoutIsRowColPrior) {
  std::vector<AnchorPrior> priors{{1, 1}, {2, 2}};
  std::vector<double> raw(2 * 2 * 2 * 5, 0.0);
  raw[((1 * 2 + 0) * 2 + 1) * 5 + 4] = 5.0;  // row 1, col 0, prior 1
  auto boxes = decode<double>(raw, 2, priors);
  ASSERT_EQ(boxes.size(), 8u);
  auto best = select_prediction(boxes);
  EXPECT_EQ(best.row, 1u);
  EXPECT_EQ(best.col, 0u);
  EXPECT_EQ(best.prior, 1u);
  EXPECT_DOUBLE_EQ(best.box.w, 2.0);
  EXPECT_THROW(decode<double>(std::span<const double>(raw.data(), 39), 2, priors), DimensionError);
}

TEST(Select, TieBreakAndSaturation) {
  std::vector<double> raw(3 * 3 * 5, 0.0);
  std::vector<AnchorPrior> priors{{1, 1}};
  auto tie = select_prediction(decode<double>(raw, 3, priors));
  EXPECT_EQ(tie.row, 0u);
  EXPECT_EQ(tie.col, 0u);
  raw[(1 * 3 + 2) * 5 + 4] = 40;
  raw[(2 * 3 + 1) * 5 + 4] = 50;  // both confidences round to 1.0
  auto best = select_prediction(decode<double>(raw, 3, priors));
  EXPECT_EQ(best.row, 2u);
  EXPECT_EQ(best.col, 1u);
  EXPECT_THROW(select_prediction({}), std::invalid_argument);
}

TEST(Select, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0, 2);
  std::vector<AnchorPrior> priors{{1, 1}, {2, 1}};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> raw(4 * 4 * 2 * 5);
    for (auto& x : raw) x = n(rng);
    auto a = select_prediction(decode<double>(raw, 4, priors));
    for (std::size_t i = 4; i < raw.size(); i += 5) raw[i] = 3 * raw[i] + 1;
    auto b = select_prediction(decode<double>(raw, 4, priors));
    EXPECT_EQ(std::tie(a.row, a.col, a.prior), std::tie(b.row, b.col, b.prior));
  }
}

TEST(Iou, Properties) {
  Box a{1, 1, 2, 2}, b{2, 1, 2, 2};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(a, b), iou(b, a));
  EXPECT_DOUBLE_EQ(iou(a, Box{5, 5, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{3, 1, 2, 2}), 0.0);  // touching edges
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 4, 4}, Box{0, 0, 2, 2}), 0.25);
  EXPECT_THROW(iou(a, Box{0, 0, 0, 1}), std::invalid_argument);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.1, 3);
  for (int i = 0; i < 200; ++i) {
    Box p{u(rng), u(rng), u(rng), u(rng)}, q{u(rng), u(rng), u(rng), u(rng)};
    double v = iou(p, q);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(v, iou(q, p));
    EXPECT_NEAR(iou(p.scaled(2.5), q.scaled(2.5)), v, 1e-12);
  }
}

TEST(AssignTargets, MatchingBoxIsPositiveAndInvertsDecode) {
  std::vector<AnchorPrior> priors{{1, 1}, {2, 2}, {3, 3}};
  Box gt{3.3, 1.7, 2.0, 2.0};
  auto a = assign_targets(gt, priors, 6);
  EXPECT_EQ(a.positive.size(), 6u * 6u * 3u);
  const std::size_t home = a.index(1, 3, 1);
  EXPECT_EQ(a.best, home);
  EXPECT_EQ(a.positive[home], 1);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t q = 0; q < 3; ++q) {
        const double placed = iou({c + 0.5, r + 0.5, priors[q].pw, priors[q].ph}, gt);
        EXPECT_EQ(a.positive[a.index(r, c, q)] != 0, placed > 0.5 || a.index(r, c, q) == a.best);
      }
  const auto& e = a.encoded[home];
  auto d = decode_one({e[0], e[1], e[2], e[3], 0}, 1, 3, priors[1]);
  EXPECT_NEAR(d.box.cx, gt.cx, 1e-12);
  EXPECT_NEAR(d.box.cy, gt.cy, 1e-12);
  EXPECT_NEAR(d.box.w, gt.w, 1e-12);
  EXPECT_NEAR(d.box.h, gt.h, 1e-12);
  EXPECT_NEAR(a.sigma_xy[home][0], 0.3, 1e-12);
  EXPECT_NEAR(a.sigma_xy[home][1], 0.7, 1e-12);
}

TEST(AssignTargets, ContainedBoxTieGoesToCenterCell) {
  // The box fits inside the big prior placed at several cells, so their IoUs tie.
  std::vector<AnchorPrior> priors{{4, 4}};
  Box gt{3.7, 2.2, 0.5, 0.5};
  auto a = assign_targets(gt, priors, 6);
  EXPECT_EQ(a.best, a.index(2, 3, 0));
  auto d = decode_one({a.encoded[a.best][0], a.encoded[a.best][1], a.encoded[a.best][2], a.encoded[a.best][3], 0},
                      2, 3, priors[0]);
  EXPECT_NEAR(d.box.cx, gt.cx, 1e-12);
  EXPECT_NEAR(d.box.cy, gt.cy, 1e-12);
}

TEST(AssignTargets, TinyBoxForcesOnePositive) {
  std::vector<AnchorPrior> priors{{1, 1}, {2, 2}};
  auto a = assign_targets(Box{2.5, 2.5, 0.1, 0.1}, priors, 6);
  EXPECT_EQ(a.num_positive(), 1u);
  EXPECT_EQ(a.best, a.index(2, 2, 0));
}

TEST(AssignTargets, Errors) {
  std::vector<AnchorPrior> priors{{1, 1}};
  EXPECT_THROW(assign_targets(Box{6.5, 1, 1, 1}, priors, 6), std::invalid_argument);
  EXPECT_THROW(assign_targets(Box{1, 1, 0, 1}, priors, 6), std::invalid_argument);
  EXPECT_THROW(assign_targets(Box{1, 1, 1, 1}, {}, 6), std::invalid_argument);
}

TEST(DetectionLoss, ZeroLogitsClosedForm) {
  std::vector<AnchorPrior> priors{{1, 1}, {3, 3}};
  // Exactly one positive: the prior matches the box size, so the size term is zero.
  auto a = assign_targets(Box{2.5, 3.5, 1, 1}, priors, 6);
  ASSERT_EQ(a.num_positive(), 1u);
  Tape<double> tape(false);
  DetectionLossParts parts;
  auto l = detection_loss(tape, Tensor<double>::zeros({1, 6, 6, 10}), {a}, 1.0, &parts);
  EXPECT_NEAR(parts.box, 2 * kLn2, 1e-12);
  EXPECT_NEAR(parts.confidence, kLn2, 1e-12);
  EXPECT_NEAR(l.item(), 3 * kLn2, 1e-12);
}

TEST(DetectionLoss, PartsAddUpAndBatchAverages) {
  std::vector<AnchorPrior> priors{{1, 1}, {2, 2}};
  auto a = assign_targets(Box{1.2, 4.6, 0.9, 1.1}, priors, 6);
  auto b = assign_targets(Box{4.4, 0.7, 2.1, 1.8}, priors, 6);
  ASSERT_EQ(a.num_positive(), b.num_positive());
  auto ra = random_tensor({1, 6, 6, 10}, 10), rb = random_tensor({1, 6, 6, 10}, 11);
  std::vector<double> both(ra.data().begin(), ra.data().end());
  both.insert(both.end(), rb.data().begin(), rb.data().end());
  Tape<double> tape(false);
  DetectionLossParts parts;
  double la = detection_loss(tape, ra, {a}).item();
  double lb = detection_loss(tape, rb, {b}).item();
  double lab = detection_loss(tape, Tensor<double>({2, 6, 6, 10}, both), {a, b}, 1.0, &parts).item();
  EXPECT_NEAR(lab, 0.5 * (la + lb), 1e-12);
  EXPECT_NEAR(parts.box + parts.confidence, lab, 1e-12);
}

TEST(DetectionLoss, SumReductionPoolsEntriesPerSample) {
  std::vector<AnchorPrior> priors{{1, 1}, {3, 3}};
  auto a = assign_targets(Box{2.5, 3.5, 1, 1}, priors, 6);
  Tape<double> tape(false);
  DetectionLossParts parts;
  auto l = detection_loss(tape, Tensor<double>::zeros({1, 6, 6, 10}), {a}, 1.0, &parts, Reduction::sum);
  EXPECT_NEAR(parts.box, 2 * kLn2, 1e-12);
  EXPECT_NEAR(parts.confidence, 72 * kLn2, 1e-12);
  EXPECT_NEAR(l.item(), 74 * kLn2, 1e-12);

  // Per sample: mean-pooled terms times their entry counts; batches still average.
  std::vector<AnchorPrior> two{{1, 1}, {2, 2}};
  auto p = assign_targets(Box{1.2, 4.6, 0.9, 1.1}, two, 6);
  auto q = assign_targets(Box{4.4, 0.7, 2.1, 1.8}, two, 6);
  auto rp = random_tensor({1, 6, 6, 10}, 20), rq = random_tensor({1, 6, 6, 10}, 21);
  DetectionLossParts mp, mq, sp, sq, sb;
  detection_loss(tape, rp, {p}, 1.0, &mp);
  detection_loss(tape, rq, {q}, 1.0, &mq);
  detection_loss(tape, rp, {p}, 1.0, &sp, Reduction::sum);
  detection_loss(tape, rq, {q}, 1.0, &sq, Reduction::sum);
  EXPECT_NEAR(sp.box, mp.box * double(p.num_positive()), 1e-12);
  EXPECT_NEAR(sp.confidence, mp.confidence * 72, 1e-12);
  std::vector<double> both(rp.data().begin(), rp.data().end());
  both.insert(both.end(), rq.data().begin(), rq.data().end());
  auto lb = detection_loss(tape, Tensor<double>({2, 6, 6, 10}, both), {p, q}, 1.0, &sb, Reduction::sum);
  EXPECT_NEAR(sb.box, 0.5 * (sp.box + sq.box), 1e-12);
  EXPECT_NEAR(sb.confidence, 0.5 * (sp.confidence + sq.confidence), 1e-12);
  EXPECT_NEAR(lb.item(), sb.box + sb.confidence, 1e-12);
}

TEST(DetectionLoss, ReductionNames) {
  EXPECT_EQ(parse_reduction("sum"), Reduction::sum);
  EXPECT_EQ(reduction_name(parse_reduction("mean")), "mean");
  EXPECT_THROW(parse_reduction("max"), std::invalid_argument);
}

TEST(DetectionLoss, SaturatedPerfectPredictionIsNearZero) {
  std::vector<AnchorPrior> priors{{1, 1}};
  Box gt{2.5, 2.5, 1.3, 0.8};
  auto a = assign_targets(gt, priors, 4);
  std::vector<double> raw(4 * 4 * 5, 0.0);
  for (std::size_t e = 0; e < 16; ++e) {
    raw[e * 5 + 4] = a.positive[e] ? 30 : -30;
    for (int f = 0; f < 4; ++f) raw[e * 5 + f] = a.encoded[e][f];
  }
  Tape<double> tape(false);
  DetectionLossParts parts;
  detection_loss(tape, Tensor<double>({1, 4, 4, 5}, raw), {a}, 1.0, &parts);
  EXPECT_LT(parts.confidence, 1e-12);
  // BCE against a soft target bottoms out at the target's entropy, not zero.
  const double sx = a.sigma_xy[a.best][0], sy = a.sigma_xy[a.best][1];
  auto entropy = [](double p) { return -(p * std::log(p) + (1 - p) * std::log(1 - p)); };
  EXPECT_NEAR(parts.box, entropy(sx) + entropy(sy), 1e-12);
}

TEST(DetectionLoss, NegativeWeightScalesOnlyNegatives) {
  std::vector<AnchorPrior> priors{{1, 1}};
  auto a = assign_targets(Box{0.5, 0.5, 1, 1}, priors, 2);
  ASSERT_EQ(a.num_positive(), 1u);
  Tape<double> tape(false);
  DetectionLossParts p1, p0;
  detection_loss(tape, Tensor<double>::zeros({1, 2, 2, 5}), {a}, 1.0, &p1);
  detection_loss(tape, Tensor<double>::zeros({1, 2, 2, 5}), {a}, 0.0, &p0);
  EXPECT_NEAR(p1.confidence, kLn2, 1e-12);
  EXPECT_NEAR(p0.confidence, kLn2 / 4.0, 1e-12);  // averaged over all four entries
}

TEST(TotalLoss, Combination) {
  Tape<double> tape(false);
  auto det = Tensor<double>::scalar(0.4), att = Tensor<double>::scalar(2.0);
  EXPECT_NEAR(total_loss(tape, det, att, 0.05).item(), 0.5, 1e-15);
  EXPECT_TRUE(total_loss(tape, det, att, 0.0).same_storage(det));
  EXPECT_TRUE(total_loss(tape, det, Tensor<double>(), 0.3).same_storage(det));
  EXPECT_THROW(total_loss(tape, det, att, -0.1), std::invalid_argument);
}

TEST(GroundingHead, Gradients) {
  for (const auto& c : gradsuite::block_cases())
    if (c.name == "grounding_head") {
      auto r = c.run({});
      EXPECT_TRUE(r.passed) << r.max_rel_error;
      return;
    }
  FAIL() << "head gradient case missing";
}

#include <gtest/gtest.h>

#include "support.hpp"

using namespace spikeforge;

namespace {

GridPrediction constant_prediction(GridConfig g, double v) { return {g, Tensor({g.outputs()}, v)}; }

BoundingBox gt(double x0, double y0, double x1, double y1) { return {x0, y0, x1, y1, 1.0, 0}; }

}  // namespace

TEST(Iou, UnitCases) {
  EXPECT_DOUBLE_EQ(iou(gt(0, 0, 2, 2), gt(1, 0, 3, 2)), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(gt(0, 0, 2, 2), gt(0, 0, 2, 2)), 1.0);
  EXPECT_DOUBLE_EQ(iou(gt(0, 0, 1, 1), gt(2, 2, 3, 3)), 0.0);
  EXPECT_DOUBLE_EQ(iou(gt(0, 0, 4, 4), gt(1, 1, 3, 3)), 0.25);
  EXPECT_DOUBLE_EQ(iou(gt(0, 0, 1, 1), gt(1, 0, 2, 1)), 0.0);  // touching edges
  EXPECT_DOUBLE_EQ(iou(gt(0, 0, 0, 0), gt(0, 0, 0, 0)), 0.0);
}

TEST(Decode, CellOffsetsAndSizes) {
  GridPrediction p = constant_prediction({4, 2}, 0.0);
  p.values[p.index(1, 2, 0, 0)] = 0.5;
  p.values[p.index(1, 2, 0, 1)] = 0.5;
  p.values[p.index(1, 2, 0, 2)] = 0.25;
  p.values[p.index(1, 2, 0, 3)] = 0.25;
  p.values[p.index(1, 2, 0, 4)] = 0.9;
  const BoundingBox b = grid_box(p, 1, 2, 0, 128, 128);
  EXPECT_DOUBLE_EQ(b.center_x(), 80);
  EXPECT_DOUBLE_EQ(b.center_y(), 48);
  EXPECT_DOUBLE_EQ(b.width(), 32);
  EXPECT_DOUBLE_EQ(b.height(), 32);

  const auto dets = decode_boxes(p, 128, 128);
  ASSERT_EQ(dets.size(), 16u);
  const auto& d = dets[1 * 4 + 2];
  EXPECT_DOUBLE_EQ(d.confidence, 0.9);
  EXPECT_DOUBLE_EQ(d.box.x_min, 64);
}

TEST(Decode, BestOfBPerCellAndClamped) {
  GridPrediction p = constant_prediction({2, 2}, 0.9);
  p.values[p.index(0, 0, 0, 4)] = 0.2;
  p.values[p.index(0, 0, 1, 4)] = 0.7;
  const auto dets = decode_boxes(p, 100, 100);
  EXPECT_DOUBLE_EQ(dets[0].confidence, 0.7);
  for (const auto& d : dets) {
    EXPECT_GE(d.box.x_min, 0);
    EXPECT_LE(d.box.x_max, 100);
  }
}

TEST(Decode, HeadShapeChecked) {
  HeadConfig cfg;
  const auto hp = init_head(cfg, 16, 0);
  EXPECT_THROW(decode_head(Tensor({8}), hp, cfg), Error);
  const auto p = decode_head(Tensor({16}, 1.0), hp, cfg);
  for (double v : p.values.vec()) {
    EXPECT_GT(v, 0);
    EXPECT_LT(v, 1);
  }
}

TEST(Decode, NormKinds) {
  HeadConfig cfg;
  cfg.grid = {1, 1};
  auto hp = init_head(cfg, 4, 1);
  const Tensor x({4}, {1, 2, 3, 4});
  cfg.norm = NormKind::none;
  EXPECT_EQ(head_normalize(x, hp, cfg), x);
  cfg.norm = NormKind::batch;
  hp.bn_mean = Tensor({4}, 1.0);
  hp.bn_var = Tensor({4}, 4.0);
  EXPECT_NEAR(head_normalize(x, hp, cfg)[2], 1.0, 1e-5);
  cfg.norm = NormKind::layer;
  EXPECT_NEAR(head_normalize(x, hp, cfg).sum(), 0.0, 1e-12);
  EXPECT_EQ(norm_from_string(to_string(NormKind::batch)), NormKind::batch);
  EXPECT_THROW(norm_from_string("group"), Error);
}

TEST(YoloLoss, HandOracle) {
  GridPrediction p{{1, 1}, Tensor({5}, {0.5, 0.5, 0.25, 0.36, 0.8})};
  const auto L = yolo_loss(p, {gt(52, 15.5, 68, 64.5)}, {}, 100, 100);
  EXPECT_NEAR(L.coord, 0.2, 1e-12);
  EXPECT_NEAR(L.obj, 0.04, 1e-12);
  EXPECT_NEAR(L.noobj, 0.0, 1e-12);
  EXPECT_NEAR(L.total(), 0.24, 1e-12);
}

TEST(YoloLoss, NoObjectCellsPenalisedByConfidence) {
  GridPrediction p = constant_prediction({2, 1}, 0.5);
  const auto L = yolo_loss(p, {gt(10, 10, 30, 30)}, {}, 100, 100);
  EXPECT_NEAR(L.noobj, 3 * 0.5 * 0.25, 1e-12);
  EXPECT_NEAR(L.grad[p.index(1, 1, 0, 4)], 0.5, 1e-12);
  EXPECT_NEAR(L.grad[p.index(1, 1, 0, 0)], 0.0, 1e-12);
}

TEST(YoloLoss, ResponsiblePredictorHasHighestIou) {
  GridPrediction p = constant_prediction({1, 2}, 0.5);
  // Box 0 is tiny, box 1 matches the target size.
  p.values[p.index(0, 0, 0, 2)] = 0.01;
  p.values[p.index(0, 0, 0, 3)] = 0.01;
  p.values[p.index(0, 0, 1, 2)] = 0.5;
  p.values[p.index(0, 0, 1, 3)] = 0.5;
  const auto L = yolo_loss(p, {gt(25, 25, 75, 75)}, {}, 100, 100);
  EXPECT_NEAR(L.coord, 0.0, 1e-12);
  EXPECT_NEAR(L.noobj, 0.5 * 0.25, 1e-12);
  EXPECT_NEAR(L.grad[p.index(0, 0, 1, 4)], 2 * (0.5 - 1.0), 1e-12);
}

TEST(YoloLoss, EmptyGroundTruthRejected) {
  try {
    yolo_loss(constant_prediction({2, 1}, 0.5), {}, {}, 10, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoGroundTruth);
  }
}

TEST(Penalty, LambdaTimesSpikes) {
  FiringRateStats st;
  st.per_layer = {{100, 150}, {200, 50}};
  EXPECT_NEAR(firing_rate_penalty(st, {0.01}), 5.0, 1e-12);
  EXPECT_DOUBLE_EQ(firing_rate_penalty(st, {0.0}), 0.0);
  EXPECT_DOUBLE_EQ(st.total(), 500);
  EXPECT_DOUBLE_EQ(st.spikes_per_second(), 500 / 0.02);
  EXPECT_THROW(firing_rate_penalty(st, {-1.0}), Error);
}

TEST(MeanAp, ThreeFrameFixture) {
  // Frame 1 has no target, so its detection is a false positive.
  const std::vector<DetectionSet> preds{{{gt(0, 0, 10, 10), 0.9}}, {{gt(0, 0, 10, 10), 0.8}}, {{gt(5, 5, 15, 15), 0.7}}};
  const std::vector<std::vector<BoundingBox>> gts{{gt(0, 0, 10, 10)}, {}, {gt(5, 5, 15, 15)}};
  const auto r = mean_ap(preds, gts);
  EXPECT_EQ(r.num_gt, 2u);
  EXPECT_DOUBLE_EQ(r.ap, 5.0 / 6.0);
  ASSERT_EQ(r.curve.size(), 3u);
  EXPECT_DOUBLE_EQ(r.curve[1].precision, 0.5);
}

TEST(MeanAp, PerfectAndEmpty) {
  const std::vector<std::vector<BoundingBox>> gts{{gt(0, 0, 10, 10)}, {gt(20, 20, 30, 30)}};
  EXPECT_DOUBLE_EQ(mean_ap({{{gt(0, 0, 10, 10), 0.3}}, {{gt(20, 20, 30, 30), 0.6}}}, gts).ap, 1.0);
  EXPECT_DOUBLE_EQ(mean_ap({{}, {}}, gts).ap, 0.0);
  EXPECT_THROW(mean_ap({{}}, gts), Error);
  EXPECT_THROW(mean_ap({{}, {}}, {{}, {}}), Error);
}

TEST(MeanAp, DuplicateDetectionsCountOnce) {
  const std::vector<std::vector<BoundingBox>> gts{{gt(0, 0, 10, 10)}};
  const std::vector<DetectionSet> preds{{{gt(0, 0, 10, 10), 0.9}, {gt(0, 0, 10, 9), 0.8}}};
  const auto r = mean_ap(preds, gts);
  EXPECT_TRUE(r.curve[0].true_positive);
  EXPECT_FALSE(r.curve[1].true_positive);
  EXPECT_DOUBLE_EQ(r.ap, 1.0);
}

TEST(MeanAp, IouThresholdInclusive) {
  const std::vector<std::vector<BoundingBox>> gts{{gt(0, 0, 2, 2)}};
  const std::vector<DetectionSet> preds{{{gt(0, 0, 2, 1), 0.5}}};  // IoU exactly 0.5
  EXPECT_DOUBLE_EQ(mean_ap(preds, gts, 0.5).ap, 1.0);
  EXPECT_DOUBLE_EQ(mean_ap(preds, gts, 0.51).ap, 0.0);
}

TEST(MeanAp, InvariantUnderMonotoneConfidenceRemap) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0, 1), pos(0, 50);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<DetectionSet> preds;
    std::vector<std::vector<BoundingBox>> gts;
    for (int f = 0; f < 10; ++f) {
      const double x = pos(rng), y = pos(rng);
      gts.push_back({gt(x, y, x + 10, y + 10)});
      DetectionSet ds;
      for (int k = 0; k < 4; ++k) {
        const double dx = (u(rng) - 0.5) * 8, dy = (u(rng) - 0.5) * 8;
        ds.push_back({gt(x + dx, y + dy, x + dx + 10, y + dy + 10), u(rng)});
      }
      preds.push_back(ds);
    }
    const double base = mean_ap(preds, gts).ap;
    const double a = 0.1 + 3 * u(rng), b = u(rng);
    for (auto& ds : preds)
      for (auto& d : ds) d.confidence = std::exp(a * d.confidence) + b * d.confidence * d.confidence * d.confidence;
    EXPECT_DOUBLE_EQ(mean_ap(preds, gts).ap, base);
  }
}

TEST(Interchange, DetectionsJsonlRoundTrip) {
  const std::vector<DetectionSet> preds{{{gt(1, 2, 3, 4), 0.25}}, {}};
  const std::vector<std::vector<BoundingBox>> gts{{gt(1, 2, 3, 5)}, {gt(0, 0, 1, 1)}};
  std::vector<DetectionSet> p2;
  std::vector<std::vector<BoundingBox>> g2;
  detections_from_jsonl(detections_to_jsonl(preds, gts), p2, g2);
  ASSERT_EQ(p2.size(), 2u);
  EXPECT_EQ(p2[0][0].box, preds[0][0].box);
  EXPECT_DOUBLE_EQ(p2[0][0].confidence, 0.25);
  EXPECT_EQ(g2, gts);
  const auto csv = pr_curve_csv(mean_ap(preds, gts));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "rank,confidence,true_positive,precision,recall");
}

#include <gtest/gtest.h>

#include "support.hpp"

using namespace spikeforge;
using testkit::check_tape_builder;
using testkit::random_tensor;

namespace {
constexpr double kTol = 1e-4;
}

TEST(TapeGrad, Conv2d) {
  std::mt19937_64 rng(1);
  const std::vector<Tensor> in{random_tensor({2, 5, 4}, rng), random_tensor({3, 2, 3, 3}, rng)};
  EXPECT_LT(check_tape_builder([](Tape& t, const auto& v) { return t.conv2d(v[0], v[1]); }, in, 11), kTol);
}

TEST(TapeGrad, SumPool) {
  std::mt19937_64 rng(2);
  const std::vector<Tensor> in{random_tensor({2, 4, 6}, rng)};
  EXPECT_LT(check_tape_builder([](Tape& t, const auto& v) { return t.sum_pool(v[0], 2); }, in, 12), kTol);
}

TEST(TapeGrad, LinearWithBias) {
  std::mt19937_64 rng(3);
  const std::vector<Tensor> in{random_tensor({7}, rng), random_tensor({4, 7}, rng), random_tensor({4}, rng)};
  EXPECT_LT(check_tape_builder([](Tape& t, const auto& v) { return t.linear(v[0], v[1], v[2]); }, in, 13), kTol);
}

TEST(TapeGrad, LayerNorm) {
  std::mt19937_64 rng(4);
  const std::vector<Tensor> in{random_tensor({9}, rng, -2, 3), random_tensor({9}, rng), random_tensor({9}, rng)};
  EXPECT_LT(check_tape_builder([](Tape& t, const auto& v) { return t.layer_norm(v[0], v[1], v[2]); }, in, 14), kTol);
}

TEST(TapeGrad, BatchNorm) {
  std::mt19937_64 rng(5);
  const std::vector<Tensor> in{random_tensor({5, 4}, rng, -2, 3), random_tensor({4}, rng), random_tensor({4}, rng)};
  EXPECT_LT(check_tape_builder([](Tape& t, const auto& v) { return t.batch_norm(v[0], v[1], v[2]); }, in, 15), kTol);
}

TEST(TapeGrad, ElementwiseOps) {
  std::mt19937_64 rng(6);
  const std::vector<Tensor> in{random_tensor({6}, rng), random_tensor({6}, rng)};
  EXPECT_LT(check_tape_builder([](Tape& t, const auto& v) { return t.mul(t.add(v[0], v[1]), v[0]); }, in, 16), kTol);
  EXPECT_LT(check_tape_builder([](Tape& t, const auto& v) { return t.sigmoid(t.scale(v[1], 3.0)); }, in, 17), kTol);
}

TEST(TapeGrad, RowsAndReshape) {
  std::mt19937_64 rng(7);
  const std::vector<Tensor> in{random_tensor({3}, rng), random_tensor({3}, rng)};
  const auto b = [](Tape& t, const auto& v) {
    const auto m = t.stack_rows({v[0], v[1], v[0]});
    return t.reshape(t.add(t.row(m, 2), t.row(m, 1)), {1, 3});
  };
  EXPECT_LT(check_tape_builder(b, in, 18), kTol);
}

TEST(TapeGrad, DecodeHeadComposition) {
  std::mt19937_64 rng(8);
  HeadConfig cfg;
  cfg.grid = {2, 1};
  const int n_in = 6, m = cfg.grid.outputs();
  const std::vector<Tensor> in{random_tensor({n_in}, rng, 0, 4), random_tensor({n_in}, rng), random_tensor({n_in}, rng),
                               random_tensor({m, n_in}, rng), random_tensor({m}, rng)};
  const auto head = [](Tape& t, const auto& v) {
    return t.sigmoid(t.linear(t.layer_norm(v[0], v[1], v[2]), v[3], v[4]));
  };
  EXPECT_LT(check_tape_builder(head, in, 19), kTol);

  // The tape head and decode_head agree in value.
  HeadParams hp{in[1], in[2], Tensor({n_in}, 0.0), Tensor({n_in}, 1.0), in[3], in[4]};
  Tape t;
  std::vector<Tape::Var> vars;
  for (const auto& x : in) vars.push_back(t.leaf(x));
  const Tensor& tv = t.value(head(t, vars));
  const auto gp = decode_head(in[0], hp, cfg);
  for (int i = 0; i < m; ++i) EXPECT_NEAR(tv[i], gp.values[i], 1e-12);
}

TEST(TapeGrad, YoloLossAnalyticGradient) {
  std::mt19937_64 rng(9);
  const GridConfig grid{4, 2};
  std::vector<BoundingBox> gts{{10, 12, 40, 50}, {70, 64, 120, 100}};
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor values = random_tensor({grid.outputs()}, rng, 0.05, 0.95);
    const auto L = yolo_loss({grid, values}, gts, {}, 128, 128);
    const auto num = testkit::numeric_grad(
        [&](const std::vector<Tensor>& x) { return yolo_loss({grid, x[0]}, gts, {}, 128, 128).total(); }, {values});
    EXPECT_LT(testkit::relative_error({L.grad}, num), kTol);
  }
}

TEST(Tape, GradientAccumulatesOverReuse) {
  Tape t;
  const auto x = t.parameter(Tensor({2}, {1.0, 2.0}));
  const auto y = t.sum(t.add(x, x));
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 2.0);
  EXPECT_DOUBLE_EQ(t.grad(x)[1], 2.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape t;
  const auto c = t.leaf(Tensor({2}, 3.0));
  const auto p = t.parameter(Tensor({2}, 1.0));
  t.backward(t.sum(t.mul(c, p)));
  EXPECT_FALSE(t.reached(c));
  EXPECT_DOUBLE_EQ(t.grad(p)[1], 3.0);
  EXPECT_DOUBLE_EQ(t.grad(c)[0], 0.0);
}

TEST(Tape, BackwardNeedsScalarRoot) {
  Tape t;
  const auto p = t.parameter(Tensor({2}, 1.0));
  EXPECT_THROW(t.backward(p), Error);
}

TEST(Tape, SoftResetIsDetached) {
  Tape t;
  const auto v = t.parameter(Tensor({1}, 2.5));
  const auto s = t.map(v, [](double u) { return std::floor(u); }, [](double) { return 7.0; });
  const auto u = t.subtract_detached(v, s, 1.0);
  EXPECT_DOUBLE_EQ(t.value(u)[0], 0.5);
  t.backward(t.sum(u));
  EXPECT_DOUBLE_EQ(t.grad(v)[0], 1.0);  // no contribution through s
}

TEST(Tape, SurrogateUsedOnTheWayBack) {
  Tape t;
  const auto v = t.parameter(Tensor({1}, 0.8));
  const auto sg = SurrogateConfig::for_layer(SpikeMode::single, 1.0);
  const auto s = t.map(v, [](double u) { return spike_count(u, 1.0, SpikeMode::single); },
                       [sg](double u) { return surrogate_grad(u, sg); });
  t.backward(t.sum(s));
  EXPECT_DOUBLE_EQ(t.value(s)[0], 0.0);
  EXPECT_NEAR(t.grad(v)[0], 10.0 * std::exp(-2.0), 1e-12);
}

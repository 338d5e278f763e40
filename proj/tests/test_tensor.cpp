#include <gtest/gtest.h>

#include "spikeforge/tensor.hpp"
#include "support.hpp"

using namespace spikeforge;

TEST(Conv2d, OnesKernelCountsNeighbours) {
  const Tensor x({1, 4, 4}, 1.0);
  const Tensor k({1, 1, 3, 3}, 1.0);
  const Tensor y = conv2d(x, k);
  EXPECT_DOUBLE_EQ(y.at(0, 1, 1), 9);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 4);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 2), 6);
  EXPECT_DOUBLE_EQ(y.sum(), 4 * 4 + 8 * 6 + 4 * 9);
}

TEST(Conv2d, MatchesDirectLoop) {
  std::mt19937_64 rng(1);
  const Tensor x = testkit::random_tensor({3, 5, 6}, rng);
  const Tensor k = testkit::random_tensor({4, 3, 3, 3}, rng);
  const Tensor y = conv2d(x, k);
  for (int co = 0; co < 4; ++co)
    for (int yy = 0; yy < 5; ++yy)
      for (int xx = 0; xx < 6; ++xx) {
        double acc = 0;
        for (int ci = 0; ci < 3; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = yy + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sy >= 5 || sx < 0 || sx >= 6) continue;
              acc += k[((co * 3 + ci) * 3 + ky) * 3 + kx] * x.at(ci, sy, sx);
            }
        EXPECT_NEAR(y.at(co, yy, xx), acc, 1e-12);
      }
}

TEST(Conv2d, ShapeErrors) {
  EXPECT_THROW(conv2d(Tensor({2, 4, 4}), Tensor({1, 3, 3, 3})), Error);
  EXPECT_THROW(conv2d(Tensor({4, 4}), Tensor({1, 1, 3, 3})), Error);
  EXPECT_THROW(conv2d(Tensor({1, 4, 4}), Tensor({1, 1, 5, 5})), Error);
}

TEST(SumPool, SumsQuads) {
  const Tensor x({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(sum_pool(x)[0], 10);
}

TEST(SumPool, OddExtentRejected) {
  try {
    sum_pool(Tensor({1, 3, 4}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::OddExtent);
  }
}

TEST(SumPool, BackwardBroadcasts) {
  const Tensor g({1, 1, 2}, {2, 5});
  const Tensor gi = sum_pool_backward(g);
  EXPECT_EQ(gi.shape(), (Shape{1, 2, 4}));
  EXPECT_DOUBLE_EQ(gi.at(0, 1, 1), 2);
  EXPECT_DOUBLE_EQ(gi.at(0, 0, 3), 5);
}

TEST(Linear, MatVecWithBias) {
  const Tensor w({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor x({3}, {1, 0, -1});
  const Tensor b({2}, {0.5, -0.5});
  const Tensor y = linear(x, w, &b);
  EXPECT_DOUBLE_EQ(y[0], -1.5);
  EXPECT_DOUBLE_EQ(y[1], -2.5);
  EXPECT_THROW(linear(Tensor({4}), w), Error);
}

TEST(LayerNorm, UnitCase) {
  const Tensor x({3}, {1, 2, 3});
  const Tensor y = layer_norm(x, Tensor({3}, 1.0), Tensor({3}, 0.0));
  const double expect = std::sqrt(1.5) * (1.0 - 1e-5 * 0.75);  // first-order eps correction
  EXPECT_NEAR(y[0], -expect, 1e-6);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], expect, 1e-6);
  EXPECT_NEAR(y[2], 1.2247, 1e-4);
}

TEST(LayerNorm, ConstantInputMapsToBeta) {
  const Tensor y = layer_norm(Tensor({4}, 7.0), Tensor({4}, 2.0), Tensor({4}, 0.25));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], 0.25);
}

TEST(LayerNorm, ScaleInvariant) {
  std::mt19937_64 rng(4);
  const Tensor x = testkit::random_tensor({16}, rng, 0, 5);
  Tensor x10 = x;
  x10 *= 10.0;
  const Tensor g({16}, 1.0), b({16}, 0.0);
  const Tensor a = layer_norm(x, g, b, 0.0), c = layer_norm(x10, g, b, 0.0);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(a[i], c[i], 1e-12);
}

TEST(LayerNorm, TooFewFeatures) { EXPECT_THROW(layer_norm(Tensor({1}), Tensor({1}), Tensor({1})), Error); }

TEST(BatchNorm, ColumnsStandardised) {
  std::mt19937_64 rng(2);
  const Tensor x = testkit::random_tensor({6, 3}, rng, -2, 2);
  const auto st = batch_stats(x);
  const Tensor y = batch_norm(x, Tensor({3}, 1.0), Tensor({3}, 0.0), st, 0.0);
  for (int n = 0; n < 3; ++n) {
    double m = 0, v = 0;
    for (int r = 0; r < 6; ++r) m += y[r * 3 + n];
    m /= 6;
    for (int r = 0; r < 6; ++r) v += (y[r * 3 + n] - m) * (y[r * 3 + n] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 6, 1.0, 1e-12);
  }
}

TEST(Tensor, BasicsAndErrors) {
  Tensor a({2, 2}, {1, -3, 2, 0.5});
  EXPECT_DOUBLE_EQ(a.max_abs(), 3);
  EXPECT_DOUBLE_EQ(a.sum(), 0.5);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), Error);
  EXPECT_THROW(a.reshaped({3}), Error);
  EXPECT_THROW(a += Tensor({4}), Error);
  a[0] = std::nan("");
  EXPECT_FALSE(a.all_finite());
  const Tensor32 f = Tensor({2}, {1.5, 2.5}).cast<float>();
  EXPECT_FLOAT_EQ(f[1], 2.5f);
}

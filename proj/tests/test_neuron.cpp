#include <gtest/gtest.h>

#include "support.hpp"

using namespace spikeforge;

namespace {

std::vector<double> run_drives(const std::vector<double>& drives, double theta, SpikeMode mode, double* u_final) {
  IFLayerState st;
  std::vector<double> out;
  for (double d : drives) out.push_back(if_step(st, Tensor({1}, d), theta, mode)[0]);
  *u_final = st.U[0];
  return out;
}

}  // namespace

TEST(IfStep, AccumulatesThenFires) {
  double u = 0;
  const auto s = run_drives({0.6, 0.6}, 1.0, SpikeMode::single, &u);
  EXPECT_EQ(s, (std::vector<double>{0, 1}));
  EXPECT_NEAR(u, 0.2, 1e-12);
}

TEST(IfStep, MultiSpikeFloor) {
  double u = 0;
  const auto s = run_drives({3.5}, 1.0, SpikeMode::multi, &u);
  EXPECT_EQ(s[0], 3);
  EXPECT_DOUBLE_EQ(u, 0.5);
}

TEST(IfStep, SingleModeEmitsOneAndKeepsResidual) {
  double u = 0;
  const auto s = run_drives({3.5}, 1.0, SpikeMode::single, &u);
  EXPECT_EQ(s[0], 1);
  EXPECT_DOUBLE_EQ(u, 2.5);
}

TEST(IfStep, StrictThreshold) {
  double u = 0;
  EXPECT_EQ(run_drives({1.0}, 1.0, SpikeMode::multi, &u)[0], 0);
  EXPECT_DOUBLE_EQ(u, 1.0);
  EXPECT_EQ(run_drives({1.0}, 1.0, SpikeMode::single, &u)[0], 0);
  // Exact multiples above theta fire floor(U/theta), leaving zero.
  EXPECT_EQ(run_drives({3.0}, 1.0, SpikeMode::multi, &u)[0], 3);
  EXPECT_DOUBLE_EQ(u, 0.0);
}

TEST(IfStep, NegativeDriveNeverFires) {
  double u = 0;
  const auto s = run_drives({-5, -1, 0.5}, 1.0, SpikeMode::multi, &u);
  EXPECT_EQ(s, (std::vector<double>{0, 0, 0}));
  EXPECT_DOUBLE_EQ(u, -5.5);
}

TEST(IfStep, CapMarksSaturation) {
  IFLayerState st;
  const auto s = if_step(st, Tensor({1}, 100.0), 1.0, SpikeMode::multi, 10);
  EXPECT_EQ(s[0], 10);
  EXPECT_TRUE(st.saturated);
  EXPECT_DOUBLE_EQ(st.U[0], 90.0);
}

TEST(IfStep, NonFiniteStateRejected) {
  IFLayerState st;
  try {
    if_step(st, Tensor({1}, std::numeric_limits<double>::infinity()), 1.0, SpikeMode::multi);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFiniteState);
  }
}

TEST(IfStep, ShapeChangeRejected) {
  IFLayerState st;
  if_step(st, Tensor({2}, 0.0), 1.0, SpikeMode::multi);
  EXPECT_THROW(if_step(st, Tensor({3}, 0.0), 1.0, SpikeMode::multi), Error);
}

TEST(IfStep, SoftResetConservesCharge) {
  std::mt19937_64 rng(3);
  for (SpikeMode mode : {SpikeMode::single, SpikeMode::multi}) {
    for (int trial = 0; trial < 200; ++trial) {
      const double theta = std::uniform_real_distribution<double>(0.2, 3.0)(rng);
      IFLayerState st;
      Tensor drive_sum({8}), spike_sum({8});
      for (int t = 0; t < 50; ++t) {
        const Tensor d = testkit::random_tensor({8}, rng, -1.0, 4.0);
        drive_sum += d;
        spike_sum += if_step(st, d, theta, mode);
      }
      for (int i = 0; i < 8; ++i) EXPECT_NEAR(drive_sum[i], theta * spike_sum[i] + st.U[i], 1e-9);
    }
  }
}

TEST(Surrogate, PeaksAtThreshold) {
  const auto s = SurrogateConfig::for_layer(SpikeMode::single, 2.0);
  EXPECT_EQ(s.kind, SurrogateKind::single_exponential);
  EXPECT_DOUBLE_EQ(s.beta, 5.0);
  EXPECT_DOUBLE_EQ(surrogate_grad(2.0, s), 5.0);
  EXPECT_LT(surrogate_grad(4.0, s), surrogate_grad(2.5, s));
  EXPECT_NEAR(surrogate_grad(1.0, s), surrogate_grad(3.0, s), 1e-12);
}

TEST(Surrogate, PeriodicHasPeriodTheta) {
  std::mt19937_64 rng(5);
  for (double theta : {0.5, 1.0, 2.5}) {
    const auto s = SurrogateConfig::for_layer(SpikeMode::multi, theta);
    EXPECT_EQ(s.kind, SurrogateKind::periodic_exponential);
    for (int i = 0; i < 100; ++i) {
      const double u = std::uniform_real_distribution<double>(theta / 2, 5)(rng);
      for (int k : {1, 2, 3}) EXPECT_NEAR(surrogate_grad(u, s), surrogate_grad(u + k * theta, s), 1e-9);
    }
    EXPECT_DOUBLE_EQ(surrogate_grad(3 * theta, s), s.beta);
    EXPECT_NEAR(surrogate_grad(theta, s), surrogate_grad(2 * theta, s), 1e-12);
  }
}

TEST(Surrogate, PeriodicDecaysBelowThreshold) {
  // No peaks at zero or negative multiples: a silent neuron stays silent.
  const auto s = SurrogateConfig::for_layer(SpikeMode::multi, 1.0);
  const auto single = SurrogateConfig::for_layer(SpikeMode::single, 1.0);
  for (double u : {-3.0, -1.0, 0.0, 0.3, 0.9}) EXPECT_DOUBLE_EQ(surrogate_grad(u, s), surrogate_grad(u, single));
  EXPECT_LT(surrogate_grad(0.0, s), 1e-3 * s.beta);
  EXPECT_NEAR(surrogate_grad(1.0 - 1e-12, s), surrogate_grad(1.0 + 1e-12, s), 1e-9);
}

TEST(ScaleLayer, RejectsNonPositive) {
  LayerParams p{Tensor({1, 1}, 1.0), 1.0};
  try {
    scale_layer(p, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonPositiveLambda);
  }
  const auto q = scale_layer(p, 4.0);
  EXPECT_DOUBLE_EQ(q.theta, 4.0);
  EXPECT_DOUBLE_EQ(q.weight[0], 4.0);
}

TEST(SpikeMode, StringRoundTrip) {
  EXPECT_EQ(spike_mode_from_string(to_string(SpikeMode::single)), SpikeMode::single);
  EXPECT_EQ(spike_mode_from_string("multi"), SpikeMode::multi);
  EXPECT_THROW(spike_mode_from_string("relu"), Error);
}

#include <gtest/gtest.h>

#include "support.hpp"

using namespace spikeforge;

namespace {

NetworkSpec small_spec(SpikeMode mode = SpikeMode::multi) {
  NetworkSpec s;
  s.input = {2, 8, 8};
  s.mode = mode;
  s.layers = {{LayerKind::conv, 4, 2, 1.0, {}}, {LayerKind::conv, 4, 2, 1.0, {}}, {LayerKind::fc, 10, 1, 1.0, {}}};
  return s;
}

FrameSequence random_frames(const NetworkSpec& spec, int T, std::uint64_t seed, int max_count = 3) {
  std::mt19937_64 rng(seed);
  FrameSequence f;
  f.T = T;
  f.P = spec.input[0];
  f.H = spec.input[1];
  f.W = spec.input[2];
  f.window_us = 1000;
  f.mode = Representation::histogram;
  f.data.resize(std::size_t(T) * f.frame_size());
  std::uniform_int_distribution<int> u(0, max_count);
  for (auto& v : f.data) v = std::uint16_t(u(rng) == max_count ? u(rng) : 0);
  return f;
}

}  // namespace

TEST(Geometry, SpeckYoloShapes) {
  const auto spec = NetworkSpec::speck_yolo();
  const auto geo = describe(spec);
  ASSERT_EQ(geo.size(), 8u);
  EXPECT_EQ(geo[0].neuron_shape, (Shape{16, 128, 128}));
  EXPECT_EQ(geo[0].out_shape, (Shape{16, 64, 64}));
  EXPECT_EQ(geo[3].out_shape, (Shape{64, 8, 8}));
  EXPECT_EQ(geo[4].in_shape, (Shape{4096}));
  EXPECT_EQ(geo[4].kernel_entries, 4096 * 256);
  EXPECT_EQ(geo[0].kernel_entries, 16 * 2 * 9);
}

TEST(Geometry, ConvAfterFcRejected) {
  NetworkSpec s = small_spec();
  s.layers.push_back({LayerKind::conv, 2, 1, 1.0, {}});
  EXPECT_THROW(describe(s), Error);
}

TEST(Geometry, PoolMustDivide) {
  NetworkSpec s = small_spec();
  s.input = {2, 6, 6};
  try {
    describe(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::OddExtent);
  }
}

TEST(Fanout, InteriorAndBorderTaps) {
  const auto spec = small_spec();
  const auto geo = describe(spec);
  EXPECT_EQ(input_fanout(geo, 0, 3, 3), 4 * 9);
  EXPECT_EQ(input_fanout(geo, 0, 0, 0), 4 * 4);
  EXPECT_EQ(input_fanout(geo, 0, 0, 3), 4 * 6);
  EXPECT_EQ(input_fanout(geo, 2, 0, 0), 10);
  const Tensor f = neuron_fanouts(spec, geo, 0);
  // Layer-0 neuron (y, x) pools into layer-1 input (y/2, x/2) of a 4x4 map.
  EXPECT_DOUBLE_EQ(f.at(0, 0, 0), 4 * 4);
  EXPECT_DOUBLE_EQ(f.at(0, 3, 3), 4 * 9);
  EXPECT_DOUBLE_EQ(neuron_fanouts(spec, geo, 2)[0], 0);
}

TEST(Constraints, DefaultModelFits) {
  const auto r = check_constraints(NetworkSpec::speck_yolo(), {});
  EXPECT_TRUE(r.ok);
  EXPECT_GT(r.kernel_utilization, 0);
  EXPECT_LT(r.neuron_utilization, 1);
}

TEST(Constraints, TooManyLayers) {
  NetworkSpec s = small_spec();
  s.layers.clear();
  for (int i = 0; i < 10; ++i) s.layers.push_back({LayerKind::fc, 4, 1, 1.0, {}});
  const auto r = check_constraints(s, {});
  ASSERT_FALSE(r.ok);
  EXPECT_NE(r.violations.front().find("core count > 9"), std::string::npos);
}

TEST(Constraints, MemoryAndResolution) {
  CoreBudget b;
  b.max_kernel_entries = 100;
  const auto r = check_constraints(small_spec(), b);
  EXPECT_FALSE(r.ok);
  EXPECT_FALSE(r.cores[1].kernel_ok);
  NetworkSpec big = small_spec();
  big.input = {2, 256, 256};
  EXPECT_FALSE(check_constraints(big, {}).ok);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  NetworkSpec s = small_spec();
  s.layers[1].mode = SpikeMode::single;
  s.layers[2].theta = 0.5;
  const auto back = network_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
  EXPECT_EQ(back.layer_mode(1), SpikeMode::single);
  auto j = to_json(s);
  j["bogus"] = 1;
  EXPECT_THROW(network_from_json(j), Error);
  j = to_json(s);
  j["layers"][0]["type"] = "deconv";
  EXPECT_THROW(network_from_json(j), Error);
}

TEST(Run, ShapesAndBookkeeping) {
  const auto spec = small_spec();
  const auto params = init_params(spec, 3, 2.0);
  const auto frames = random_frames(spec, 5, 1);
  const auto rec = run_network(spec, params, frames);
  ASSERT_EQ(rec.output.size(), 5u);
  EXPECT_EQ(rec.output[0].size(), 10u);
  ASSERT_EQ(rec.spikes_per_layer.size(), 3u);
  for (std::size_t l = 0; l < 3; ++l) {
    double s = 0;
    for (double v : rec.spikes_per_layer[l]) s += v;
    EXPECT_DOUBLE_EQ(s, rec.neuron_totals[l].sum());
  }
  double mass = 0;
  for (double v : rec.input_events) mass += v;
  EXPECT_DOUBLE_EQ(mass, double(frames.total()));
}

TEST(Run, StateCarriesAcrossCalls) {
  const auto spec = small_spec();
  const auto params = init_params(spec, 5, 2.0);
  const auto frames = random_frames(spec, 6, 2);
  const auto whole = run_network(spec, params, frames);
  FrameSequence a = frames, b = frames;
  a.T = 3;
  a.data.resize(3 * frames.frame_size());
  b.T = 3;
  b.data.assign(frames.data.begin() + 3 * frames.frame_size(), frames.data.end());
  NetworkState<double> st;
  run_network(spec, params, a, st);
  const auto second = run_network(spec, params, b, st);
  for (int t = 0; t < 3; ++t) EXPECT_EQ(second.output[t], whole.output[3 + t]);
}

TEST(Run, FloatAndDoubleAgreeOnSmallIntegers) {
  const auto spec = small_spec();
  NetworkParams p = init_params(spec, 9);
  for (auto& l : p.layers)
    for (auto& v : l.weight.vec()) v = std::round(v * 8) / 8;  // dyadic, exact in float
  const auto frames = random_frames(spec, 4, 3);
  const auto d = run_network<double>(spec, p, frames);
  const auto f = run_network<float>(spec, p, frames);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(d.spikes_per_layer[l], f.spikes_per_layer[l]);
}

TEST(Run, FrameMismatchRejected) {
  const auto spec = small_spec();
  FrameSequence f;
  f.T = 1;
  f.P = 2;
  f.H = 4;
  f.W = 4;
  f.data.resize(32);
  EXPECT_THROW(run_network(spec, init_params(spec, 0), f), Error);
}

TEST(Run, ModeOverride) {
  const auto spec = small_spec(SpikeMode::multi);
  const auto params = init_params(spec, 4, 3.0);
  const auto frames = random_frames(spec, 4, 5);
  RunOptions o;
  o.mode = SpikeMode::single;
  const auto rec = run_network(spec, params, frames, o);
  for (const auto& out : rec.output)
    for (double v : out.vec()) EXPECT_LE(v, 1.0);
}

TEST(Run, Int16SaturationCounted) {
  NetworkSpec s;
  s.input = {1, 2, 2};
  s.layers = {{LayerKind::fc, 1, 1, 1e9, {}}};
  NetworkParams p{{{Tensor({1, 4}, 10000.0), 1e9}}};
  FrameSequence f;
  f.T = 2;
  f.P = 1;
  f.H = 2;
  f.W = 2;
  f.data.assign(8, 1);
  RunOptions o;
  o.saturate_int16 = true;
  const auto rec = run_network(s, p, f, o);
  EXPECT_EQ(rec.state_clamps, 2);
}

TEST(Tape, ForwardMatchesClockDrivenRun) {
  const auto spec = small_spec();
  const auto params = init_params(spec, 7, 2.5);
  const auto frames = random_frames(spec, 5, 6);
  const auto rec = run_network(spec, params, frames);
  Tape tape;
  const auto fw = forward_on_tape(tape, spec, params, frames);
  for (int t = 0; t < 5; ++t) EXPECT_EQ(tape.value(fw.output[t]), rec.output[t]);
  EXPECT_EQ(fw.spikes_per_layer, rec.spikes_per_layer);
}

TEST(Tape, BpttReachesEveryLayer) {
  const auto spec = small_spec();
  const auto params = init_params(spec, 8, 2.5);
  const auto frames = random_frames(spec, 4, 7);
  Tape tape;
  const auto fw = forward_on_tape(tape, spec, params, frames);
  std::vector<std::pair<Tape::Var, Tensor>> seeds;
  for (auto o : fw.output) seeds.push_back({o, Tensor(tape.value(o).shape(), 1.0)});
  tape.backward(seeds);
  for (auto w : fw.weights) {
    EXPECT_TRUE(tape.reached(w));
    EXPECT_GT(tape.grad(w).max_abs(), 0.0);
  }
}

TEST(Params, InitDeterministicAndScaled) {
  const auto spec = small_spec();
  const auto a = init_params(spec, 1), b = init_params(spec, 1), c = init_params(spec, 1, 2.0);
  EXPECT_EQ(a.layers[0].weight, b.layers[0].weight);
  EXPECT_NEAR(c.layers[1].weight[5], 2.0 * a.layers[1].weight[5], 1e-12);
}

TEST(Constraints, BudgetJsonRoundTrip) {
  CoreBudget b;
  b.queue_capacity = 32;
  b.stall_delay_us = 250;
  const auto back = budget_from_json(to_json(b));
  EXPECT_EQ(to_json(back), to_json(b));
  EXPECT_EQ(budget_from_json({{"cores", 4}}).cores, 4);
  EXPECT_THROW(budget_from_json({{"lanes", 4}}), Error);
  EXPECT_THROW(budget_from_json({{"queue_capacity", 0}}), Error);
}

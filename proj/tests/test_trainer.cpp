#include <gtest/gtest.h>

#include <atomic>

#include "support.hpp"

using namespace spikeforge;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.input = {2, 16, 16};
  s.layers = {{LayerKind::conv, 4, 2, 1.0, {}}, {LayerKind::conv, 4, 2, 1.0, {}}, {LayerKind::fc, 16, 1, 1.0, {}}};
  return s;
}

std::vector<Sample> tiny_set(int n, std::uint64_t seed0) {
  SynthConfig sc;
  sc.duration_us = 30'000;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(downsample(synth_moving_box(sc, seed0 + i), {16, 16}));
  return out;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.threads = 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c;
  c.epochs = 7;
  c.lambda = 1e-3;
  c.norm = NormKind::batch;
  c.mode = SpikeMode::single;
  c.cosine_lr = true;
  c.lr_floor = 0.1;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.representation(), Representation::binary);
  EXPECT_EQ(config_hash(to_json(back)), config_hash(to_json(c)));
  c.seed = 1;
  EXPECT_NE(config_hash(to_json(back)), config_hash(to_json(c)));
}

TEST(TrainConfig, UnknownKeyAndBadValuesRejected) {
  EXPECT_THROW(train_config_from_json({{"learning_rate", 0.1}}), Error);
  EXPECT_THROW(train_config_from_json({{"norm", "group"}}), Error);
  TrainConfig c;
  c.lambda = -1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lr_floor = 2;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Schedule, CosineEndpoints) {
  TrainConfig c;
  c.lr = 1e-3;
  c.epochs = 11;
  EXPECT_DOUBLE_EQ(epoch_lr(c, 5), 1e-3);
  c.cosine_lr = true;
  c.lr_floor = 0.1;
  EXPECT_DOUBLE_EQ(epoch_lr(c, 1), 1e-3);
  EXPECT_NEAR(epoch_lr(c, 6), 1e-3 * 0.55, 1e-15);
  EXPECT_NEAR(epoch_lr(c, 11), 1e-4, 1e-15);
  for (int e = 2; e <= 11; ++e) EXPECT_LT(epoch_lr(c, e), epoch_lr(c, e - 1));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  TrainConfig c;
  c.lr = 0.01;
  Tensor p({3}, {1.0, -2.0, 0.5});
  AdamState st;
  adam_step({&p}, {Tensor({3}, {4.0, -0.5, 0.0})}, st, c);
  // Bias-corrected first step is lr * sign(g), zero gradient leaves the value.
  EXPECT_NEAR(p[0], 0.99, 1e-8);
  EXPECT_NEAR(p[1], -1.99, 1e-8);
  EXPECT_DOUBLE_EQ(p[2], 0.5);
  EXPECT_EQ(st.step, 1);
  EXPECT_THROW(adam_step({&p}, {}, st, c), Error);
}

TEST(Adam, DecoupledDecayOnlyWhereFlagged) {
  TrainConfig c;
  c.lr = 0.1;
  c.weight_decay = 0.5;
  Tensor a({1}, 2.0), b({1}, 2.0);
  AdamState st;
  adam_step({&a, &b}, {Tensor({1}), Tensor({1})}, st, c, {true, false});
  EXPECT_DOUBLE_EQ(a[0], 2.0 * 0.95);
  EXPECT_DOUBLE_EQ(b[0], 2.0);
}

TEST(Adam, MinimisesQuadratic) {
  TrainConfig c;
  c.lr = 0.05;
  Tensor p({2}, {3.0, -4.0});
  AdamState st;
  for (int i = 0; i < 2000; ++i) {
    Tensor g = p;
    g *= 2.0;
    adam_step({&p}, {g}, st, c);
  }
  EXPECT_LT(p.max_abs(), 1e-2);
}

TEST(Parallel, EveryIndexOnceAndLowestErrorWins) {
  for (int w : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, [&](std::size_t i) { hits[i]++; }, w);
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
  try {
    parallel_for(
        20,
        [](std::size_t i) {
          if (i == 7 || i == 13) throw Error(Errc::InvalidArgument, std::to_string(i));
        },
        4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find('7'), std::string::npos);
  }
}

TEST(Model, TrainableOrderMatchesDecayFlags) {
  for (NormKind n : {NormKind::none, NormKind::layer, NormKind::batch}) {
    TrainConfig c;
    c.norm = n;
    Model m = init_model(tiny_spec(), c);
    EXPECT_EQ(trainable(m).size(), decayed(m).size());
    EXPECT_EQ(m.head_cfg.frame_w, 16);
  }
}

TEST(BatchGradients, HeadGradientMatchesFiniteDifferences) {
  const auto samples = tiny_set(2, 50);
  for (NormKind n : {NormKind::none, NormKind::layer, NormKind::batch}) {
    TrainConfig c = quick_config();
    c.norm = n;
    c.init_gain = 2.0;
    Model m = init_model(tiny_spec(), c);
    const auto prepared = prepare_all(samples, m.spec, c.window_us, c.representation());
    const std::vector<const PreparedSample*> batch{&prepared[0], &prepared[1]};
    const auto br = batch_gradients(m, batch, c);
    const auto params = trainable(m);
    const std::size_t head_w = params.size() - 2;
    Tensor& w = *params[head_w];
    std::mt19937_64 rng(1);
    for (int k = 0; k < 8; ++k) {
      const std::size_t i = rng() % w.size();
      const double keep = w[i], h = 1e-5;
      w[i] = keep + h;
      const double up = batch_gradients(m, batch, c).detection;
      w[i] = keep - h;
      const double down = batch_gradients(m, batch, c).detection;
      w[i] = keep;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(br.grads[head_w][i], fd, 1e-6 + 1e-4 * std::abs(fd)) << to_string(n);
    }
  }
}

TEST(BatchGradients, PenaltyIsLambdaTimesMeanSpikes) {
  const auto samples = tiny_set(2, 60);
  TrainConfig c = quick_config();
  c.init_gain = 2.0;
  c.lambda = 0.01;
  Model m = init_model(tiny_spec(), c);
  const auto prepared = prepare_all(samples, m.spec, c.window_us, c.representation());
  const auto br = batch_gradients(m, {&prepared[0], &prepared[1]}, c);
  double spikes = 0;
  for (double v : br.layer_spikes) spikes += v;
  EXPECT_GT(spikes, 0);
  EXPECT_NEAR(br.penalty, 0.01 * spikes / 2, 1e-9);
}

TEST(Train, ErrorsBeforeTraining) {
  const auto data = tiny_set(2, 1);
  try {
    train(tiny_spec(), {}, data, quick_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptySplit);
  }
  NetworkSpec big = tiny_spec();
  big.input = {2, 256, 256};
  try {
    train(big, data, data, quick_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConstraintViolation);
  }
}

TEST(Train, ShortRunIsDeterministicAndRecorded) {
  const auto tr = tiny_set(4, 100), va = tiny_set(2, 200);
  TrainConfig c = quick_config();
  const auto a = train(tiny_spec(), tr, va, c);
  const auto b = train(tiny_spec(), tr, va, c);
  ASSERT_EQ(a.history.size(), 2u);
  EXPECT_GE(a.best_epoch, 1);
  EXPECT_EQ(a.best_val_map, a.history[a.best_epoch - 1].val_map);
  for (std::size_t e = 0; e < 2; ++e) EXPECT_DOUBLE_EQ(a.history[e].loss_total, b.history[e].loss_total);
  EXPECT_EQ(a.last.head.weight, b.last.head.weight);
  EXPECT_EQ(a.config_hash.size(), 8u);
  const auto csv = history_csv(a.history);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);

  // Thread count does not change the result.
  c.threads = 3;
  const auto d = train(tiny_spec(), tr, va, c);
  EXPECT_EQ(d.last.head.weight, a.last.head.weight);
}

TEST(Train, EpochMetricsJsonRoundTrip) {
  EpochMetrics e;
  e.epoch = 3;
  e.loss_total = 1.5;
  e.layer_spikes_per_s = {1, 2};
  e.val_map = 0.25;
  const auto back = epoch_metrics_from_json(to_json(e));
  EXPECT_EQ(back.epoch, 3);
  EXPECT_DOUBLE_EQ(back.loss_total, 1.5);
  EXPECT_EQ(back.layer_spikes_per_s, e.layer_spikes_per_s);
}

TEST(Evaluate, ModesAgreeOnShapeAndEmulatorNeedsQuantizedNet) {
  const auto va = tiny_set(2, 300);
  TrainConfig c = quick_config();
  c.init_gain = 2.0;
  const Model m = init_model(tiny_spec(), c);
  const auto prepared = prepare_all(va, m.spec, c.window_us, c.representation());
  for (EvalMode mode : {EvalMode::float_sim, EvalMode::quant_sim, EvalMode::emulator}) {
    const auto r = evaluate(m, prepared, mode, {}, {}, 1);
    EXPECT_GE(r.map, 0);
    EXPECT_LE(r.map, 1);
    EXPECT_EQ(r.layer_spikes_per_s.size(), 3u);
    EXPECT_EQ(r.power_mw.has_value(), mode == EvalMode::emulator);
    EXPECT_EQ(eval_mode_from_string(to_string(mode)), mode);
  }
  EXPECT_THROW(run_sample(m, prepared[0], EvalMode::emulator), Error);
  EXPECT_THROW(evaluate(m, {}, EvalMode::float_sim), Error);
}

TEST(Sweep, NeedsTwoLambdas) {
  const auto data = tiny_set(2, 1);
  EXPECT_THROW(sweep_lambda(tiny_spec(), data, data, quick_config(), {0.0}), Error);
}

TEST(Sweep, CsvHasOneRowPerLambda) {
  const auto tr = tiny_set(2, 400), va = tiny_set(1, 500);
  TrainConfig c = quick_config();
  c.epochs = 1;
  const auto rows = sweep_lambda(tiny_spec(), tr, va, c, {0.0, 1e-2});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[1].lambda, 1e-2);
  const auto csv = sweep_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

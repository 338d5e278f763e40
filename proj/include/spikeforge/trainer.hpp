#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikeforge/checkpoint.hpp"
#include "spikeforge/dataset.hpp"
#include "spikeforge/detection.hpp"
#include "spikeforge/emulator.hpp"
#include "spikeforge/network.hpp"
#include "spikeforge/parallel.hpp"
#include "spikeforge/tape.hpp"

namespace spikeforge {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied to weight matrices only
  bool cosine_lr = false;     // anneal lr to lr_floor * lr over the run
  double lr_floor = 0.0;
  std::int64_t window_us = 10'000;
  SpikeMode mode = SpikeMode::multi;
  std::optional<Representation> repr;  // unset: binary for single, histogram for multi
  double lambda = 0.0;
  std::uint64_t seed = 0;
  NormKind norm = NormKind::layer;
  GridConfig grid;
  LossWeights loss;
  double init_gain = 1.0;
  bool augment = true;
  AugmentConfig augment_cfg;
  int threads = 0;  // 0: worker_count()

  Representation representation() const {
    return repr.value_or(mode == SpikeMode::single ? Representation::binary : Representation::histogram);
  }
  int workers() const { return threads > 0 ? threads : worker_count(); }

  void validate() const {
    if (epochs <= 0) throw Error(Errc::InvalidArgument, "epochs must be positive");
    if (batch_size <= 0) throw Error(Errc::InvalidArgument, "batch_size must be positive");
    if (!(lr > 0)) throw Error(Errc::InvalidArgument, "learning rate must be positive");
    if (!(lr_floor >= 0 && lr_floor <= 1)) throw Error(Errc::InvalidArgument, "lr_floor must lie in [0, 1]");
    if (!(lambda >= 0)) throw Error(Errc::InvalidArgument, "lambda must be non-negative");
    if (window_us <= 0) throw Error(Errc::InvalidArgument, "window_us must be positive");
    if (grid.S <= 0 || grid.B <= 0) throw Error(Errc::InvalidArgument, "grid must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"epochs", c.epochs},
                   {"batch_size", c.batch_size},
                   {"lr", c.lr},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"adam_eps", c.adam_eps},
                   {"weight_decay", c.weight_decay},
                   {"cosine_lr", c.cosine_lr},
                   {"lr_floor", c.lr_floor},
                   {"window_us", c.window_us},
                   {"mode", to_string(c.mode)},
                   {"repr", to_string(c.representation())},
                   {"lambda", c.lambda},
                   {"seed", c.seed},
                   {"norm", to_string(c.norm)},
                   {"grid_s", c.grid.S},
                   {"grid_b", c.grid.B},
                   {"lambda_coord", c.loss.coord},
                   {"lambda_noobj", c.loss.noobj},
                   {"init_gain", c.init_gain},
                   {"augment", c.augment},
                   {"scale_min", c.augment_cfg.scale_min},
                   {"scale_max", c.augment_cfg.scale_max},
                   {"random_crop", c.augment_cfg.random_crop},
                   {"threads", c.threads}};
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "epochs") c.epochs = v.get<int>();
    else if (k == "batch_size") c.batch_size = v.get<int>();
    else if (k == "lr") c.lr = v.get<double>();
    else if (k == "beta1") c.beta1 = v.get<double>();
    else if (k == "beta2") c.beta2 = v.get<double>();
    else if (k == "adam_eps") c.adam_eps = v.get<double>();
    else if (k == "weight_decay") c.weight_decay = v.get<double>();
    else if (k == "cosine_lr") c.cosine_lr = v.get<bool>();
    else if (k == "lr_floor") c.lr_floor = v.get<double>();
    else if (k == "window_us") c.window_us = v.get<std::int64_t>();
    else if (k == "mode") c.mode = spike_mode_from_string(v.get<std::string>());
    else if (k == "repr") c.repr = representation_from_string(v.get<std::string>());
    else if (k == "lambda") c.lambda = v.get<double>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "norm") c.norm = norm_from_string(v.get<std::string>());
    else if (k == "grid_s") c.grid.S = v.get<int>();
    else if (k == "grid_b") c.grid.B = v.get<int>();
    else if (k == "lambda_coord") c.loss.coord = v.get<double>();
    else if (k == "lambda_noobj") c.loss.noobj = v.get<double>();
    else if (k == "init_gain") c.init_gain = v.get<double>();
    else if (k == "augment") c.augment = v.get<bool>();
    else if (k == "scale_min") c.augment_cfg.scale_min = v.get<double>();
    else if (k == "scale_max") c.augment_cfg.scale_max = v.get<double>();
    else if (k == "random_crop") c.augment_cfg.random_crop = v.get<bool>();
    else if (k == "threads") c.threads = v.get<int>();
    else throw Error(Errc::InvalidArgument, "unknown training key '" + k + "'");
  }
  return c;
}

/// Hex CRC-32 of the compact JSON dump.
inline std::string config_hash(const nlohmann::json& j) {
  const std::string s = j.dump();
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0')
     << crc32_of({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  return os.str();
}

// ---------------------------------------------------------------------------
// Model

struct Model {
  NetworkSpec spec;
  NetworkParams body;
  HeadConfig head_cfg;
  HeadParams head;
};

inline Model init_model(NetworkSpec spec, const TrainConfig& cfg) {
  spec.mode = cfg.mode;
  Model m;
  m.spec = spec;
  m.body = init_params(spec, cfg.seed, cfg.init_gain);
  m.head_cfg.grid = cfg.grid;
  m.head_cfg.norm = cfg.norm;
  m.head_cfg.frame_w = spec.input[2];
  m.head_cfg.frame_h = spec.input[1];
  m.head = init_head(m.head_cfg, spec.n_out(), cfg.seed ^ 0x5eedULL);
  return m;
}

/// Model tensors in optimizer order: body weights, then the head.
inline std::vector<Tensor*> trainable(Model& m) {
  std::vector<Tensor*> p;
  for (auto& l : m.body.layers) p.push_back(&l.weight);
  if (m.head_cfg.norm != NormKind::none) {
    p.push_back(&m.head.norm_gamma);
    p.push_back(&m.head.norm_beta);
  }
  p.push_back(&m.head.weight);
  p.push_back(&m.head.bias);
  return p;
}

/// Which trainable() entries receive weight decay.
inline std::vector<bool> decayed(const Model& m) {
  std::vector<bool> d(m.body.layers.size(), true);
  if (m.head_cfg.norm != NormKind::none) d.insert(d.end(), {false, false});
  d.insert(d.end(), {true, false});
  return d;
}

inline double epoch_lr(const TrainConfig& cfg, int epoch) {
  if (!cfg.cosine_lr || cfg.epochs <= 1) return cfg.lr;
  const double progress = double(epoch - 1) / double(cfg.epochs - 1);
  return cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

struct AdamState {
  std::vector<Tensor> m, v;
  std::int64_t step = 0;
};

inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& st,
                      const TrainConfig& cfg, const std::vector<bool>& decay = {}) {
  if (grads.size() != params.size()) throw Error(Errc::ShapeMismatch, "gradient count");
  if (st.m.empty()) {
    for (auto* p : params) {
      st.m.push_back(Tensor::zeros_like(*p));
      st.v.push_back(Tensor::zeros_like(*p));
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    p.check_same(g);
    const double shrink = (k < decay.size() && decay[k]) ? 1.0 - cfg.lr * cfg.weight_decay : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= shrink;
      st.m[k][i] = cfg.beta1 * st.m[k][i] + (1 - cfg.beta1) * g[i];
      st.v[k][i] = cfg.beta2 * st.v[k][i] + (1 - cfg.beta2) * g[i] * g[i];
      p[i] -= cfg.lr * (st.m[k][i] / c1) / (std::sqrt(st.v[k][i] / c2) + cfg.adam_eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedSample {
  EventStream stream;  // at network resolution
  FrameSequence frames;
  std::vector<std::vector<BoundingBox>> targets;  // per window
};

inline PreparedSample prepare(const Sample& s, const NetworkSpec& spec, std::int64_t window_us, Representation repr) {
  const Resolution net{spec.input[2], spec.input[1]};
  const Sample& src = s;
  Sample scaled;
  const bool resize = s.stream.resolution.width != net.width || s.stream.resolution.height != net.height;
  if (resize) scaled = downsample(s, net);
  const Sample& use = resize ? scaled : src;
  PreparedSample p;
  p.stream = use.stream;
  p.frames = bin_events(use.stream, window_us, repr);
  p.targets = use.boxes_per_bin(window_us, p.frames.T);
  return p;
}

inline std::vector<PreparedSample> prepare_all(const std::vector<Sample>& samples, const NetworkSpec& spec,
                                               std::int64_t window_us, Representation repr) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(prepare(s, spec, window_us, repr));
  return out;
}

// ---------------------------------------------------------------------------
// Inference

inline std::vector<GridPrediction> predict_frames(const Model& m, const std::vector<Tensor>& outputs) {
  std::vector<GridPrediction> out;
  for (const auto& o : outputs) out.push_back(decode_head(o, m.head, m.head_cfg));
  return out;
}

enum class EvalMode { float_sim, quant_sim, emulator };

inline const char* to_string(EvalMode m) {
  switch (m) {
    case EvalMode::float_sim: return "float_sim";
    case EvalMode::quant_sim: return "quant_sim";
    case EvalMode::emulator: return "emulator";
  }
  return "?";
}

inline EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "float_sim") return EvalMode::float_sim;
  if (s == "quant_sim") return EvalMode::quant_sim;
  if (s == "emulator") return EvalMode::emulator;
  throw Error(Errc::InvalidArgument, "unknown evaluation mode '" + s + "'");
}

struct Metrics {
  double map = 0;
  double mean_iou = 0;
  double spikes_per_s = 0;
  double synops_per_s = 0;
  std::vector<double> layer_spikes_per_s;
  double input_events_per_s = 0;
  std::optional<double> power_mw;
  bool stall = false;
  std::int64_t dropped_events = 0;
  std::int64_t late_outputs = 0;
  double max_delay_us = 0;
  bool saturated = false;
};

inline nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j{{"map", m.map},
                   {"mean_iou", m.mean_iou},
                   {"spikes_per_s", m.spikes_per_s},
                   {"synops_per_s", m.synops_per_s},
                   {"layer_spikes_per_s", m.layer_spikes_per_s},
                   {"input_events_per_s", m.input_events_per_s},
                   {"stall", m.stall},
                   {"dropped_events", m.dropped_events},
                   {"late_outputs", m.late_outputs},
                   {"max_delay_us", m.max_delay_us},
                   {"saturated", m.saturated}};
  j["power_mw"] = m.power_mw ? nlohmann::json(*m.power_mw) : nlohmann::json(nullptr);
  return j;
}

/// Per-sample inference result in any evaluation mode.
struct SampleRun {
  std::vector<Tensor> outputs;        // [t] readout spike counts
  std::vector<double> layer_spikes;   // [l]
  std::vector<double> layer_synops;   // [l]
  std::vector<double> input_per_window;
  std::vector<double> spikes_per_window;
  SynOpsReport chip;                  // emulator mode only
  std::int64_t late = 0;
  bool saturated = false;
};

inline SampleRun run_sample(const Model& m, const PreparedSample& ps, EvalMode mode,
                            const QuantizedNetwork* q = nullptr, const CoreBudget& budget = {}) {
  SampleRun r;
  const auto fan = network_fanouts(m.spec);
  if (mode == EvalMode::emulator) {
    if (!q) throw Error(Errc::InvalidArgument, "emulator mode needs a quantized network");
    auto res = run_per_event(*q, ps.stream, budget);
    r.outputs = readout_counts(res.output, m.spec.n_out(), ps.frames.window_us, ps.frames.T, &r.late);
    r.layer_spikes = res.report.tally.layer_spikes;
    r.layer_synops = res.report.tally.layer_synops;
    const auto per_ms = ps.frames.window_us / res.report.bin_us;
    r.spikes_per_window.assign(std::size_t(ps.frames.T), 0.0);
    r.input_per_window.assign(std::size_t(ps.frames.T), 0.0);
    for (std::size_t b = 0; b < res.report.spikes_per_bin.size(); ++b)
      if (std::int64_t(b) / per_ms < ps.frames.T) r.spikes_per_window[b / per_ms] += res.report.spikes_per_bin[b];
    for (std::size_t b = 0; b < res.report.input_events_per_bin.size(); ++b)
      if (std::int64_t(b) / per_ms < ps.frames.T)
        r.input_per_window[b / per_ms] += res.report.input_events_per_bin[b];
    r.saturated = res.report.saturation_events > 0;
    r.chip = std::move(res.report);
    return r;
  }
  RunOptions opts;
  NetworkParams qp;
  const NetworkParams* params = &m.body;
  if (mode == EvalMode::quant_sim) {
    if (!q) throw Error(Errc::InvalidArgument, "quantized mode needs a quantized network");
    qp = q->as_params();
    params = &qp;
    opts.saturate_int16 = true;
  }
  auto rec = run_network<double>(m.spec, *params, ps.frames, opts);
  r.outputs = std::move(rec.output);
  const auto tally = synops_count(rec.neuron_totals, fan, 0);
  r.layer_spikes = tally.layer_spikes;
  r.layer_synops = tally.layer_synops;
  r.input_per_window = rec.input_events;
  for (int t = 0; t < ps.frames.T; ++t) {
    double s = 0;
    for (const auto& l : rec.spikes_per_layer) s += l[t];
    r.spikes_per_window.push_back(s);
  }
  r.saturated = rec.saturated || rec.state_clamps > 0;
  return r;
}

inline Metrics evaluate(const Model& m, const std::vector<PreparedSample>& data, EvalMode mode,
                        const CoreBudget& budget = {}, const PowerModel& power = {}, int workers = worker_count()) {
  if (data.empty()) throw Error(Errc::EmptySplit, "no samples to evaluate");
  std::optional<QuantizedNetwork> q;
  if (mode != EvalMode::float_sim) q = quantize(m.spec, m.body);
  std::vector<SampleRun> runs(data.size());
  parallel_for(
      data.size(), [&](std::size_t i) { runs[i] = run_sample(m, data[i], mode, q ? &*q : nullptr, budget); },
      workers);

  Metrics out;
  std::vector<DetectionSet> preds;
  std::vector<std::vector<BoundingBox>> gts;
  double seconds = 0, spikes = 0, synops = 0, inputs = 0, iou_sum = 0;
  std::size_t iou_n = 0;
  out.layer_spikes_per_s.assign(m.spec.layers.size(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = runs[i];
    const auto& ps = data[i];
    for (std::size_t t = 0; t < r.outputs.size(); ++t) {
      const auto det = decode_boxes(decode_head(r.outputs[t], m.head, m.head_cfg), m.head_cfg.frame_w,
                                    m.head_cfg.frame_h);
      if (!ps.targets[t].empty()) {
        const auto best = std::max_element(det.begin(), det.end(), [](const Detection& a, const Detection& b) {
          return a.confidence < b.confidence;
        });
        iou_sum += iou(best->box, ps.targets[t].front());
        ++iou_n;
      }
      preds.push_back(det);
      gts.push_back(ps.targets[t]);
    }
    seconds += double(ps.frames.T) * double(ps.frames.window_us) * 1e-6;
    for (std::size_t l = 0; l < r.layer_spikes.size(); ++l) {
      out.layer_spikes_per_s[l] += r.layer_spikes[l];
      spikes += r.layer_spikes[l];
      synops += r.layer_synops[l];
    }
    for (double v : r.input_per_window) inputs += v;
    out.stall = out.stall || r.chip.stall;
    out.dropped_events += r.chip.dropped_events;
    out.max_delay_us = std::max(out.max_delay_us, r.chip.max_delay_us);
    out.late_outputs += r.late;
    out.saturated = out.saturated || r.saturated;
  }
  out.map = mean_ap(preds, gts, 0.5).ap;
  out.mean_iou = iou_n ? iou_sum / double(iou_n) : 0.0;
  out.spikes_per_s = spikes / seconds;
  out.synops_per_s = synops / seconds;
  out.input_events_per_s = inputs / seconds;
  for (auto& v : out.layer_spikes_per_s) v /= seconds;
  if (mode == EvalMode::emulator) out.power_mw = estimate_power(out.spikes_per_s, power);
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct BatchResult {
  double detection = 0;
  double penalty = 0;
  std::vector<Tensor> grads;                 // trainable() order
  std::vector<double> layer_spikes;          // summed over the batch
  std::optional<BatchNormStats<double>> bn;  // batch statistics
};

/// Loss and gradients for one batch. Each sample's body is unrolled on its
/// own tape; the head runs on a shared tape so batch normalization can see
/// every row. Head gradients are then seeded back into the body tapes.
inline BatchResult batch_gradients(const Model& m, const std::vector<const PreparedSample*>& batch,
                                   const TrainConfig& cfg) {
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / double(n);
  std::vector<Tape> tapes(n);
  std::vector<TapeForward> fw(n);
  parallel_for(n, [&](std::size_t i) { fw[i] = forward_on_tape(tapes[i], m.spec, m.body, batch[i]->frames); },
               cfg.workers());

  BatchResult res;
  res.layer_spikes.assign(m.spec.layers.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < fw[i].spikes_per_layer.size(); ++l)
      for (double v : fw[i].spikes_per_layer[l]) {
        res.layer_spikes[l] += v;
        res.penalty += cfg.lambda * v * inv_n;
      }

  Tape head;
  const auto& hc = m.head_cfg;
  const bool normed = hc.norm != NormKind::none;
  Tape::Var gamma = 0, beta = 0;
  if (normed) {
    gamma = head.parameter(m.head.norm_gamma);
    beta = head.parameter(m.head.norm_beta);
  }
  const Tape::Var w = head.parameter(m.head.weight);
  const Tape::Var b = head.parameter(m.head.bias);

  std::vector<std::vector<Tape::Var>> leaves(n);
  std::vector<Tape::Var> flat;
  for (std::size_t i = 0; i < n; ++i)
    for (auto v : fw[i].output) {
      leaves[i].push_back(head.leaf(tapes[i].value(v), true));
      flat.push_back(leaves[i].back());
    }
  std::vector<Tape::Var> normed_rows(flat.size());
  if (hc.norm == NormKind::none) {
    normed_rows = flat;
  } else if (hc.norm == NormKind::layer) {
    for (std::size_t k = 0; k < flat.size(); ++k) normed_rows[k] = head.layer_norm(flat[k], gamma, beta, hc.eps);
  } else {
    const Tape::Var stacked = head.stack_rows(flat);
    res.bn = batch_stats(head.value(stacked));
    const Tape::Var nb = head.batch_norm(stacked, gamma, beta, hc.eps);
    for (std::size_t k = 0; k < flat.size(); ++k) normed_rows[k] = head.row(nb, int(k));
  }

  std::vector<std::pair<Tape::Var, Tensor>> seeds;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < fw[i].output.size(); ++t, ++k) {
      const Tape::Var y = head.sigmoid(head.linear(normed_rows[k], w, b));
      const auto& gts = batch[i]->targets[t];
      if (gts.empty()) continue;
      auto L = yolo_loss(GridPrediction{hc.grid, head.value(y)}, gts, cfg.loss, hc.frame_w, hc.frame_h);
      res.detection += L.total() * inv_n;
      L.grad *= inv_n;
      seeds.emplace_back(y, std::move(L.grad));
    }
  if (!seeds.empty()) head.backward(seeds);

  std::vector<std::vector<Tensor>> body_grads(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        std::vector<std::pair<Tape::Var, Tensor>> s;
        for (std::size_t t = 0; t < fw[i].output.size(); ++t)
          if (head.reached(leaves[i][t])) s.emplace_back(fw[i].output[t], head.grad(leaves[i][t]));
        if (cfg.lambda > 0)
          for (const auto& step : fw[i].spikes)
            for (auto v : step) s.emplace_back(v, Tensor(tapes[i].value(v).shape(), cfg.lambda * inv_n));
        if (!s.empty()) tapes[i].backward(s);
        for (auto wv : fw[i].weights) body_grads[i].push_back(tapes[i].grad(wv));
        tapes[i] = Tape();
      },
      cfg.workers());

  for (std::size_t l = 0; l < m.body.layers.size(); ++l) {
    Tensor g = Tensor::zeros_like(m.body.layers[l].weight);
    for (std::size_t i = 0; i < n; ++i) g += body_grads[i][l];
    res.grads.push_back(std::move(g));
  }
  if (normed) {
    res.grads.push_back(head.grad(gamma));
    res.grads.push_back(head.grad(beta));
  }
  res.grads.push_back(head.grad(w));
  res.grads.push_back(head.grad(b));
  return res;
}

struct EpochMetrics {
  int epoch = 0;
  double loss_total = 0;
  double loss_detection = 0;
  double loss_penalty = 0;
  std::vector<double> layer_spikes_per_s;
  double spikes_per_s = 0;
  double val_map = 0;
  double val_spikes_per_s = 0;
  double seconds = 0;
};

inline nlohmann::json to_json(const EpochMetrics& e) {
  return {{"epoch", e.epoch},
          {"loss_total", e.loss_total},
          {"loss_detection", e.loss_detection},
          {"loss_penalty", e.loss_penalty},
          {"layer_spikes_per_s", e.layer_spikes_per_s},
          {"spikes_per_s", e.spikes_per_s},
          {"val_map", e.val_map},
          {"val_spikes_per_s", e.val_spikes_per_s}};
}

inline EpochMetrics epoch_metrics_from_json(const nlohmann::json& j) {
  EpochMetrics e;
  e.epoch = j.at("epoch").get<int>();
  e.loss_total = j.at("loss_total").get<double>();
  e.loss_detection = j.at("loss_detection").get<double>();
  e.loss_penalty = j.at("loss_penalty").get<double>();
  e.layer_spikes_per_s = j.at("layer_spikes_per_s").get<std::vector<double>>();
  e.spikes_per_s = j.at("spikes_per_s").get<double>();
  e.val_map = j.at("val_map").get<double>();
  e.val_spikes_per_s = j.at("val_spikes_per_s").get<double>();
  return e;
}

inline std::string history_csv(const std::vector<EpochMetrics>& h) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,loss_total,loss_detection,loss_penalty,spikes_per_s";
  const std::size_t L = h.empty() ? 0 : h.front().layer_spikes_per_s.size();
  for (std::size_t l = 0; l < L; ++l) os << ",layer" << l << "_spikes_per_s";
  os << ",val_map,val_spikes_per_s\n";
  for (const auto& e : h) {
    os << e.epoch << ',' << e.loss_total << ',' << e.loss_detection << ',' << e.loss_penalty << ',' << e.spikes_per_s;
    for (double v : e.layer_spikes_per_s) os << ',' << v;
    os << ',' << e.val_map << ',' << e.val_spikes_per_s << '\n';
  }
  return os.str();
}

struct TrainResult {
  Model best;
  Model last;
  int best_epoch = 0;
  double best_val_map = -1;
  std::vector<EpochMetrics> history;
  AdamState adam;
  std::string config_hash;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = a * 0x9E3779B97F4A7C15ULL;
  h ^= b + 0x632BE59BD9B4E019ULL + (h << 6) + (h >> 2);
  h ^= c + 0x85EBCA77C2B2AE63ULL + (h << 6) + (h >> 2);
  return h;
}

inline void update_running_stats(HeadParams& h, const BatchNormStats<double>& st, double momentum) {
  for (std::size_t i = 0; i < st.mean.size(); ++i) {
    h.bn_mean[i] = (1 - momentum) * h.bn_mean[i] + momentum * st.mean[i];
    h.bn_var[i] = (1 - momentum) * h.bn_var[i] + momentum * st.var[i];
  }
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

inline TrainResult train(const NetworkSpec& spec, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const TrainConfig& cfg, const CoreBudget& budget = {},
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw Error(Errc::EmptySplit, "training split is empty");
  if (val_set.empty()) throw Error(Errc::EmptySplit, "validation split is empty");
  const auto cr = check_constraints(spec, budget);
  if (!cr.ok) throw Error(Errc::ConstraintViolation, cr.violations.front());

  TrainResult out;
  out.config_hash = config_hash({{"network", to_json(spec)}, {"train", to_json(cfg)}});
  Model model = init_model(spec, cfg);
  const Representation repr = cfg.representation();
  const auto val = prepare_all(val_set, model.spec, cfg.window_us, repr);
  std::vector<PreparedSample> plain;
  if (!cfg.augment) plain = prepare_all(train_set, model.spec, cfg.window_us, repr);

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(cfg.seed, std::uint64_t(epoch), 0));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<PreparedSample> epoch_data;
    if (cfg.augment) {
      epoch_data.resize(train_set.size());
      parallel_for(
          train_set.size(),
          [&](std::size_t i) {
            Sample s;
            try {
              s = augment(train_set[i], mix_seed(cfg.seed, std::uint64_t(epoch), i + 1), cfg.augment_cfg);
            } catch (const Error& e) {
              if (e.code() != Errc::DegenerateBox) throw;
              s = train_set[i];
            }
            epoch_data[i] = prepare(s, model.spec, cfg.window_us, repr);
          },
          cfg.workers());
    }
    const auto& data = cfg.augment ? epoch_data : plain;

    TrainConfig step_cfg = cfg;
    step_cfg.lr = epoch_lr(cfg, epoch);
    EpochMetrics em;
    em.epoch = epoch;
    em.layer_spikes_per_s.assign(spec.layers.size(), 0.0);
    double seconds = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      std::vector<const PreparedSample*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + std::size_t(cfg.batch_size)); ++k)
        batch.push_back(&data[order[k]]);
      auto br = batch_gradients(model, batch, cfg);
      const double total = br.detection + br.penalty;
      if (!std::isfinite(total))
        throw Error(Errc::DivergedLoss, "non-finite loss at epoch " + std::to_string(epoch));
      for (const auto& g : br.grads)
        if (!g.all_finite()) throw Error(Errc::DivergedLoss, "non-finite gradient at epoch " + std::to_string(epoch));
      adam_step(trainable(model), br.grads, out.adam, step_cfg, decayed(model));
      if (br.bn) update_running_stats(model.head, *br.bn, model.head_cfg.bn_momentum);
      em.loss_detection += br.detection;
      em.loss_penalty += br.penalty;
      for (std::size_t l = 0; l < br.layer_spikes.size(); ++l) em.layer_spikes_per_s[l] += br.layer_spikes[l];
      for (const auto* p : batch) seconds += double(p->frames.T) * double(cfg.window_us) * 1e-6;
      ++batches;
    }
    em.loss_detection /= double(batches);
    em.loss_penalty /= double(batches);
    em.loss_total = em.loss_detection + em.loss_penalty;
    for (auto& v : em.layer_spikes_per_s) {
      v /= seconds;
      em.spikes_per_s += v;
    }
    const Metrics vm = evaluate(model, val, EvalMode::float_sim, budget, {}, cfg.workers());
    em.val_map = vm.map;
    em.val_spikes_per_s = vm.spikes_per_s;
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.history.push_back(em);
    if (em.val_map > out.best_val_map) {
      out.best_val_map = em.val_map;
      out.best_epoch = epoch;
      out.best = model;
    }
    if (on_epoch) on_epoch(em);
  }
  out.last = std::move(model);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  Model model;
  nlohmann::json config = nlohmann::json::object();
  int epoch = 0;
  std::string config_hash;
  std::vector<EpochMetrics> history;
  std::optional<AdamState> adam;
};

inline TensorArchive checkpoint_to_archive(const Checkpoint& c) {
  TensorArchive a;
  const Model& m = c.model;
  Tensor thetas({int(m.body.layers.size())});
  for (std::size_t l = 0; l < m.body.layers.size(); ++l) {
    a.put("body.layer" + std::to_string(l) + ".weight", m.body.layers[l].weight);
    thetas[l] = m.body.layers[l].theta;
  }
  a.put("body.thetas", thetas);
  a.put("head.norm_gamma", m.head.norm_gamma);
  a.put("head.norm_beta", m.head.norm_beta);
  a.put("head.bn_mean", m.head.bn_mean);
  a.put("head.bn_var", m.head.bn_var);
  a.put("head.weight", m.head.weight);
  a.put("head.bias", m.head.bias);
  std::int64_t adam_step_count = -1;
  if (c.adam) {
    adam_step_count = c.adam->step;
    for (std::size_t k = 0; k < c.adam->m.size(); ++k) {
      a.put("adam.m." + std::to_string(k), c.adam->m[k]);
      a.put("adam.v." + std::to_string(k), c.adam->v[k]);
    }
  }
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : c.history) hist.push_back(to_json(e));
  a.metadata = {{"kind", "checkpoint"},
                {"network", to_json(m.spec)},
                {"head",
                 {{"grid_s", m.head_cfg.grid.S},
                  {"grid_b", m.head_cfg.grid.B},
                  {"norm", to_string(m.head_cfg.norm)},
                  {"eps", m.head_cfg.eps},
                  {"bn_momentum", m.head_cfg.bn_momentum},
                  {"frame_w", m.head_cfg.frame_w},
                  {"frame_h", m.head_cfg.frame_h}}},
                {"config", c.config},
                {"epoch", c.epoch},
                {"config_hash", c.config_hash},
                {"history", hist},
                {"adam_step", adam_step_count},
                {"adam_tensors", c.adam ? c.adam->m.size() : 0}};
  return a;
}

inline Checkpoint checkpoint_from_archive(const TensorArchive& a) {
  if (a.metadata.value("kind", "") != "checkpoint") throw Error(Errc::FormatError, "archive is not a checkpoint");
  Checkpoint c;
  Model& m = c.model;
  m.spec = network_from_json(a.metadata.at("network"));
  const Tensor thetas = a.get("body.thetas");
  if (thetas.size() != m.spec.layers.size()) throw Error(Errc::FormatError, "threshold count does not match network");
  for (std::size_t l = 0; l < m.spec.layers.size(); ++l)
    m.body.layers.push_back({a.get("body.layer" + std::to_string(l) + ".weight"), thetas[l]});
  const auto& h = a.metadata.at("head");
  m.head_cfg.grid = {h.at("grid_s").get<int>(), h.at("grid_b").get<int>()};
  m.head_cfg.norm = norm_from_string(h.at("norm").get<std::string>());
  m.head_cfg.eps = h.at("eps").get<double>();
  m.head_cfg.bn_momentum = h.at("bn_momentum").get<double>();
  m.head_cfg.frame_w = h.at("frame_w").get<int>();
  m.head_cfg.frame_h = h.at("frame_h").get<int>();
  m.head.norm_gamma = a.get("head.norm_gamma");
  m.head.norm_beta = a.get("head.norm_beta");
  m.head.bn_mean = a.get("head.bn_mean");
  m.head.bn_var = a.get("head.bn_var");
  m.head.weight = a.get("head.weight");
  m.head.bias = a.get("head.bias");
  c.config = a.metadata.value("config", nlohmann::json::object());
  c.epoch = a.metadata.value("epoch", 0);
  c.config_hash = a.metadata.value("config_hash", "");
  for (const auto& e : a.metadata.value("history", nlohmann::json::array())) c.history.push_back(epoch_metrics_from_json(e));
  const auto step = a.metadata.value("adam_step", std::int64_t{-1});
  if (step >= 0) {
    AdamState s;
    s.step = step;
    const auto count = a.metadata.at("adam_tensors").get<std::size_t>();
    for (std::size_t k = 0; k < count; ++k) {
      s.m.push_back(a.get("adam.m." + std::to_string(k)));
      s.v.push_back(a.get("adam.v." + std::to_string(k)));
    }
    c.adam = std::move(s);
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& p, const Checkpoint& c) { checkpoint_to_archive(c).save(p); }
inline Checkpoint load_checkpoint(const std::filesystem::path& p) {
  return checkpoint_from_archive(TensorArchive::load(p));
}

inline Checkpoint make_checkpoint(const TrainResult& r, const TrainConfig& cfg) {
  return {r.best, to_json(cfg), r.best_epoch, r.config_hash, r.history, r.adam};
}

// ---------------------------------------------------------------------------
// Regularization sweep

struct SweepRow {
  double lambda = 0;
  double map_float = 0;
  double map_quant = 0;
  double map_chip = 0;
  double chip_power_mw = 0;
  double chip_spikes_per_s = 0;
  double spikes_per_s = 0;
  double synops_per_s = 0;
  bool chip_stall = false;
};

inline std::vector<SweepRow> sweep_lambda(const NetworkSpec& spec, const std::vector<Sample>& train_set,
                                          const std::vector<Sample>& val_set, const TrainConfig& base,
                                          const std::vector<double>& lambdas, const CoreBudget& budget = {},
                                          const PowerModel& power = {},
                                          const std::function<void(const SweepRow&)>& on_row = {}) {
  if (lambdas.size() < 2) throw Error(Errc::InvalidArgument, "a sweep needs at least two lambda values");
  std::vector<SweepRow> rows;
  for (double lam : lambdas) {
    TrainConfig cfg = base;
    cfg.lambda = lam;
    const auto tr = train(spec, train_set, val_set, cfg, budget);
    const auto val = prepare_all(val_set, tr.best.spec, cfg.window_us, cfg.representation());
    const auto mf = evaluate(tr.best, val, EvalMode::float_sim, budget, power, cfg.workers());
    const auto mq = evaluate(tr.best, val, EvalMode::quant_sim, budget, power, cfg.workers());
    const auto mc = evaluate(tr.best, val, EvalMode::emulator, budget, power, cfg.workers());
    SweepRow r{lam, mf.map, mq.map, mc.map, mc.power_mw.value_or(0), mc.spikes_per_s,
               mf.spikes_per_s, mf.synops_per_s, mc.stall};
    rows.push_back(r);
    if (on_row) on_row(r);
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "lambda,sim_map,sim_quant_map,chip_map,chip_power_mw,chip_spikes_per_s,sim_spikes_per_s,sim_synops_per_s_m,"
        "chip_stall\n";
  for (const auto& r : rows)
    os << r.lambda << ',' << r.map_float << ',' << r.map_quant << ',' << r.map_chip << ',' << r.chip_power_mw << ','
       << r.chip_spikes_per_s << ',' << r.spikes_per_s << ',' << r.synops_per_s / 1e6 << ',' << int(r.chip_stall)
       << '\n';
  return os.str();
}

}  // namespace spikeforge

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikeforge/error.hpp"
#include "spikeforge/events.hpp"
#include "spikeforge/neuron.hpp"
#include "spikeforge/tape.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

enum class LayerKind { conv, fc };

/// One on-chip layer: conv (3x3, stride 1, pad 1) or fully connected, both
/// bias-free and followed by IF neurons. Conv layers may sum-pool their
/// spikes by `pool`.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int out = 0;  // channels (conv) or features (fc)
  int pool = 1;
  double theta = 1.0;
  std::optional<SpikeMode> mode;  // overrides NetworkSpec::mode
};

struct NetworkSpec {
  std::array<int, 3> input{2, 128, 128};  // [P, H, W]
  std::vector<LayerSpec> layers;
  SpikeMode mode = SpikeMode::multi;
  double surrogate_beta_theta = 10.0;  // beta * theta
  std::int64_t max_spikes = kDefaultMaxSpikes;

  SpikeMode layer_mode(std::size_t l) const { return layers.at(l).mode.value_or(mode); }
  int n_out() const { return layers.empty() ? 0 : layers.back().out; }

  /// The default chip-compatible detection backbone: four conv layers with
  /// 2x2 sum pooling (128 -> 8) and four fully connected layers.
  static NetworkSpec speck_yolo(int n_out = 128) {
    NetworkSpec s;
    s.input = {2, 128, 128};
    for (int c : {16, 32, 64, 64}) s.layers.push_back({LayerKind::conv, c, 2, 1.0, std::nullopt});
    for (int f : {256, 256, 256}) s.layers.push_back({LayerKind::fc, f, 1, 1.0, std::nullopt});
    s.layers.push_back({LayerKind::fc, n_out, 1, 1.0, std::nullopt});
    return s;
  }
};

// ---------------------------------------------------------------------------
// Geometry

struct LayerGeometry {
  LayerKind kind;
  Shape in_shape;      // [C, H, W] for conv, [N] for fc
  Shape neuron_shape;  // IF neurons, before pooling
  Shape out_shape;     // after pooling
  std::int64_t kernel_entries = 0;
  std::int64_t neuron_entries = 0;  // counted on the pooled output
};

inline std::vector<LayerGeometry> describe(const NetworkSpec& spec) {
  std::vector<LayerGeometry> geo;
  Shape cur{spec.input[0], spec.input[1], spec.input[2]};
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    LayerGeometry g;
    g.kind = ls.kind;
    if (ls.out <= 0) throw Error(Errc::InvalidArgument, "layer " + std::to_string(l) + " has no outputs");
    if (ls.kind == LayerKind::conv) {
      if (cur.size() != 3) throw Error(Errc::ShapeMismatch, "conv layer " + std::to_string(l) + " after fc layer");
      if (ls.pool < 1 || cur[1] % ls.pool != 0 || cur[2] % ls.pool != 0)
        throw Error(Errc::OddExtent, "layer " + std::to_string(l) + " pooling does not divide " + shape_str(cur));
      g.in_shape = cur;
      g.neuron_shape = {ls.out, cur[1], cur[2]};
      g.out_shape = {ls.out, cur[1] / ls.pool, cur[2] / ls.pool};
      g.kernel_entries = std::int64_t(ls.out) * cur[0] * 9;
    } else {
      const int n = int(shape_size(cur));
      g.in_shape = {n};
      g.neuron_shape = {ls.out};
      g.out_shape = {ls.out};
      g.kernel_entries = std::int64_t(ls.out) * n;
    }
    g.neuron_entries = std::int64_t(shape_size(g.out_shape));
    cur = g.out_shape;
    geo.push_back(g);
  }
  return geo;
}

namespace detail {
inline int taps_in_bounds(int y, int x, int H, int W) {
  const int ny = std::min(y + 1, H - 1) - std::max(y - 1, 0) + 1;
  const int nx = std::min(x + 1, W - 1) - std::max(x - 1, 0) + 1;
  return ny * nx;
}
}  // namespace detail

/// Synapses reached by one spike entering layer `l` at input position
/// (y, x) (conv) or any input index (fc). Boundary taps are excluded.
inline std::int64_t input_fanout(const std::vector<LayerGeometry>& geo, std::size_t l, int y, int x) {
  if (l >= geo.size()) return 0;
  const auto& g = geo[l];
  if (g.kind == LayerKind::fc) return g.neuron_shape[0];
  return std::int64_t(g.neuron_shape[0]) * detail::taps_in_bounds(y, x, g.in_shape[1], g.in_shape[2]);
}

/// Fanout of every IF neuron of layer l, shaped like its neuron tensor.
inline Tensor neuron_fanouts(const NetworkSpec& spec, const std::vector<LayerGeometry>& geo, std::size_t l) {
  const auto& g = geo.at(l);
  Tensor f(g.neuron_shape);
  if (l + 1 >= geo.size()) return f;
  if (g.kind == LayerKind::fc) {
    f.fill(double(input_fanout(geo, l + 1, 0, 0)));
    return f;
  }
  const int C = g.neuron_shape[0], H = g.neuron_shape[1], W = g.neuron_shape[2];
  const int p = spec.layers[l].pool;
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) f.at(c, y, x) = double(input_fanout(geo, l + 1, y / p, x / p));
  return f;
}

// ---------------------------------------------------------------------------
// Hardware budget and constraint checking

/// Per-core limits. Defaults are estimates, not published chip figures.
struct CoreBudget {
  std::int64_t max_kernel_entries = std::int64_t{1} << 20;
  std::int64_t max_neuron_entries = std::int64_t{1} << 16;
  double max_synops_per_s = 25e6;
  int cores = 9;
  int max_input_width = 128;
  int max_input_height = 128;
  std::int64_t queue_capacity = std::int64_t{1} << 16;
  double stall_delay_us = 500.0;  // queueing delay that counts as a stall
};

struct CoreUsage {
  std::size_t layer = 0;
  std::int64_t kernel_entries = 0;
  std::int64_t neuron_entries = 0;
  bool kernel_ok = true;
  bool neuron_ok = true;
};

struct ConstraintReport {
  bool ok = true;
  std::vector<CoreUsage> cores;
  std::vector<std::string> violations;
  double kernel_utilization = 0;  // of cores_used * per-core budget
  double neuron_utilization = 0;
};

inline ConstraintReport check_constraints(const NetworkSpec& spec, const CoreBudget& budget) {
  ConstraintReport r;
  if (int(spec.layers.size()) > budget.cores)
    r.violations.push_back("core count > " + std::to_string(budget.cores) + " (" + std::to_string(spec.layers.size()) +
                           " layers)");
  if (spec.input[1] > budget.max_input_height || spec.input[2] > budget.max_input_width)
    r.violations.push_back("input resolution " + std::to_string(spec.input[2]) + "x" + std::to_string(spec.input[1]) +
                           " exceeds " + std::to_string(budget.max_input_width) + "x" +
                           std::to_string(budget.max_input_height));
  std::vector<LayerGeometry> geo;
  try {
    geo = describe(spec);
  } catch (const Error& e) {
    r.violations.push_back(e.what());
  }
  std::int64_t kernel_total = 0, neuron_total = 0;
  for (std::size_t l = 0; l < geo.size(); ++l) {
    CoreUsage u{l, geo[l].kernel_entries, geo[l].neuron_entries, true, true};
    u.kernel_ok = u.kernel_entries <= budget.max_kernel_entries;
    u.neuron_ok = u.neuron_entries <= budget.max_neuron_entries;
    if (!u.kernel_ok)
      r.violations.push_back("layer " + std::to_string(l) + " kernel memory " + std::to_string(u.kernel_entries) + " > " +
                             std::to_string(budget.max_kernel_entries));
    if (!u.neuron_ok)
      r.violations.push_back("layer " + std::to_string(l) + " neuron memory " + std::to_string(u.neuron_entries) + " > " +
                             std::to_string(budget.max_neuron_entries));
    kernel_total += u.kernel_entries;
    neuron_total += u.neuron_entries;
    r.cores.push_back(u);
  }
  if (!geo.empty()) {
    r.kernel_utilization = double(kernel_total) / (double(budget.max_kernel_entries) * budget.cores);
    r.neuron_utilization = double(neuron_total) / (double(budget.max_neuron_entries) * budget.cores);
  }
  r.ok = r.violations.empty();
  return r;
}

// ---------------------------------------------------------------------------
// JSON config

inline nlohmann::json to_json(const NetworkSpec& s) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : s.layers) {
    nlohmann::json j{{"type", l.kind == LayerKind::conv ? "conv" : "fc"}, {"out", l.out}, {"theta", l.theta}};
    if (l.kind == LayerKind::conv) j["pool"] = l.pool;
    if (l.mode) j["mode"] = to_string(*l.mode);
    layers.push_back(j);
  }
  return {{"input", s.input},
          {"mode", to_string(s.mode)},
          {"surrogate_beta_theta", s.surrogate_beta_theta},
          {"max_spikes", s.max_spikes},
          {"layers", layers}};
}

inline NetworkSpec network_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"input", "mode", "surrogate_beta_theta", "max_spikes", "layers"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw Error(Errc::InvalidArgument, "unknown network key '" + k + "'");
  NetworkSpec s;
  if (j.contains("input")) s.input = j.at("input").get<std::array<int, 3>>();
  if (j.contains("mode")) s.mode = spike_mode_from_string(j.at("mode").get<std::string>());
  s.surrogate_beta_theta = j.value("surrogate_beta_theta", s.surrogate_beta_theta);
  s.max_spikes = j.value("max_spikes", s.max_spikes);
  if (!j.contains("layers")) return NetworkSpec::speck_yolo();
  for (const auto& lj : j.at("layers")) {
    LayerSpec l;
    const auto type = lj.at("type").get<std::string>();
    if (type == "conv")
      l.kind = LayerKind::conv;
    else if (type == "fc")
      l.kind = LayerKind::fc;
    else
      throw Error(Errc::InvalidArgument, "unknown layer type '" + type + "'");
    l.out = lj.at("out").get<int>();
    l.pool = lj.value("pool", 1);
    l.theta = lj.value("theta", 1.0);
    if (lj.contains("mode")) l.mode = spike_mode_from_string(lj.at("mode").get<std::string>());
    if (!(l.theta > 0)) throw Error(Errc::InvalidArgument, "threshold must be positive");
    s.layers.push_back(l);
  }
  return s;
}

inline nlohmann::json to_json(const CoreBudget& b) {
  return {{"max_kernel_entries", b.max_kernel_entries},
          {"max_neuron_entries", b.max_neuron_entries},
          {"max_synops_per_s", b.max_synops_per_s},
          {"cores", b.cores},
          {"max_input_width", b.max_input_width},
          {"max_input_height", b.max_input_height},
          {"queue_capacity", b.queue_capacity},
          {"stall_delay_us", b.stall_delay_us}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline CoreBudget budget_from_json(const nlohmann::json& j) {
  CoreBudget b;
  for (const auto& [k, v] : j.items()) {
    if (k == "max_kernel_entries") b.max_kernel_entries = v.get<std::int64_t>();
    else if (k == "max_neuron_entries") b.max_neuron_entries = v.get<std::int64_t>();
    else if (k == "max_synops_per_s") b.max_synops_per_s = v.get<double>();
    else if (k == "cores") b.cores = v.get<int>();
    else if (k == "max_input_width") b.max_input_width = v.get<int>();
    else if (k == "max_input_height") b.max_input_height = v.get<int>();
    else if (k == "queue_capacity") b.queue_capacity = v.get<std::int64_t>();
    else if (k == "stall_delay_us") b.stall_delay_us = v.get<double>();
    else throw Error(Errc::InvalidArgument, "unknown budget key '" + k + "'");
  }
  if (!(b.max_synops_per_s > 0) || b.queue_capacity <= 0 || b.cores <= 0)
    throw Error(Errc::InvalidArgument, "budget values must be positive");
  return b;
}

inline nlohmann::json to_json(const ConstraintReport& r, const CoreBudget& b) {
  nlohmann::json cores = nlohmann::json::array();
  for (const auto& c : r.cores)
    cores.push_back({{"layer", c.layer},
                     {"kernel_entries", c.kernel_entries},
                     {"neuron_entries", c.neuron_entries},
                     {"kernel_ok", c.kernel_ok},
                     {"neuron_ok", c.neuron_ok}});
  return {{"ok", r.ok},
          {"cores_used", r.cores.size()},
          {"max_cores", b.cores},
          {"max_kernel_entries", b.max_kernel_entries},
          {"max_neuron_entries", b.max_neuron_entries},
          {"kernel_utilization", r.kernel_utilization},
          {"neuron_utilization", r.neuron_utilization},
          {"cores", cores},
          {"violations", r.violations}};
}

// ---------------------------------------------------------------------------
// Parameters

struct NetworkParams {
  std::vector<LayerParams> layers;
};

/// Gaussian init with std = gain / sqrt(fan_in); thresholds from the spec.
inline NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed, double gain = 1.0) {
  const auto geo = describe(spec);
  std::mt19937_64 rng(seed);
  NetworkParams p;
  for (std::size_t l = 0; l < geo.size(); ++l) {
    const auto& g = geo[l];
    Shape wshape = g.kind == LayerKind::conv ? Shape{g.neuron_shape[0], g.in_shape[0], 3, 3}
                                             : Shape{g.neuron_shape[0], g.in_shape[0]};
    const int fan_in = g.kind == LayerKind::conv ? g.in_shape[0] * 9 : g.in_shape[0];
    std::normal_distribution<double> nd(0.0, gain / std::sqrt(double(fan_in)));
    Tensor w(wshape);
    for (auto& v : w.vec()) v = nd(rng);
    p.layers.push_back({std::move(w), spec.layers[l].theta});
  }
  return p;
}

// ---------------------------------------------------------------------------
// Clock-driven inference

struct RunOptions {
  std::optional<SpikeMode> mode;  // override every layer's activation
  bool saturate_int16 = false;    // clamp membranes to the 16-bit state range
  bool keep_layer_spikes = false;
};

/// Membrane state carried across calls; default-constructed = reset.
template <typename T>
struct NetworkState {
  std::vector<BasicIFState<T>> layers;
};

template <typename T>
struct RunRecord {
  std::vector<BasicTensor<T>> output;                      // [t] final-layer spikes, flattened
  std::vector<std::vector<double>> spikes_per_layer;       // [l][t] totals
  std::vector<BasicTensor<T>> neuron_totals;               // [l] per-neuron sums over t (pre-pool)
  std::vector<std::vector<BasicTensor<T>>> layer_spikes;   // [t][l] when keep_layer_spikes
  std::vector<double> input_events;                        // [t] input mass per step
  bool saturated = false;
  std::int64_t state_clamps = 0;

  double total_spikes() const {
    double s = 0;
    for (const auto& l : spikes_per_layer)
      for (double v : l) s += v;
    return s;
  }
};

template <typename T = double>
RunRecord<T> run_network(const NetworkSpec& spec, const NetworkParams& params, const FrameSequence& frames,
                         NetworkState<T>& state, const RunOptions& opts = {}) {
  const auto geo = describe(spec);
  if (frames.P != spec.input[0] || frames.H != spec.input[1] || frames.W != spec.input[2])
    throw Error(Errc::ShapeMismatch, "frames do not match network input");
  if (params.layers.size() != geo.size()) throw Error(Errc::ShapeMismatch, "parameter count");
  std::vector<BasicTensor<T>> weights;
  std::vector<T> thetas;
  for (const auto& lp : params.layers) {
    weights.push_back(lp.weight.template cast<T>());
    thetas.push_back(T(lp.theta));
  }
  if (state.layers.size() != geo.size()) state.layers.assign(geo.size(), {});

  RunRecord<T> rec;
  rec.spikes_per_layer.assign(geo.size(), {});
  for (const auto& g : geo) rec.neuron_totals.emplace_back(g.neuron_shape);

  for (int t = 0; t < frames.T; ++t) {
    auto fr = frames.frame(t);
    BasicTensor<T> x({frames.P, frames.H, frames.W}, std::vector<T>(fr.begin(), fr.end()));
    rec.input_events.push_back(double(x.sum()));
    std::vector<BasicTensor<T>> kept;
    for (std::size_t l = 0; l < geo.size(); ++l) {
      const auto& ls = spec.layers[l];
      BasicTensor<T> drive = ls.kind == LayerKind::conv ? conv2d(x, weights[l])
                                                        : linear(x.reshaped({int(x.size())}), weights[l]);
      auto& st = state.layers[l];
      const SpikeMode mode = opts.mode.value_or(spec.layer_mode(l));
      BasicTensor<T> s = if_step(st, drive, thetas[l], mode, spec.max_spikes);
      if (opts.saturate_int16) {
        // A bin's drive never sits in the membrane at once on chip (events
        // fire as they arrive), so only the stored residual is clamped.
        for (auto& u : st.U.vec()) {
          const T c = std::clamp(u, T(-32768), T(32767));
          if (c != u) ++rec.state_clamps;
          u = c;
        }
      }
      rec.saturated = rec.saturated || st.saturated;
      rec.spikes_per_layer[l].push_back(double(s.sum()));
      rec.neuron_totals[l] += s;
      if (opts.keep_layer_spikes) kept.push_back(s);
      x = (ls.kind == LayerKind::conv && ls.pool > 1) ? sum_pool(s, ls.pool) : std::move(s);
    }
    rec.output.push_back(x.reshaped({int(x.size())}));
    if (opts.keep_layer_spikes) rec.layer_spikes.push_back(std::move(kept));
  }
  return rec;
}

template <typename T = double>
RunRecord<T> run_network(const NetworkSpec& spec, const NetworkParams& params, const FrameSequence& frames,
                         const RunOptions& opts = {}) {
  NetworkState<T> state;
  return run_network<T>(spec, params, frames, state, opts);
}

// ---------------------------------------------------------------------------
// Recorded forward pass for BPTT

struct TapeForward {
  std::vector<Tape::Var> weights;                    // [l]
  std::vector<Tape::Var> output;                     // [t] final-layer spikes, flattened
  std::vector<std::vector<Tape::Var>> spikes;        // [t][l] pre-pool spike counts
  std::vector<std::vector<double>> spikes_per_layer; // [l][t]
};

/// Unrolls the network over all timesteps of one sample. Membrane state is
/// zero at the start; the soft reset is excluded from the gradient path.
inline TapeForward forward_on_tape(Tape& tape, const NetworkSpec& spec, const NetworkParams& params,
                                   const FrameSequence& frames, std::optional<SpikeMode> mode_override = {}) {
  const auto geo = describe(spec);
  TapeForward f;
  for (const auto& lp : params.layers) f.weights.push_back(tape.parameter(lp.weight));
  f.spikes_per_layer.assign(geo.size(), {});
  std::vector<std::optional<Tape::Var>> U(geo.size());
  for (int t = 0; t < frames.T; ++t) {
    auto fr = frames.frame(t);
    Tape::Var x = tape.leaf(Tensor({frames.P, frames.H, frames.W}, std::vector<double>(fr.begin(), fr.end())));
    std::vector<Tape::Var> layer_spikes;
    for (std::size_t l = 0; l < geo.size(); ++l) {
      const auto& ls = spec.layers[l];
      Tape::Var drive;
      if (ls.kind == LayerKind::conv) {
        drive = tape.conv2d(x, f.weights[l]);
      } else {
        if (tape.value(x).rank() != 1) x = tape.reshape(x, {int(tape.value(x).size())});
        drive = tape.linear(x, f.weights[l]);
      }
      const Tape::Var v = U[l] ? tape.add(*U[l], drive) : drive;
      const SpikeMode mode = mode_override.value_or(spec.layer_mode(l));
      const double theta = params.layers[l].theta;
      const auto sg = SurrogateConfig::for_layer(mode, theta, spec.surrogate_beta_theta);
      const std::int64_t cap = spec.max_spikes;
      const Tape::Var s = tape.map(
          v, [theta, mode, cap](double u) { return spike_count(u, theta, mode, cap); },
          [sg](double u) { return surrogate_grad(u, sg); });
      U[l] = tape.subtract_detached(v, s, theta);
      layer_spikes.push_back(s);
      f.spikes_per_layer[l].push_back(tape.value(s).sum());
      x = (ls.kind == LayerKind::conv && ls.pool > 1) ? tape.sum_pool(s, ls.pool) : s;
    }
    if (tape.value(x).rank() != 1) x = tape.reshape(x, {int(tape.value(x).size())});
    f.output.push_back(x);
    f.spikes.push_back(std::move(layer_spikes));
  }
  return f;
}

}  // namespace spikeforge

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spikeforge/checkpoint.hpp"
#include "spikeforge/error.hpp"
#include "spikeforge/events.hpp"
#include "spikeforge/network.hpp"

namespace spikeforge {

// ---------------------------------------------------------------------------
// Quantization

struct QuantizedLayer {
  Shape shape;
  std::vector<std::int8_t> weight;
  double scale = 1.0;       // W_q = round(scale * W)
  std::int32_t theta_q = 1;
};

struct QuantizedNetwork {
  NetworkSpec spec;
  std::vector<QuantizedLayer> layers;

  /// Integer weights and thresholds as float parameters, for the
  /// clock-driven simulator.
  NetworkParams as_params() const {
    NetworkParams p;
    for (const auto& q : layers) {
      Tensor w(q.shape);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = q.weight[i];
      p.layers.push_back({std::move(w), double(q.theta_q)});
    }
    return p;
  }

  /// W_q / scale and theta_q / scale.
  NetworkParams dequantized() const {
    NetworkParams p = as_params();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      p.layers[l].weight *= 1.0 / layers[l].scale;
      p.layers[l].theta /= layers[l].scale;
    }
    return p;
  }
};

/// Symmetric per-layer quantization to int8 with the threshold scaled by the
/// same factor.
inline QuantizedNetwork quantize(const NetworkSpec& spec, const NetworkParams& params) {
  if (params.layers.size() != spec.layers.size()) throw Error(Errc::ShapeMismatch, "parameter count");
  QuantizedNetwork q{spec, {}};
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& lp = params.layers[l];
    const double m = lp.weight.max_abs();
    if (!(m > 0.0)) throw Error(Errc::ZeroWeights, "layer " + std::to_string(l) + " has all-zero weights");
    QuantizedLayer ql;
    ql.shape = lp.weight.shape();
    ql.scale = 127.0 / m;
    ql.weight.reserve(lp.weight.size());
    for (double w : lp.weight.vec())
      ql.weight.push_back(std::int8_t(std::clamp<long>(std::lround(ql.scale * w), -127, 127)));
    ql.theta_q = std::int32_t(std::max(1L, std::lround(ql.scale * lp.theta)));
    q.layers.push_back(std::move(ql));
  }
  return q;
}

struct QuantizationLayerSummary {
  double scale;
  std::int32_t theta_q;
  double max_weight_error;  // max |W_q / scale - W|
  double step;              // 1 / scale
  double theta_error;       // |theta_q / scale - theta|
};

inline std::vector<QuantizationLayerSummary> quantization_summary(const NetworkParams& params,
                                                                  const QuantizedNetwork& q) {
  std::vector<QuantizationLayerSummary> out;
  for (std::size_t l = 0; l < q.layers.size(); ++l) {
    const auto& ql = q.layers[l];
    const auto& w = params.layers.at(l).weight;
    double err = 0;
    for (std::size_t i = 0; i < w.size(); ++i) err = std::max(err, std::abs(ql.weight[i] / ql.scale - w[i]));
    out.push_back({ql.scale, ql.theta_q, err, 1.0 / ql.scale,
                   std::abs(ql.theta_q / ql.scale - params.layers[l].theta)});
  }
  return out;
}

inline nlohmann::json to_json(const std::vector<QuantizationLayerSummary>& s) {
  nlohmann::json a = nlohmann::json::array();
  for (std::size_t l = 0; l < s.size(); ++l)
    a.push_back({{"layer", l},
                 {"scale", s[l].scale},
                 {"theta_q", s[l].theta_q},
                 {"max_weight_error", s[l].max_weight_error},
                 {"quantization_step", s[l].step},
                 {"theta_error", s[l].theta_error}});
  return a;
}

inline TensorArchive quantized_to_archive(const QuantizedNetwork& q) {
  TensorArchive a;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < q.layers.size(); ++l) {
    a.put_i8("layer" + std::to_string(l) + ".weight_q", q.layers[l].shape, q.layers[l].weight);
    layers.push_back({{"scale", q.layers[l].scale}, {"theta_q", q.layers[l].theta_q}});
  }
  a.metadata = {{"kind", "quantized_network"}, {"network", to_json(q.spec)}, {"layers", layers}};
  return a;
}

inline QuantizedNetwork quantized_from_archive(const TensorArchive& a) {
  if (a.metadata.value("kind", "") != "quantized_network")
    throw Error(Errc::FormatError, "archive is not a quantized network");
  QuantizedNetwork q{network_from_json(a.metadata.at("network")), {}};
  const auto& layers = a.metadata.at("layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string name = "layer" + std::to_string(l) + ".weight_q";
    QuantizedLayer ql;
    ql.shape = a.entry(name).shape;
    ql.weight = a.get_i8(name);
    ql.scale = layers[l].at("scale").get<double>();
    ql.theta_q = layers[l].at("theta_q").get<std::int32_t>();
    if (ql.theta_q < 1) throw Error(Errc::FormatError, "theta_q below 1 in layer " + std::to_string(l));
    q.layers.push_back(std::move(ql));
  }
  describe(q.spec);
  return q;
}

/// Per-neuron spike disagreement between two runs of the same topology:
/// sum |a - b| over neurons, divided by the total spikes of `reference`.
template <typename T>
double spike_disagreement(const RunRecord<T>& reference, const RunRecord<T>& other) {
  double diff = 0, total = 0;
  for (std::size_t l = 0; l < reference.neuron_totals.size(); ++l) {
    const auto& a = reference.neuron_totals[l];
    const auto& b = other.neuron_totals.at(l);
    a.check_same(b);
    for (std::size_t i = 0; i < a.size(); ++i) {
      diff += std::abs(double(a[i]) - double(b[i]));
      total += double(a[i]);
    }
  }
  return total > 0 ? diff / total : (diff > 0 ? 1.0 : 0.0);
}

// ---------------------------------------------------------------------------
// SynOps accounting

struct SynOpsTally {
  std::vector<double> layer_spikes;
  std::vector<double> layer_synops;
  double duration_s = 0;

  double total_spikes() const { return std::accumulate(layer_spikes.begin(), layer_spikes.end(), 0.0); }
  double total_synops() const { return std::accumulate(layer_synops.begin(), layer_synops.end(), 0.0); }
  double spikes_per_s() const { return duration_s > 0 ? total_spikes() / duration_s : 0.0; }
  double synops_per_s() const { return duration_s > 0 ? total_synops() / duration_s : 0.0; }
};

/// SynOps per layer = sum over neurons of spikes x fanout.
inline SynOpsTally synops_count(const std::vector<Tensor>& neuron_spikes, const std::vector<Tensor>& fanouts,
                                double duration_s) {
  if (neuron_spikes.size() != fanouts.size()) throw Error(Errc::ShapeMismatch, "spike record vs fanouts");
  SynOpsTally t;
  t.duration_s = duration_s;
  for (std::size_t l = 0; l < neuron_spikes.size(); ++l) {
    neuron_spikes[l].check_same(fanouts[l]);
    double s = 0, so = 0;
    for (std::size_t i = 0; i < neuron_spikes[l].size(); ++i) {
      s += neuron_spikes[l][i];
      so += neuron_spikes[l][i] * fanouts[l][i];
    }
    t.layer_spikes.push_back(s);
    t.layer_synops.push_back(so);
  }
  return t;
}

inline std::vector<Tensor> network_fanouts(const NetworkSpec& spec) {
  const auto geo = describe(spec);
  std::vector<Tensor> f;
  for (std::size_t l = 0; l < geo.size(); ++l) f.push_back(neuron_fanouts(spec, geo, l));
  return f;
}

// ---------------------------------------------------------------------------
// Per-event emulation

struct ChipEvent {
  int layer = 0;  // destination layer; == layer count for readout events
  int c = 0, y = 0, x = 0;
  double t_us = 0;
  std::int64_t count = 1;
};

struct CoreTelemetry {
  double synops = 0;
  std::int64_t events_in = 0;
  std::int64_t processed = 0;
  std::int64_t delayed = 0;
  std::int64_t dropped = 0;
  std::int64_t max_queue = 0;
  double max_delay_us = 0;
  double busy_until_us = 0;
  std::vector<std::int64_t> queue_per_ms;  // peak waiting events per millisecond
};

struct SynOpsReport {
  std::vector<CoreTelemetry> cores;
  SynOpsTally tally;
  double input_events = 0;
  double completion_us = 0;
  std::int64_t bin_us = 1000;
  std::vector<double> spikes_per_bin;        // all layers, by emission time
  std::vector<double> input_events_per_bin;
  std::int64_t saturation_events = 0;
  std::int64_t threshold_ties = 0;
  std::int64_t delayed_events = 0;
  std::int64_t dropped_events = 0;
  double max_delay_us = 0;
  bool stall = false;

  std::vector<double> core_synops_per_s() const {
    std::vector<double> r;
    for (const auto& c : cores) r.push_back(tally.duration_s > 0 ? c.synops / tally.duration_s : 0.0);
    return r;
  }
};

struct EmulatorResult {
  std::vector<ChipEvent> output;     // spikes of the last layer
  SynOpsReport report;
  std::vector<Tensor> neuron_totals; // [l] per-neuron spike totals (pre-pool)
};

namespace detail {
inline bool event_before(const ChipEvent& a, const ChipEvent& b) {
  return std::tie(a.t_us, a.layer, a.y, a.x, a.c) < std::tie(b.t_us, b.layer, b.y, b.x, b.c);
}

inline void bump_bin(std::vector<double>& bins, double t_us, std::int64_t bin_us, double v) {
  const auto b = std::size_t(std::max(0.0, std::floor(t_us / double(bin_us))));
  if (bins.size() <= b) bins.resize(b + 1, 0.0);
  bins[b] += v;
}
}  // namespace detail

/// Discrete-event simulation of event-driven inference. Each layer owns one
/// FIFO core; an event costs count x fanout SynOps of service time at the
/// core's rate, and its output spikes are stamped with the finish time.
/// Because the pipeline is feed-forward and every queue is FIFO, cores are
/// simulated one after another in layer order.
inline EmulatorResult run_per_event(const QuantizedNetwork& q, const EventStream& stream, const CoreBudget& budget) {
  const auto cr = check_constraints(q.spec, budget);
  if (!cr.ok) throw Error(Errc::ConstraintViolation, cr.violations.front());
  const auto geo = describe(q.spec);
  const int P = q.spec.input[0], H = q.spec.input[1], W = q.spec.input[2];
  if (stream.resolution.width != W || stream.resolution.height != H)
    throw Error(Errc::ShapeMismatch, "stream resolution does not match network input");

  EmulatorResult res;
  SynOpsReport& rep = res.report;
  rep.tally.duration_s = double(stream.duration_us) * 1e-6;

  std::vector<ChipEvent> in;
  in.reserve(stream.events.size());
  for (const Event& e : stream.events) {
    const int c = P == 1 ? 0 : std::min<int>(e.p, P - 1);
    in.push_back({0, c, e.y, e.x, double(e.t), 1});
    detail::bump_bin(rep.input_events_per_bin, double(e.t), rep.bin_us, 1.0);
  }
  std::stable_sort(in.begin(), in.end(), detail::event_before);
  rep.input_events = double(in.size());

  const double us_per_synop = 1e6 / budget.max_synops_per_s;
  for (std::size_t l = 0; l < geo.size(); ++l) {
    const auto& g = geo[l];
    const auto& ql = q.layers.at(l);
    const auto& ls = q.spec.layers[l];
    const std::int64_t theta = ql.theta_q;
    const std::int64_t cap = q.spec.max_spikes;
    const bool conv = g.kind == LayerKind::conv;
    const int Co = g.neuron_shape[0];
    const int Ci = conv ? g.in_shape[0] : 0, Hi = conv ? g.in_shape[1] : 0, Wi = conv ? g.in_shape[2] : 0;
    const int Nin = conv ? 0 : g.in_shape[0];
    const Shape prev_out = l == 0 ? Shape{P, H, W} : geo[l - 1].out_shape;

    std::vector<std::int32_t> U(shape_size(g.neuron_shape), 0);
    Tensor totals(g.neuron_shape);
    CoreTelemetry core;
    std::deque<double> waiting;  // start times of accepted events not yet in service
    double server_free = 0;
    std::vector<ChipEvent> out;
    double spikes_here = 0;

    auto fire = [&](std::size_t idx, int c, int y, int x, double t) {
      std::int64_t u = U[idx];
      if (u > 0 && u % theta == 0) ++rep.threshold_ties;
      if (u <= theta) return;
      const std::int64_t s = std::min<std::int64_t>(u / theta, cap);
      U[idx] = std::int32_t(u - s * theta);
      totals[idx] += double(s);
      spikes_here += double(s);
      detail::bump_bin(rep.spikes_per_bin, t, rep.bin_us, double(s));
      const int p = conv ? ls.pool : 1;
      out.push_back({int(l) + 1, c, y / p, x / p, t, s});
    };
    auto integrate = [&](std::size_t idx, std::int64_t delta) {
      std::int64_t u = std::int64_t(U[idx]) + delta;
      if (u > 32767 || u < -32768) {
        ++rep.saturation_events;
        u = std::clamp<std::int64_t>(u, -32768, 32767);
      }
      U[idx] = std::int32_t(u);
    };

    for (const ChipEvent& ev : in) {
      ++core.events_in;
      const double arrival = ev.t_us;
      while (!waiting.empty() && waiting.front() <= arrival) waiting.pop_front();
      const auto ms = std::size_t(std::max(0.0, arrival / 1000.0));
      if (core.queue_per_ms.size() <= ms) core.queue_per_ms.resize(ms + 1, 0);
      core.queue_per_ms[ms] = std::max<std::int64_t>(core.queue_per_ms[ms], std::int64_t(waiting.size()));
      if (std::int64_t(waiting.size()) >= budget.queue_capacity) {
        ++core.dropped;
        continue;
      }
      int fan;
      if (conv) {
        if (ev.c >= Ci || ev.y >= Hi || ev.x >= Wi) throw Error(Errc::OutOfBounds, "event outside layer input");
        fan = int(input_fanout(geo, l, ev.y, ev.x));
      } else {
        fan = Co;
      }
      const double synops = double(ev.count) * fan;
      const double start = std::max(arrival, server_free);
      const double finish = start + synops * us_per_synop;
      server_free = finish;
      if (start > arrival) {
        ++core.delayed;
        core.max_delay_us = std::max(core.max_delay_us, start - arrival);
        waiting.push_back(start);
      }
      core.max_queue = std::max<std::int64_t>(core.max_queue, std::int64_t(waiting.size()));
      core.synops += synops;
      ++core.processed;

      if (conv) {
        for (int co = 0; co < Co; ++co)
          for (int ky = 0; ky < 3; ++ky) {
            const int oy = ev.y - ky + 1;
            if (oy < 0 || oy >= Hi) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ox = ev.x - kx + 1;
              if (ox < 0 || ox >= Wi) continue;
              const std::int64_t w = ql.weight[((std::size_t(co) * Ci + ev.c) * 3 + ky) * 3 + kx];
              const std::size_t idx = (std::size_t(co) * Hi + oy) * Wi + ox;
              integrate(idx, ev.count * w);
              fire(idx, co, oy, ox, finish);
            }
          }
      } else {
        const std::size_t i = prev_out.size() == 3
                                  ? (std::size_t(ev.c) * prev_out[1] + ev.y) * prev_out[2] + ev.x
                                  : std::size_t(ev.c);
        if (int(i) >= Nin) throw Error(Errc::OutOfBounds, "event outside layer input");
        for (int m = 0; m < Co; ++m) {
          integrate(m, ev.count * std::int64_t(ql.weight[std::size_t(m) * Nin + i]));
          fire(m, m, 0, 0, finish);
        }
      }
    }
    core.busy_until_us = server_free;
    rep.completion_us = std::max(rep.completion_us, server_free);
    rep.delayed_events += core.delayed;
    rep.dropped_events += core.dropped;
    rep.max_delay_us = std::max(rep.max_delay_us, core.max_delay_us);
    rep.cores.push_back(std::move(core));
    rep.tally.layer_spikes.push_back(spikes_here);
    res.neuron_totals.push_back(std::move(totals));

    std::stable_sort(out.begin(), out.end(), detail::event_before);
    in = std::move(out);
  }
  res.output = std::move(in);

  const auto fanouts = network_fanouts(q.spec);
  for (std::size_t l = 0; l < geo.size(); ++l) {
    double so = 0;
    for (std::size_t i = 0; i < fanouts[l].size(); ++i) so += res.neuron_totals[l][i] * fanouts[l][i];
    rep.tally.layer_synops.push_back(so);
  }
  rep.stall = rep.dropped_events > 0 || rep.max_delay_us > budget.stall_delay_us;
  return res;
}

/// Aggregates readout events into per-window spike counts of the last layer.
/// Events stamped after the last window are not retrieved; their number is
/// returned through `late`.
inline std::vector<Tensor> readout_counts(const std::vector<ChipEvent>& output, int n_out, std::int64_t window_us,
                                          int windows, std::int64_t* late = nullptr) {
  std::vector<Tensor> counts(std::size_t(windows), Tensor({n_out}));
  std::int64_t dropped = 0;
  for (const auto& e : output) {
    const auto b = std::int64_t(std::floor(e.t_us / double(window_us)));
    if (b >= windows) {
      dropped += e.count;
      continue;
    }
    counts[std::size_t(b)][std::size_t(e.c)] += double(e.count);
  }
  if (late) *late = dropped;
  return counts;
}

inline nlohmann::json to_json(const SynOpsReport& r) {
  nlohmann::json cores = nlohmann::json::array();
  for (std::size_t l = 0; l < r.cores.size(); ++l) {
    const auto& c = r.cores[l];
    cores.push_back({{"core", l},
                     {"synops", c.synops},
                     {"synops_per_s", r.tally.duration_s > 0 ? c.synops / r.tally.duration_s : 0.0},
                     {"events_in", c.events_in},
                     {"processed", c.processed},
                     {"delayed", c.delayed},
                     {"dropped", c.dropped},
                     {"max_queue", c.max_queue},
                     {"max_delay_us", c.max_delay_us},
                     {"busy_until_us", c.busy_until_us},
                     {"queue_per_ms", c.queue_per_ms}});
  }
  return {{"cores", cores},
          {"layer_spikes", r.tally.layer_spikes},
          {"layer_synops", r.tally.layer_synops},
          {"duration_s", r.tally.duration_s},
          {"spikes_per_s", r.tally.spikes_per_s()},
          {"synops_per_s", r.tally.synops_per_s()},
          {"input_events", r.input_events},
          {"completion_us", r.completion_us},
          {"saturation_events", r.saturation_events},
          {"delayed_events", r.delayed_events},
          {"dropped_events", r.dropped_events},
          {"max_delay_us", r.max_delay_us},
          {"stall", r.stall}};
}

// ---------------------------------------------------------------------------
// Power

/// Published chip measurements (spikes/s, mW) used for the default slope.
inline std::vector<std::pair<double, double>> reference_power_points() {
  return {{567002, 33.2}, {553794, 33.1}, {411300, 24.8}, {319966, 19.4},
          {279745, 17.3}, {192292, 11.8}, {104767, 7.3}};
}

struct PowerModel {
  double idle_mw = 0.9;                         // sub-milliwatt idle
  double slope_mw_per_spike_s = 5.7752299e-5;   // least squares with the intercept pinned at idle_mw
};

struct PowerEstimate {
  double idle_mw = 0;
  double slope_mw_per_spike_s = 0;
  double sample_hz = 100;
  std::vector<std::pair<double, double>> timeline;  // (t_ms, mW)
  double average_mw = 0;
  double spikes_per_s = 0;
};

inline double estimate_power(double spikes_per_s, const PowerModel& m) {
  return m.idle_mw + m.slope_mw_per_spike_s * spikes_per_s;
}

inline PowerEstimate estimate_power(const SynOpsReport& r, const PowerModel& m, double sample_hz = 100.0) {
  PowerEstimate p{m.idle_mw, m.slope_mw_per_spike_s, sample_hz, {}, m.idle_mw, r.tally.spikes_per_s()};
  const double period_us = 1e6 / sample_hz;
  const double span_us = std::max(r.tally.duration_s * 1e6, r.completion_us);
  const auto n = std::size_t(std::ceil(span_us / period_us));
  std::vector<double> per_sample(n, 0.0);
  for (std::size_t b = 0; b < r.spikes_per_bin.size(); ++b) {
    const double t = (double(b) + 0.5) * double(r.bin_us);
    const auto k = std::min(n ? n - 1 : 0, std::size_t(t / period_us));
    if (n) per_sample[k] += r.spikes_per_bin[b];
  }
  double acc = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double mw = estimate_power(per_sample[k] * sample_hz, m);
    p.timeline.push_back({double(k) * period_us / 1000.0, mw});
    acc += mw;
  }
  if (n) p.average_mw = acc / double(n);
  return p;
}

struct PowerFit {
  double idle_mw = 0;
  double slope_mw_per_spike_s = 0;
  double r2 = 0;
};

/// Ordinary least squares of mW against spikes/s.
inline PowerFit calibrate_power(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw Error(Errc::InvalidArgument, "calibration needs at least two points");
  double mx = 0, my = 0;
  for (const auto& [x, y] : points) mx += x, my += y;
  mx /= double(points.size());
  my /= double(points.size());
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0.0) throw Error(Errc::DegenerateFit, "all spike rates are equal");
  PowerFit f;
  f.slope_mw_per_spike_s = sxy / sxx;
  f.idle_mw = my - f.slope_mw_per_spike_s * mx;
  double ss_res = 0;
  for (const auto& [x, y] : points) {
    const double e = y - (f.idle_mw + f.slope_mw_per_spike_s * x);
    ss_res += e * e;
  }
  f.r2 = syy > 0 ? 1.0 - ss_res / syy : (ss_res == 0 ? 1.0 : 0.0);
  return f;
}

inline nlohmann::json to_json(const PowerEstimate& p) {
  return {{"idle_mw", p.idle_mw},
          {"slope_mw_per_spike_s", p.slope_mw_per_spike_s},
          {"sample_hz", p.sample_hz},
          {"average_mw", p.average_mw},
          {"spikes_per_s", p.spikes_per_s}};
}

inline std::string power_timeline_csv(const PowerEstimate& p) {
  std::ostringstream os;
  os.precision(10);
  os << "t_ms,mW\n";
  for (const auto& [t, mw] : p.timeline) os << t << ',' << mw << '\n';
  return os.str();
}

/// Fit against the reference points next to the shipped defaults.
inline nlohmann::json calibration_report(const PowerModel& m = {}) {
  const auto pts = reference_power_points();
  const auto fit = calibrate_power(pts);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [x, y] : pts) {
    const double est = estimate_power(x, m);
    rows.push_back({{"spikes_per_s", x}, {"measured_mw", y}, {"default_model_mw", est},
                    {"relative_error", std::abs(est - y) / y}});
  }
  return {{"fit", {{"idle_mw", fit.idle_mw}, {"slope_mw_per_spike_s", fit.slope_mw_per_spike_s}, {"r2", fit.r2}}},
          {"default_model", {{"idle_mw", m.idle_mw}, {"slope_mw_per_spike_s", m.slope_mw_per_spike_s}}},
          {"note", "free-intercept fit exceeds the sub-milliwatt idle figure; defaults pin the intercept at idle"},
          {"rows", rows}};
}

// ---------------------------------------------------------------------------
// Simulation vs per-event gap

struct GapReport {
  double binned_single = 0;  // clock-driven, single-spike, binary frames, float weights
  double binned_multi = 0;   // clock-driven, multi-spike, histogram frames, quantized
  double per_event = 0;      // event-driven emulation, quantized
  std::vector<double> layer_binned_single, layer_binned_multi, layer_per_event;
  std::vector<double> output_divergence;  // per window, L1 between (b) and (c) readout counts
  bool stall = false;

  double blowup_vs_single() const { return binned_single > 0 ? per_event / binned_single : INFINITY; }
  double blowup_vs_multi() const { return binned_multi > 0 ? per_event / binned_multi : INFINITY; }
};

inline GapReport gap_report(const NetworkSpec& spec, const NetworkParams& float_params, const QuantizedNetwork& q,
                            const EventStream& stream, std::int64_t window_us, const CoreBudget& budget = {}) {
  GapReport g;
  const auto binary = bin_events(stream, window_us, Representation::binary);
  const auto hist = bin_events(stream, window_us, Representation::histogram);

  RunOptions single_opts;
  single_opts.mode = SpikeMode::single;
  const auto a = run_network<double>(spec, float_params, binary, single_opts);
  RunOptions multi_opts;
  multi_opts.mode = SpikeMode::multi;
  multi_opts.saturate_int16 = true;
  const auto b = run_network<double>(q.spec, q.as_params(), hist, multi_opts);
  const auto c = run_per_event(q, stream, budget);

  for (const auto& l : a.spikes_per_layer) g.layer_binned_single.push_back(std::accumulate(l.begin(), l.end(), 0.0));
  for (const auto& l : b.spikes_per_layer) g.layer_binned_multi.push_back(std::accumulate(l.begin(), l.end(), 0.0));
  g.layer_per_event = c.report.tally.layer_spikes;
  g.binned_single = a.total_spikes();
  g.binned_multi = b.total_spikes();
  g.per_event = c.report.tally.total_spikes();
  g.stall = c.report.stall;

  const int n_out = spec.n_out();
  const auto readout = readout_counts(c.output, n_out, window_us, hist.T);
  for (int t = 0; t < hist.T; ++t) {
    double d = 0;
    for (int i = 0; i < n_out; ++i) d += std::abs(b.output[t][i] - readout[t][i]);
    g.output_divergence.push_back(d);
  }
  return g;
}

inline nlohmann::json to_json(const GapReport& g) {
  auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"binned_single_spikes", g.binned_single},
          {"binned_multi_spikes", g.binned_multi},
          {"per_event_spikes", g.per_event},
          {"blowup_vs_single", finite_or_null(g.blowup_vs_single())},
          {"blowup_vs_multi", finite_or_null(g.blowup_vs_multi())},
          {"layer_binned_single", g.layer_binned_single},
          {"layer_binned_multi", g.layer_binned_multi},
          {"layer_per_event", g.layer_per_event},
          {"output_divergence", g.output_divergence},
          {"stall", g.stall}};
}

}  // namespace spikeforge

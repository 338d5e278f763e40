#pragma once

#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikeforge/emulator.hpp"
#include "spikeforge/trainer.hpp"

namespace spikeforge {

// ---------------------------------------------------------------------------
// Desk-scale setup: small moving-box recordings that train in minutes on one
// core.

inline SynthConfig desk_synth_config() {
  SynthConfig c;
  c.box_min = 20;
  c.box_max = 28;
  return c;
}

/// Recordings generated at 64x64 and downsampled to side x side.
inline std::vector<Sample> desk_dataset(int n, int side, std::uint64_t first_seed = 1000) {
  const auto sc = desk_synth_config();
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    auto s = synth_moving_box(sc, first_seed + std::uint64_t(i));
    out.push_back(side == sc.resolution.width && side == sc.resolution.height ? s : downsample(s, {side, side}));
  }
  return out;
}

inline NetworkSpec desk_spec(int side = 32) {
  NetworkSpec s;
  s.input = {2, side, side};
  s.layers = {{LayerKind::conv, 8, 2, 1.0, {}},
              {LayerKind::conv, 16, 2, 1.0, {}},
              {LayerKind::conv, 16, 2, 1.0, {}},
              {LayerKind::fc, 128, 1, 1.0, {}},
              {LayerKind::fc, 64, 1, 1.0, {}}};
  return s;
}

inline TrainConfig desk_train_config() {
  TrainConfig c;
  c.epochs = 40;
  c.batch_size = 4;
  c.lr = 1e-3;
  return c;
}

struct GridCell {
  std::string name;
  NormKind norm = NormKind::layer;
  SpikeMode mode = SpikeMode::multi;
  Representation repr = Representation::histogram;
  std::int64_t window_us = 10'000;
  double lambda = 0;
  bool sweep = false;                   // member of the lambda sweep
  std::optional<double> reference_map;  // published value, annotation only
  std::string reference_note;

  TrainConfig config(const TrainConfig& base) const {
    TrainConfig c = base;
    c.norm = norm;
    c.mode = mode;
    c.repr = repr;
    c.window_us = window_us;
    c.lambda = lambda;
    return c;
  }
};

struct ExperimentGrid {
  NetworkSpec spec;
  TrainConfig base;
  std::vector<GridCell> cells;
};

/// Normalization ablation, single vs multi spike, and a three-point lambda
/// sweep, all at 10 ms windows.
inline ExperimentGrid default_grid(const NetworkSpec& spec, const TrainConfig& base) {
  ExperimentGrid g{spec, base, {}};
  using R = Representation;
  g.cells.push_back({"multi_none", NormKind::none, SpikeMode::multi, R::histogram, 10'000, 0, false, 0.0,
                     "published, multi-spike, 10 ms, no normalization"});
  g.cells.push_back({"multi_batch", NormKind::batch, SpikeMode::multi, R::histogram, 10'000, 0, false, 0.001,
                     "published, multi-spike, 10 ms, batch norm"});
  g.cells.push_back({"multi_layer", NormKind::layer, SpikeMode::multi, R::histogram, 10'000, 0, true, 0.923,
                     "published, multi-spike, 10 ms, layer norm"});
  g.cells.push_back({"single_binary", NormKind::none, SpikeMode::single, R::binary, 10'000, 0, false, 0.587,
                     "published, single-spike, 10 ms"});
  g.cells.push_back({"multi_layer_l1e-3", NormKind::layer, SpikeMode::multi, R::histogram, 10'000, 1e-3, true, 0.763,
                     "published sim mAP at lambda 1e-3"});
  g.cells.push_back({"multi_layer_l1e-2", NormKind::layer, SpikeMode::multi, R::histogram, 10'000, 1e-2, true, 0.407,
                     "published sim mAP at lambda 1e-2"});
  return g;
}

struct CellResult {
  GridCell cell;
  TrainConfig config;
  int best_epoch = 0;
  std::vector<EpochMetrics> history;
  Metrics float_sim, quant_sim, emulator;
  GapReport gap;
  Model model;
};

struct TraceRow {
  int window = 0;
  double t_ms = 0;
  double iou = 0;
  double confidence = 0;
  double input_events = 0;
  double spikes = 0;
  double power_mw = 0;
};

/// Per-window IoU of the most confident box against the target, with input
/// and spike counts and the power implied by the spike rate.
inline std::vector<TraceRow> iou_trace(const Model& m, const PreparedSample& ps, EvalMode mode,
                                       const CoreBudget& budget = {}, const PowerModel& power = {}) {
  std::optional<QuantizedNetwork> q;
  if (mode != EvalMode::float_sim) q = quantize(m.spec, m.body);
  const auto run = run_sample(m, ps, mode, q ? &*q : nullptr, budget);
  const double window_s = double(ps.frames.window_us) * 1e-6;
  std::vector<TraceRow> rows;
  for (int t = 0; t < ps.frames.T; ++t) {
    const auto det = decode_boxes(decode_head(run.outputs[t], m.head, m.head_cfg), m.head_cfg.frame_w,
                                  m.head_cfg.frame_h);
    const auto best = std::max_element(det.begin(), det.end(), [](const Detection& a, const Detection& b) {
      return a.confidence < b.confidence;
    });
    TraceRow r;
    r.window = t;
    r.t_ms = double(t) * window_s * 1e3;
    r.confidence = best->confidence;
    r.iou = ps.targets[t].empty() ? 0.0 : iou(best->box, ps.targets[t].front());
    r.input_events = run.input_per_window[t];
    r.spikes = run.spikes_per_window[t];
    r.power_mw = estimate_power(r.spikes / window_s, power);
    rows.push_back(r);
  }
  return rows;
}

inline std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "window,t_ms,iou,confidence,input_events,spikes,power_mw\n";
  for (const auto& r : rows)
    os << r.window << ',' << r.t_ms << ',' << r.iou << ',' << r.confidence << ',' << r.input_events << ','
       << r.spikes << ',' << r.power_mw << '\n';
  return os.str();
}

struct ReportBundle {
  std::vector<CellResult> cells;
  std::vector<SweepRow> pareto;
  std::vector<TraceRow> trace;
  PowerEstimate power;
  std::uint64_t seed = 0;
};

using CellCallback = std::function<void(const CellResult&)>;

inline ReportBundle run_grid(const ExperimentGrid& grid, const std::vector<Sample>& train_set,
                             const std::vector<Sample>& val_set, std::uint64_t seed, const CoreBudget& budget = {},
                             const PowerModel& power = {}, const CellCallback& on_cell = {}) {
  ReportBundle b;
  b.seed = seed;
  if (grid.cells.empty()) return b;
  std::optional<std::size_t> trace_cell;
  for (const auto& cell : grid.cells) {
    CellResult r;
    r.cell = cell;
    r.config = cell.config(grid.base);
    r.config.seed = seed;
    const auto tr = train(grid.spec, train_set, val_set, r.config, budget);
    r.best_epoch = tr.best_epoch;
    r.history = tr.history;
    r.model = tr.best;
    const auto val = prepare_all(val_set, r.model.spec, r.config.window_us, r.config.representation());
    r.float_sim = evaluate(r.model, val, EvalMode::float_sim, budget, power, r.config.workers());
    r.quant_sim = evaluate(r.model, val, EvalMode::quant_sim, budget, power, r.config.workers());
    r.emulator = evaluate(r.model, val, EvalMode::emulator, budget, power, r.config.workers());
    r.gap = gap_report(r.model.spec, r.model.body, quantize(r.model.spec, r.model.body), val.front().stream,
                       r.config.window_us, budget);
    if (cell.sweep) {
      b.pareto.push_back({cell.lambda, r.float_sim.map, r.quant_sim.map, r.emulator.map,
                          r.emulator.power_mw.value_or(0), r.emulator.spikes_per_s, r.float_sim.spikes_per_s,
                          r.float_sim.synops_per_s, r.emulator.stall});
      if (!trace_cell || cell.lambda > b.cells[*trace_cell].cell.lambda) trace_cell = b.cells.size();
    }
    if (on_cell) on_cell(r);
    b.cells.push_back(std::move(r));
  }
  std::sort(b.pareto.begin(), b.pareto.end(), [](const SweepRow& a, const SweepRow& c) { return a.lambda < c.lambda; });
  // Trace the most regularized sweep model, the one that runs without stalls.
  const auto& tc = b.cells[trace_cell.value_or(0)];
  const auto ps = prepare(val_set.front(), tc.model.spec, tc.config.window_us, tc.config.representation());
  b.trace = iou_trace(tc.model, ps, EvalMode::emulator, budget, power);
  const auto q = quantize(tc.model.spec, tc.model.body);
  b.power = estimate_power(run_per_event(q, ps.stream, budget).report, power);
  return b;
}

inline std::string cells_csv(const ReportBundle& b) {
  std::ostringstream os;
  os.precision(10);
  os << "cell,mode,repr,norm,window_us,lambda,best_epoch,sim_map,sim_quant_map,chip_map,sim_spikes_per_s,"
        "sim_synops_per_s,chip_spikes_per_s,chip_power_mw,chip_stall,gap_blowup_vs_single,reference_map\n";
  for (const auto& c : b.cells) {
    os << c.cell.name << ',' << to_string(c.cell.mode) << ',' << to_string(c.cell.repr) << ','
       << to_string(c.cell.norm) << ',' << c.cell.window_us << ',' << c.cell.lambda << ',' << c.best_epoch << ','
       << c.float_sim.map << ',' << c.quant_sim.map << ',' << c.emulator.map << ',' << c.float_sim.spikes_per_s
       << ',' << c.float_sim.synops_per_s << ',' << c.emulator.spikes_per_s << ','
       << c.emulator.power_mw.value_or(0) << ',' << int(c.emulator.stall) << ',' << c.gap.blowup_vs_single() << ',';
    if (c.cell.reference_map) os << *c.cell.reference_map;
    os << '\n';
  }
  return os.str();
}

inline std::string report_markdown(const ReportBundle& b) {
  std::ostringstream os;
  os.precision(4);
  os << "# Experiment report\n\nSeed " << b.seed << ". Reference values are published full-scale results, shown "
     << "for orientation only; desk-scale runs are not expected to match them.\n\n";
  os << "## Grid\n\n| Cell | Activation | Input | Norm | Lambda | Sim mAP[0.5] | Quant mAP[0.5] | Chip mAP[0.5] "
        "| Sim spikes/s | Chip spikes/s | Chip power (mW) | Stall | Reference |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& c : b.cells) {
    os << "| " << c.cell.name << " | " << to_string(c.cell.mode) << " | " << to_string(c.cell.repr) << " | "
       << to_string(c.cell.norm) << " | " << c.cell.lambda << " | " << c.float_sim.map << " | " << c.quant_sim.map
       << " | " << c.emulator.map << " | " << c.float_sim.spikes_per_s << " | " << c.emulator.spikes_per_s << " | "
       << c.emulator.power_mw.value_or(0) << " | " << (c.emulator.stall ? "yes" : "no") << " | ";
    if (c.cell.reference_map) os << *c.cell.reference_map << " (" << c.cell.reference_note << ")";
    os << " |\n";
  }
  os << "\n## Regularization sweep\n\n| Lambda | Sim mAP | Quant mAP | Chip mAP | Chip power (mW) | Chip spikes/s "
        "| Sim spikes/s | Sim SynOps/s (M) |\n|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : b.pareto)
    os << "| " << r.lambda << " | " << r.map_float << " | " << r.map_quant << " | " << r.map_chip << " | "
       << r.chip_power_mw << " | " << r.chip_spikes_per_s << " | " << r.spikes_per_s << " | "
       << r.synops_per_s / 1e6 << " |\n";
  os << "\n## Simulation vs per-event spikes\n\n| Cell | Binned single | Binned multi | Per-event | Ratio vs single "
        "|\n|---|---|---|---|---|\n";
  for (const auto& c : b.cells)
    os << "| " << c.cell.name << " | " << c.gap.binned_single << " | " << c.gap.binned_multi << " | "
       << c.gap.per_event << " | " << c.gap.blowup_vs_single() << " |\n";
  os << "\nAverage emulated power on the traced sample: " << b.power.average_mw << " mW.\n";
  return os.str();
}

inline nlohmann::json to_json(const ReportBundle& b) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : b.cells) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& e : c.history) hist.push_back(to_json(e));
    cells.push_back({{"name", c.cell.name},
                     {"config", to_json(c.config)},
                     {"best_epoch", c.best_epoch},
                     {"float_sim", to_json(c.float_sim)},
                     {"quant_sim", to_json(c.quant_sim)},
                     {"emulator", to_json(c.emulator)},
                     {"gap", to_json(c.gap)},
                     {"history", hist},
                     {"reference_map", c.cell.reference_map ? nlohmann::json(*c.cell.reference_map) : nullptr}});
  }
  return {{"seed", b.seed}, {"cells", cells}, {"power", to_json(b.power)}};
}

}  // namespace spikeforge

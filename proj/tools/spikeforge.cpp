#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spikeforge/spikeforge.hpp"

using namespace spikeforge;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes. Stable; documented in the README.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitMalformed = 2;
constexpr int kExitConstraint = 3;
constexpr int kExitMissing = 4;
constexpr int kExitUsage = 64;

/// Library error tagged with the file it came from.
struct FileError {
  Error error;
  fs::path file;
};

template <typename Fn>
auto with_file(const fs::path& file, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw FileError{e, file};
  }
}

int exit_code_for(Errc c) {
  switch (c) {
    case Errc::TruncatedRecord:
    case Errc::OutOfBounds:
    case Errc::NonMonotonicTimestamp:
    case Errc::TimestampOverflow:
    case Errc::FormatError:
    case Errc::ChecksumMismatch:
    case Errc::InvalidTarget:
    case Errc::DegenerateBox:
    case Errc::NoGroundTruth:
      return kExitMalformed;
    case Errc::ConstraintViolation:
      return kExitConstraint;
    case Errc::MissingArtifact:
      return kExitMissing;
    default:
      return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// Effective configuration

struct Options {
  std::string config_file;
  std::string data;
  std::string out = "runs";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> window_us;
  std::string mode;
  std::string repr;
  std::string budget = "default";
  std::optional<int> threads;
};

json power_to_json(const PowerModel& p) {
  return {{"idle_mw", p.idle_mw}, {"slope_mw_per_spike_s", p.slope_mw_per_spike_s}};
}

PowerModel power_from_json(const json& j) {
  PowerModel p;
  for (const auto& [k, v] : j.items()) {
    if (k == "idle_mw") p.idle_mw = v.get<double>();
    else if (k == "slope_mw_per_spike_s") p.slope_mw_per_spike_s = v.get<double>();
    else throw Error(Errc::InvalidArgument, "unknown power key '" + k + "'");
  }
  return p;
}

struct Effective {
  NetworkSpec spec;
  TrainConfig train;
  CoreBudget budget;
  PowerModel power;
  json doc;

  std::string hash() const { return config_hash(doc); }
};

json read_json_file(const fs::path& p) {
  const std::string text = with_file(p, [&] { return read_text_file(p); });
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FileError{Error(Errc::FormatError, e.what(), e.byte > 0 ? e.byte - 1 : 0), p};
  }
}

/// Defaults, then the config file, then dedicated flags, then --set.
Effective resolve_config(const Options& o, int side_hint = 32) {
  json doc{{"network", to_json(desk_spec(side_hint))},
           {"train", to_json(desk_train_config())},
           {"budget", to_json(CoreBudget{})},
           {"power", power_to_json(PowerModel{})}};
  // The representation follows the mode unless set explicitly.
  doc["train"].erase("repr");
  if (!o.config_file.empty()) {
    const json file = read_json_file(o.config_file);
    for (const auto& [k, v] : file.items()) {
      if (!doc.contains(k)) throw Error(Errc::InvalidArgument, "unknown config section '" + k + "'");
      if (k == "network")
        doc[k] = v;
      else
        doc[k].update(v);
    }
  }
  if (o.budget != "default") doc["budget"].update(read_json_file(o.budget));
  if (o.seed) doc["train"]["seed"] = *o.seed;
  if (o.window_us) doc["train"]["window_us"] = *o.window_us;
  if (!o.mode.empty()) doc["train"]["mode"] = o.mode;
  if (!o.repr.empty()) doc["train"]["repr"] = o.repr;
  if (o.threads) doc["train"]["threads"] = *o.threads;
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('='), dot = kv.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw Error(Errc::InvalidArgument, "override '" + kv + "' is not section.key=value");
    const std::string section = kv.substr(0, dot), key = kv.substr(dot + 1, eq - dot - 1), raw = kv.substr(eq + 1);
    if (!doc.contains(section)) throw Error(Errc::InvalidArgument, "unknown config section '" + section + "'");
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    doc[section][key] = value;
  }
  Effective e;
  e.spec = network_from_json(doc["network"]);
  e.train = train_config_from_json(doc["train"]);
  e.train.validate();
  e.budget = budget_from_json(doc["budget"]);
  e.power = power_from_json(doc["power"]);
  e.spec.mode = e.train.mode;
  doc["network"] = to_json(e.spec);
  doc["train"] = to_json(e.train);
  doc["budget"] = to_json(e.budget);
  e.doc = doc;
  return e;
}

// ---------------------------------------------------------------------------
// Run directories

std::string utc_stamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return os.str();
}

struct RunDir {
  fs::path path;
  json record;

  RunDir(const fs::path& root, const std::string& command, const Effective& cfg, const std::vector<std::string>& argv) {
    const std::string base = command + "-" + utc_stamp() + "-" + cfg.hash();
    path = root / base;
    for (int k = 2; fs::exists(path); ++k) path = root / (base + "-" + std::to_string(k));
    fs::create_directories(path);
    write_text_file(path / "config.json", cfg.doc.dump(2) + "\n");
    record = {{"command", command}, {"argv", argv}, {"config_hash", cfg.hash()},
              {"seed", cfg.train.seed},  {"inputs", json::object()}, {"outputs", json::array()}};
    std::cout << "run directory: " << path.string() << "\n";
  }

  fs::path output(const std::string& name) {
    record["outputs"].push_back(name);
    return path / name;
  }
  void write(const std::string& name, const std::string& text) { write_text_file(output(name), text); }
  void finish() { write_text_file(path / "run.json", record.dump(2) + "\n"); }
};

// ---------------------------------------------------------------------------
// Datasets

struct LoadedData {
  DatasetManifest manifest;
  fs::path manifest_path;
  std::vector<Sample> train, val;
};

LoadedData load_dataset(const std::string& where) {
  if (where.empty()) throw Error(Errc::MissingArtifact, "--data is required");
  fs::path p = where;
  if (fs::is_directory(p)) p /= "manifest.json";
  if (!fs::exists(p)) throw FileError{Error(Errc::MissingArtifact, "dataset manifest not found"), p};
  LoadedData d;
  d.manifest_path = p;
  const json j = read_json_file(p);
  d.manifest = with_file(p, [&] { return manifest_from_json(j); });
  const fs::path base = p.parent_path();
  for (const auto& e : d.manifest.samples) {
    Sample s = with_file(base / e.events, [&] { return load_sample(e, base, d.manifest.resolution); });
    (e.split == SplitTag::train ? d.train : d.val).push_back(std::move(s));
  }
  if (d.train.empty() || d.val.empty()) throw FileError{Error(Errc::EmptySplit, "manifest lacks a train or val split"), p};
  return d;
}

Checkpoint load_checkpoint_file(const std::string& path) {
  if (path.empty()) throw Error(Errc::MissingArtifact, "--checkpoint is required");
  return with_file(path, [&] { return load_checkpoint(path); });
}

void require_constraints(const NetworkSpec& spec, const CoreBudget& budget) {
  const auto cr = check_constraints(spec, budget);
  if (!cr.ok) throw Error(Errc::ConstraintViolation, cr.violations.front());
}

// ---------------------------------------------------------------------------
// Subcommands

struct IngestOptions {
  bool synthetic = false;
  int n = 64;
  int side = 32;
  std::uint64_t sample_seed = 1000;
  std::uint64_t split_seed = 7;
  double train_frac = 0.8;
  int width = 128, height = 128;
  std::string data;
  std::string out;
};

int cmd_ingest(const IngestOptions& o) {
  if (o.out.empty()) throw Error(Errc::InvalidArgument, "--out is required");
  if (o.synthetic == !o.data.empty()) throw Error(Errc::InvalidArgument, "give exactly one of --synthetic or --data");
  const fs::path out = o.out;
  fs::create_directories(out);
  DatasetManifest m;
  m.seed = o.split_seed;
  std::vector<Sample> samples;
  std::vector<std::string> names;
  if (o.synthetic) {
    if (o.n <= 0) throw Error(Errc::InvalidArgument, "--n must be positive");
    samples = desk_dataset(o.n, o.side, o.sample_seed);
    m.resolution = {o.side, o.side};
    m.source = "synthetic";
    for (int i = 0; i < o.n; ++i) {
      std::ostringstream name;
      name << "synth_" << std::setw(4) << std::setfill('0') << i;
      names.push_back(name.str());
    }
  } else {
    const fs::path root = o.data;
    if (!fs::is_directory(root)) throw FileError{Error(Errc::MissingArtifact, "not a directory"), root};
    m.resolution = {o.width, o.height};
    m.source = fs::absolute(root).lexically_normal().string();
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root))
      if (entry.is_regular_file() && entry.path().extension() == ".aer") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw FileError{Error(Errc::MissingArtifact, "no .aer recordings found"), root};
    // Sub-directories name the classes.
    std::vector<std::string> classes;
    for (const auto& f : files) {
      const auto cls = fs::relative(f.parent_path(), root).string();
      if (std::find(classes.begin(), classes.end(), cls) == classes.end()) classes.push_back(cls);
    }
    std::sort(classes.begin(), classes.end());
    for (const auto& f : files) {
      Sample s;
      s.stream = with_file(f, [&] { return read_aer_file(f, m.resolution); });
      fs::path sidecar = f;
      sidecar.replace_extension(".jsonl");
      if (!fs::exists(sidecar)) throw FileError{Error(Errc::MissingArtifact, "annotation sidecar missing"), sidecar};
      with_file(sidecar, [&] {
        annotations_from_jsonl(read_text_file(sidecar), s.boxes, s.track);
        if (s.boxes.empty() && s.track.empty()) throw Error(Errc::NoGroundTruth, "no boxes");
      });
      if (s.boxes.empty()) s.boxes = {s.track.front().box};
      const auto cls = fs::relative(f.parent_path(), root).string();
      s.label = int(std::find(classes.begin(), classes.end(), cls) - classes.begin());
      samples.push_back(std::move(s));
      auto rel = fs::relative(f, root);
      rel.replace_extension();
      std::string name = rel.generic_string();
      std::replace(name.begin(), name.end(), '/', '_');
      names.push_back(name);
    }
  }
  stratified_split(samples, o.train_frac, o.split_seed);
  for (std::size_t i = 0; i < samples.size(); ++i) m.samples.push_back(store_sample(samples[i], names[i], out));
  write_text_file(out / "manifest.json", to_json(m).dump(2) + "\n");
  std::size_t n_train = 0;
  for (const auto& e : m.samples) n_train += e.split == SplitTag::train;
  std::cout << "wrote " << (out / "manifest.json").string() << ": " << m.samples.size() << " samples (" << n_train
            << " train, " << m.samples.size() - n_train << " val)\n";
  return kExitOk;
}

int cmd_train(const Options& o, const std::vector<std::string>& argv) {
  const auto data = load_dataset(o.data);
  const auto cfg = resolve_config(o, data.manifest.resolution.width);
  require_constraints(cfg.spec, cfg.budget);
  RunDir run(o.out, "train", cfg, argv);
  run.record["inputs"]["data"] = fs::absolute(data.manifest_path).string();
  write_text_file(run.output("constraints.json"), to_json(check_constraints(cfg.spec, cfg.budget), cfg.budget).dump(2));
  const auto result = train(cfg.spec, data.train, data.val, cfg.train, cfg.budget, [](const EpochMetrics& e) {
    std::cout << "epoch " << e.epoch << "  loss " << e.loss_total << "  val mAP " << e.val_map << "  spikes/s "
              << e.spikes_per_s << "\n";
  });
  save_checkpoint(run.output("checkpoint.sfta"), make_checkpoint(result, cfg.train));
  Checkpoint last{result.last, to_json(cfg.train), int(result.history.size()), result.config_hash, result.history,
                  result.adam};
  save_checkpoint(run.output("last.sfta"), last);
  run.write("history.csv", history_csv(result.history));
  const auto val = prepare_all(data.val, result.best.spec, cfg.train.window_us, cfg.train.representation());
  const auto m = evaluate(result.best, val, EvalMode::float_sim, cfg.budget, cfg.power, cfg.train.workers());
  json metrics = to_json(m);
  metrics["best_epoch"] = result.best_epoch;
  run.write("metrics.json", metrics.dump(2) + "\n");
  run.finish();
  std::cout << "best epoch " << result.best_epoch << ", val mAP[0.5] " << result.best_val_map << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, const std::string& checkpoint, const std::string& target,
             const std::vector<std::string>& argv) {
  const auto ckpt = load_checkpoint_file(checkpoint);
  const auto data = load_dataset(o.data);
  Options merged = o;
  auto cfg = resolve_config(merged, data.manifest.resolution.width);
  cfg.train = train_config_from_json(ckpt.config);
  if (o.window_us) cfg.train.window_us = *o.window_us;
  if (o.threads) cfg.train.threads = *o.threads;
  cfg.doc["train"] = to_json(cfg.train);
  cfg.doc["network"] = to_json(ckpt.model.spec);
  require_constraints(ckpt.model.spec, cfg.budget);
  RunDir run(o.out, "eval", cfg, argv);
  run.record["inputs"] = {{"checkpoint", fs::absolute(checkpoint).string()},
                          {"data", fs::absolute(data.manifest_path).string()}};
  const auto val = prepare_all(data.val, ckpt.model.spec, cfg.train.window_us, cfg.train.representation());
  std::vector<EvalMode> modes;
  if (target == "all")
    modes = {EvalMode::float_sim, EvalMode::quant_sim, EvalMode::emulator};
  else
    modes = {eval_mode_from_string(target)};
  json all = json::object();
  std::optional<QuantizedNetwork> q;
  for (EvalMode mode : modes) {
    const auto m = evaluate(ckpt.model, val, mode, cfg.budget, cfg.power, cfg.train.workers());
    all[to_string(mode)] = to_json(m);
    std::cout << to_string(mode) << ": mAP[0.5] " << m.map << ", spikes/s " << m.spikes_per_s;
    if (m.power_mw) std::cout << ", power " << *m.power_mw << " mW, stall " << (m.stall ? "yes" : "no");
    std::cout << "\n";

    // Detections and PR curve for this mode.
    if (mode != EvalMode::float_sim && !q) q = quantize(ckpt.model.spec, ckpt.model.body);
    std::vector<DetectionSet> preds;
    std::vector<std::vector<BoundingBox>> gts;
    for (const auto& ps : val) {
      const auto r = run_sample(ckpt.model, ps, mode, q ? &*q : nullptr, cfg.budget);
      for (int t = 0; t < ps.frames.T; ++t) {
        preds.push_back(decode_boxes(decode_head(r.outputs[t], ckpt.model.head, ckpt.model.head_cfg),
                                     ckpt.model.head_cfg.frame_w, ckpt.model.head_cfg.frame_h));
        gts.push_back(ps.targets[t]);
      }
    }
    run.write(std::string("detections_") + to_string(mode) + ".jsonl", detections_to_jsonl(preds, gts));
    run.write(std::string("pr_curve_") + to_string(mode) + ".csv", pr_curve_csv(mean_ap(preds, gts)));
  }
  run.write("metrics.json", all.dump(2) + "\n");
  run.finish();
  return kExitOk;
}

int cmd_quantize(const Options& o, const std::string& checkpoint, const std::vector<std::string>& argv) {
  const auto ckpt = load_checkpoint_file(checkpoint);
  auto cfg = resolve_config(o);
  cfg.doc["network"] = to_json(ckpt.model.spec);
  cfg.doc["train"] = ckpt.config;
  require_constraints(ckpt.model.spec, cfg.budget);
  RunDir run(o.out, "quantize", cfg, argv);
  run.record["inputs"]["checkpoint"] = fs::absolute(checkpoint).string();
  const auto q = quantize(ckpt.model.spec, ckpt.model.body);
  quantized_to_archive(q).save(run.output("quantized.sfta"));
  const auto summary = quantization_summary(ckpt.model.body, q);
  run.write("quantization.json", to_json(summary).dump(2) + "\n");
  for (std::size_t l = 0; l < summary.size(); ++l)
    std::cout << "layer " << l << ": scale " << q.layers[l].scale << ", theta_q " << q.layers[l].theta_q
              << ", max weight error " << summary[l].max_weight_error << "\n";
  run.finish();
  return kExitOk;
}

int cmd_emulate(const Options& o, const std::string& checkpoint, const std::string& quantized,
                const std::string& split, const std::vector<std::string>& argv) {
  if (checkpoint.empty() == quantized.empty())
    throw Error(Errc::InvalidArgument, "give exactly one of --checkpoint or --quantized");
  std::optional<Checkpoint> ckpt;
  QuantizedNetwork q;
  if (!checkpoint.empty()) {
    ckpt = load_checkpoint_file(checkpoint);
    q = quantize(ckpt->model.spec, ckpt->model.body);
  } else {
    q = with_file(quantized, [&] { return quantized_from_archive(TensorArchive::load(quantized)); });
  }
  const auto data = load_dataset(o.data);
  auto cfg = resolve_config(o, data.manifest.resolution.width);
  if (ckpt) cfg.train = train_config_from_json(ckpt->config);
  if (o.window_us) cfg.train.window_us = *o.window_us;
  cfg.doc["train"] = to_json(cfg.train);
  cfg.doc["network"] = to_json(q.spec);
  require_constraints(q.spec, cfg.budget);
  RunDir run(o.out, "emulate", cfg, argv);
  run.record["inputs"] = {{"network", fs::absolute(checkpoint.empty() ? quantized : checkpoint).string()},
                          {"data", fs::absolute(data.manifest_path).string()}};

  std::vector<const Sample*> chosen;
  if (split == "train" || split == "all")
    for (const auto& s : data.train) chosen.push_back(&s);
  if (split == "val" || split == "all")
    for (const auto& s : data.val) chosen.push_back(&s);
  if (chosen.empty()) throw Error(Errc::InvalidArgument, "--split must be train, val or all");

  json samples = json::array();
  double spikes = 0, seconds = 0, synops = 0;
  bool stall = false;
  std::int64_t dropped = 0;
  double max_delay = 0;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const auto ps = prepare(*chosen[i], q.spec, cfg.train.window_us, cfg.train.representation());
    const auto r = run_per_event(q, ps.stream, cfg.budget);
    samples.push_back(to_json(r.report));
    spikes += r.report.tally.total_spikes();
    synops += r.report.tally.total_synops();
    seconds += r.report.tally.duration_s;
    stall = stall || r.report.stall;
    dropped += r.report.dropped_events;
    max_delay = std::max(max_delay, r.report.max_delay_us);
    if (i == 0) {
      const auto p = estimate_power(r.report, cfg.power);
      run.write("power_timeline.csv", power_timeline_csv(p));
      if (ckpt) {
        const auto g = gap_report(ckpt->model.spec, ckpt->model.body, q, ps.stream, cfg.train.window_us, cfg.budget);
        run.write("gap.json", to_json(g).dump(2) + "\n");
      }
    }
  }
  const double sps = seconds > 0 ? spikes / seconds : 0.0;
  json summary{{"samples", chosen.size()},
               {"spikes_per_s", sps},
               {"synops_per_s", seconds > 0 ? synops / seconds : 0.0},
               {"power_mw", estimate_power(sps, cfg.power)},
               {"stall", stall},
               {"dropped_events", dropped},
               {"max_delay_us", max_delay}};
  run.write("emulator.json", json{{"summary", summary}, {"per_sample", samples}}.dump(2) + "\n");
  run.finish();
  std::cout << "emulated " << chosen.size() << " recordings: " << sps << " spikes/s, "
            << estimate_power(sps, cfg.power) << " mW, max delay " << max_delay << " us, dropped " << dropped
            << ", stall " << (stall ? "yes" : "no") << "\n";
  return kExitOk;
}

std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(Errc::InvalidArgument, "bad lambda value '" + item + "'");
    }
  }
  return out;
}

int cmd_sweep(const Options& o, const std::string& lambdas, const std::vector<std::string>& argv) {
  const auto data = load_dataset(o.data);
  const auto cfg = resolve_config(o, data.manifest.resolution.width);
  require_constraints(cfg.spec, cfg.budget);
  const auto values = parse_lambdas(lambdas);
  RunDir run(o.out, "sweep", cfg, argv);
  run.record["inputs"] = {{"data", fs::absolute(data.manifest_path).string()}, {"lambdas", values}};
  const auto rows = sweep_lambda(cfg.spec, data.train, data.val, cfg.train, values, cfg.budget, cfg.power,
                                 [](const SweepRow& r) {
                                   std::cout << "lambda " << r.lambda << ": sim mAP " << r.map_float
                                             << ", chip mAP " << r.map_chip << ", chip power " << r.chip_power_mw
                                             << " mW, sim spikes/s " << r.spikes_per_s << "\n";
                                 });
  run.write("sweep.csv", sweep_csv(rows));
  run.finish();
  return kExitOk;
}

int cmd_report(const Options& o, const std::vector<std::string>& cells, const std::vector<std::string>& argv) {
  const auto data = load_dataset(o.data);
  const auto cfg = resolve_config(o, data.manifest.resolution.width);
  require_constraints(cfg.spec, cfg.budget);
  ExperimentGrid grid = default_grid(cfg.spec, cfg.train);
  if (!cells.empty()) {
    std::vector<GridCell> keep;
    for (const auto& name : cells) {
      auto it = std::find_if(grid.cells.begin(), grid.cells.end(), [&](const GridCell& c) { return c.name == name; });
      if (it == grid.cells.end()) throw Error(Errc::InvalidArgument, "unknown grid cell '" + name + "'");
      keep.push_back(*it);
    }
    grid.cells = keep;
  }
  RunDir run(o.out, "report", cfg, argv);
  run.record["inputs"]["data"] = fs::absolute(data.manifest_path).string();
  const auto bundle = run_grid(grid, data.train, data.val, cfg.train.seed, cfg.budget, cfg.power,
                               [](const CellResult& c) {
                                 std::cout << c.cell.name << ": sim mAP " << c.float_sim.map << ", chip mAP "
                                           << c.emulator.map << ", chip power " << c.emulator.power_mw.value_or(0)
                                           << " mW\n";
                               });
  run.write("report.md", report_markdown(bundle));
  run.write("cells.csv", cells_csv(bundle));
  run.write("pareto.csv", sweep_csv(bundle.pareto));
  run.write("trace.csv", trace_csv(bundle.trace));
  run.write("power_timeline.csv", power_timeline_csv(bundle.power));
  run.write("bundle.json", to_json(bundle).dump(2) + "\n");
  run.write("power_calibration.json", calibration_report(cfg.power).dump(2) + "\n");
  run.finish();
  return kExitOk;
}

void add_common(CLI::App* sub, Options& o, bool needs_data) {
  sub->add_option("--config", o.config_file, "JSON config with network/train/budget/power sections");
  if (needs_data) sub->add_option("--data", o.data, "dataset manifest or the directory holding it");
  sub->add_option("--out", o.out, "root directory for run directories")->capture_default_str();
  sub->add_option("--set", o.overrides, "override, section.key=value (repeatable)");
  sub->add_option("--seed", o.seed, "training seed");
  sub->add_option("--window-us", o.window_us, "bin width in microseconds");
  sub->add_option("--mode", o.mode, "activation")->check(CLI::IsMember({"single", "multi"}));
  sub->add_option("--repr", o.repr, "input frames")->check(CLI::IsMember({"binary", "histogram"}));
  sub->add_option("--budget", o.budget, "'default' or a JSON file of core limits")->capture_default_str();
  sub->add_option("--threads", o.threads, "worker threads (default: SPIKEFORGE_THREADS or all cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train, quantize and emulate spiking object detectors on event-camera data"};
  app.require_subcommand(1);
  const std::vector<std::string> args(argv, argv + argc);

  IngestOptions ingest_o;
  auto* ingest = app.add_subcommand("ingest", "build a dataset manifest from recordings or synthetic data");
  ingest->add_flag("--synthetic", ingest_o.synthetic, "generate moving-box recordings");
  ingest->add_option("--n", ingest_o.n, "number of synthetic recordings")->capture_default_str();
  ingest->add_option("--resolution", ingest_o.side, "side length of synthetic recordings")->capture_default_str();
  ingest->add_option("--sample-seed", ingest_o.sample_seed, "seed of the first synthetic recording")
      ->capture_default_str();
  ingest->add_option("--seed", ingest_o.split_seed, "split seed")->capture_default_str();
  ingest->add_option("--train-frac", ingest_o.train_frac, "training share per class")->capture_default_str();
  ingest->add_option("--data", ingest_o.data, "directory of .aer recordings with .jsonl sidecars");
  ingest->add_option("--width", ingest_o.width, "sensor width of ingested recordings")->capture_default_str();
  ingest->add_option("--height", ingest_o.height, "sensor height of ingested recordings")->capture_default_str();
  ingest->add_option("--out", ingest_o.out, "dataset directory")->required();

  Options train_o, eval_o, quant_o, emu_o, sweep_o, report_o;
  auto* train_cmd = app.add_subcommand("train", "train a detector");
  add_common(train_cmd, train_o, true);

  std::string eval_ckpt, eval_target = "float_sim";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  add_common(eval_cmd, eval_o, true);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--target", eval_target, "float_sim, quant_sim, emulator or all")
      ->check(CLI::IsMember({"float_sim", "quant_sim", "emulator", "all"}))
      ->capture_default_str();

  std::string quant_ckpt;
  auto* quant_cmd = app.add_subcommand("quantize", "convert a checkpoint to int8 weights");
  add_common(quant_cmd, quant_o, false);
  quant_cmd->add_option("--checkpoint", quant_ckpt, "checkpoint file")->required();

  std::string emu_ckpt, emu_quant, emu_split = "val";
  auto* emu_cmd = app.add_subcommand("emulate", "run recordings through the event-driven chip model");
  add_common(emu_cmd, emu_o, true);
  emu_cmd->add_option("--checkpoint", emu_ckpt, "checkpoint file, quantized on the fly");
  emu_cmd->add_option("--quantized", emu_quant, "quantized network file");
  emu_cmd->add_option("--split", emu_split, "train, val or all")->capture_default_str();

  std::string lambdas = "0,1e-3,1e-2";
  auto* sweep_cmd = app.add_subcommand("sweep", "train once per firing-rate penalty and compare");
  add_common(sweep_cmd, sweep_o, true);
  sweep_cmd->add_option("--lambdas", lambdas, "comma-separated penalty weights")->capture_default_str();

  std::vector<std::string> cells;
  auto* report_cmd = app.add_subcommand("report", "run the experiment grid and write the report bundle");
  add_common(report_cmd, report_o, true);
  report_cmd->add_option("--cells", cells, "subset of grid cells to run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*ingest) return cmd_ingest(ingest_o);
    if (*train_cmd) return cmd_train(train_o, args);
    if (*eval_cmd) return cmd_eval(eval_o, eval_ckpt, eval_target, args);
    if (*quant_cmd) return cmd_quantize(quant_o, quant_ckpt, args);
    if (*emu_cmd) return cmd_emulate(emu_o, emu_ckpt, emu_quant, emu_split, args);
    if (*sweep_cmd) return cmd_sweep(sweep_o, lambdas, args);
    if (*report_cmd) return cmd_report(report_o, cells, args);
  } catch (const FileError& fe) {
    std::cerr << "error: " << fe.file.string() << ": " << fe.error.what();
    if (fe.error.offset()) std::cerr << " (byte offset " << *fe.error.offset() << ")";
    std::cerr << "\n";
    return exit_code_for(fe.error.code());
  } catch (const Error& e) {
    std::cerr << "error: " << e.what();
    if (e.offset()) std::cerr << " (byte offset " << *e.offset() << ")";
    std::cerr << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikeforge/dataset.hpp"
#include "spikeforge/error.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

struct GridConfig {
  int S = 4;  // cells per side
  int B = 2;  // boxes per cell
  int outputs() const { return S * S * B * 5; }
};

enum class NormKind { none, layer, batch };

inline const char* to_string(NormKind n) {
  switch (n) {
    case NormKind::none: return "none";
    case NormKind::layer: return "layer";
    case NormKind::batch: return "batch";
  }
  return "?";
}

inline NormKind norm_from_string(const std::string& s) {
  if (s == "none") return NormKind::none;
  if (s == "layer") return NormKind::layer;
  if (s == "batch") return NormKind::batch;
  throw Error(Errc::InvalidArgument, "unknown normalization '" + s + "'");
}

/// Off-chip decoder: optional normalization followed by a linear layer with
/// bias, applied independently to every timestep's output spike counts.
struct HeadConfig {
  GridConfig grid;
  NormKind norm = NormKind::layer;
  double eps = kLayerNormEps;
  double bn_momentum = 0.1;
  int frame_w = 128;
  int frame_h = 128;
};

struct HeadParams {
  Tensor norm_gamma, norm_beta;  // [N]
  Tensor bn_mean, bn_var;        // running statistics, batch norm only
  Tensor weight;                 // [S*S*B*5, N]
  Tensor bias;                   // [S*S*B*5]
};

inline HeadParams init_head(const HeadConfig& cfg, int n_in, std::uint64_t seed) {
  HeadParams h;
  h.norm_gamma = Tensor({n_in}, 1.0);
  h.norm_beta = Tensor({n_in}, 0.0);
  h.bn_mean = Tensor({n_in}, 0.0);
  h.bn_var = Tensor({n_in}, 1.0);
  const int M = cfg.grid.outputs();
  h.weight = Tensor({M, n_in});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(double(n_in)));
  for (auto& v : h.weight.vec()) v = nd(rng);
  h.bias = Tensor({M}, 0.0);
  return h;
}

/// Squashed grid outputs: per cell and box (cx, cy, w, h, conf), all in
/// (0, 1). (cx, cy) are cell-relative, (w, h) frame-relative.
struct GridPrediction {
  GridConfig grid;
  Tensor values;

  std::size_t index(int row, int col, int b, int k) const {
    return ((std::size_t(row) * grid.S + col) * grid.B + b) * 5 + k;
  }
  double at(int row, int col, int b, int k) const { return values[index(row, col, b, k)]; }
};

/// Normalization stage of the head on one timestep (inference statistics).
inline Tensor head_normalize(const Tensor& spikes, const HeadParams& hp, const HeadConfig& cfg) {
  switch (cfg.norm) {
    case NormKind::none: return spikes;
    case NormKind::layer: return layer_norm(spikes, hp.norm_gamma, hp.norm_beta, cfg.eps);
    case NormKind::batch: {
      BatchNormStats<double> st{hp.bn_mean.vec(), hp.bn_var.vec()};
      return batch_norm(spikes.reshaped({1, int(spikes.size())}), hp.norm_gamma, hp.norm_beta, st, cfg.eps)
          .reshaped({int(spikes.size())});
    }
  }
  return spikes;
}

inline GridPrediction decode_head(const Tensor& spikes, const HeadParams& hp, const HeadConfig& cfg) {
  if (hp.weight.dim(1) != int(spikes.size()) || hp.weight.dim(0) != cfg.grid.outputs())
    throw Error(Errc::ShapeMismatch, "head weight " + shape_str(hp.weight.shape()) + " for " +
                                         std::to_string(spikes.size()) + " spikes");
  const Tensor flat = spikes.reshaped({int(spikes.size())});
  Tensor y = linear(head_normalize(flat, hp, cfg), hp.weight, &hp.bias);
  for (auto& v : y.vec()) v = sigmoid(v);
  return {cfg.grid, std::move(y)};
}

// ---------------------------------------------------------------------------

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct Detection {
  BoundingBox box;
  double confidence = 0;
};

using DetectionSet = std::vector<Detection>;

inline BoundingBox grid_box(const GridPrediction& p, int row, int col, int b, int frame_w, int frame_h) {
  const double cw = double(frame_w) / p.grid.S, ch = double(frame_h) / p.grid.S;
  const double cx = (col + p.at(row, col, b, 0)) * cw;
  const double cy = (row + p.at(row, col, b, 1)) * ch;
  const double w = p.at(row, col, b, 2) * frame_w;
  const double h = p.at(row, col, b, 3) * frame_h;
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, p.at(row, col, b, 4), 0};
}

/// One detection per cell: the box with the highest confidence.
inline DetectionSet decode_boxes(const GridPrediction& p, int frame_w, int frame_h) {
  DetectionSet out;
  for (int r = 0; r < p.grid.S; ++r)
    for (int c = 0; c < p.grid.S; ++c) {
      int best = 0;
      for (int b = 1; b < p.grid.B; ++b)
        if (p.at(r, c, b, 4) > p.at(r, c, best, 4)) best = b;
      BoundingBox box = clamp_box(grid_box(p, r, c, best, frame_w, frame_h), {frame_w, frame_h});
      out.push_back({box, p.at(r, c, best, 4)});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Detection loss (single class)

struct LossWeights {
  double coord = 5.0;
  double noobj = 0.5;
};

struct LossResult {
  double coord = 0, obj = 0, noobj = 0;
  double total() const { return coord + obj + noobj; }
  Tensor grad;  // d total / d pred.values
};

inline LossResult yolo_loss(const GridPrediction& pred, const std::vector<BoundingBox>& gts, const LossWeights& w,
                            int frame_w, int frame_h) {
  if (gts.empty()) throw Error(Errc::NoGroundTruth, "yolo_loss needs at least one ground-truth box");
  const int S = pred.grid.S, B = pred.grid.B;
  const double cw = double(frame_w) / S, ch = double(frame_h) / S;
  std::vector<int> responsible(std::size_t(S) * S * B, -1);  // gt index per predictor

  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    const auto& g = gts[gi];
    const int col = std::clamp(int(std::floor(g.center_x() / cw)), 0, S - 1);
    const int row = std::clamp(int(std::floor(g.center_y() / ch)), 0, S - 1);
    int best = -1;
    double best_iou = -1;
    for (int b = 0; b < B; ++b) {
      if (responsible[(std::size_t(row) * S + col) * B + b] >= 0) continue;
      const double v = iou(grid_box(pred, row, col, b, frame_w, frame_h), g);
      if (v > best_iou) best_iou = v, best = b;
    }
    if (best >= 0) responsible[(std::size_t(row) * S + col) * B + best] = int(gi);
  }

  LossResult L;
  L.grad = Tensor::zeros_like(pred.values);
  for (int r = 0; r < S; ++r)
    for (int c = 0; c < S; ++c)
      for (int b = 0; b < B; ++b) {
        const int gi = responsible[(std::size_t(r) * S + c) * B + b];
        const double conf = pred.at(r, c, b, 4);
        if (gi < 0) {
          L.noobj += w.noobj * conf * conf;
          L.grad[pred.index(r, c, b, 4)] = 2 * w.noobj * conf;
          continue;
        }
        const auto& g = gts[gi];
        const double t[4] = {g.center_x() / cw - c, g.center_y() / ch - r, std::sqrt(g.width() / frame_w),
                             std::sqrt(g.height() / frame_h)};
        const double px = pred.at(r, c, b, 0), py = pred.at(r, c, b, 1);
        const double sw = std::sqrt(pred.at(r, c, b, 2)), sh = std::sqrt(pred.at(r, c, b, 3));
        const double d[4] = {px - t[0], py - t[1], sw - t[2], sh - t[3]};
        L.coord += w.coord * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3]);
        L.grad[pred.index(r, c, b, 0)] = 2 * w.coord * d[0];
        L.grad[pred.index(r, c, b, 1)] = 2 * w.coord * d[1];
        L.grad[pred.index(r, c, b, 2)] = 2 * w.coord * d[2] * 0.5 / sw;
        L.grad[pred.index(r, c, b, 3)] = 2 * w.coord * d[3] * 0.5 / sh;
        L.obj += (conf - g.objectness) * (conf - g.objectness);
        L.grad[pred.index(r, c, b, 4)] = 2 * (conf - g.objectness);
      }
  return L;
}

// ---------------------------------------------------------------------------
// Firing-rate regularization

struct RegularizationConfig {
  double lambda = 0.0;
};

/// Spike totals per layer and timestep for one sample window.
struct FiringRateStats {
  std::vector<std::vector<double>> per_layer;  // [l][t]
  std::int64_t window_us = 10'000;

  double total() const {
    double s = 0;
    for (const auto& l : per_layer)
      for (double v : l) s += v;
    return s;
  }
  int timesteps() const { return per_layer.empty() ? 0 : int(per_layer.front().size()); }
  double seconds() const { return double(timesteps()) * double(window_us) * 1e-6; }
  double spikes_per_second() const { return seconds() > 0 ? total() / seconds() : 0.0; }
  double layer_spikes_per_second(std::size_t l) const {
    double s = 0;
    for (double v : per_layer.at(l)) s += v;
    return seconds() > 0 ? s / seconds() : 0.0;
  }
};

inline double firing_rate_penalty(const FiringRateStats& stats, const RegularizationConfig& cfg) {
  if (cfg.lambda < 0) throw Error(Errc::InvalidArgument, "lambda must be non-negative");
  double acc = 0;
  for (int t = 0; t < stats.timesteps(); ++t) {
    double layer_sum = 0;
    for (const auto& l : stats.per_layer) layer_sum += l[t];
    acc += cfg.lambda * layer_sum;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Average precision

struct PrPoint {
  double confidence;
  bool true_positive;
  double precision;
  double recall;
};

struct ApResult {
  double ap = 0;
  std::vector<PrPoint> curve;
  std::size_t num_gt = 0;
};

/// Single-class AP at an IoU threshold, all-points interpolation. Matching
/// is greedy per frame in descending confidence; IoU ties go to the lower
/// ground-truth index.
inline ApResult mean_ap(const std::vector<DetectionSet>& preds, const std::vector<std::vector<BoundingBox>>& gts,
                        double iou_thresh = 0.5) {
  if (preds.size() != gts.size()) throw Error(Errc::ShapeMismatch, "prediction and ground-truth frame counts differ");
  ApResult res;
  for (const auto& g : gts) res.num_gt += g.size();
  if (res.num_gt == 0) throw Error(Errc::NoGroundTruth, "no ground-truth boxes in any frame");

  struct Scored {
    double conf;
    std::size_t frame, rank;
    bool tp;
  };
  std::vector<Scored> all;
  for (std::size_t f = 0; f < preds.size(); ++f) {
    std::vector<std::size_t> order(preds[f].size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return preds[f][a].confidence > preds[f][b].confidence; });
    std::vector<bool> used(gts[f].size(), false);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& d = preds[f][order[k]];
      int best = -1;
      double best_iou = iou_thresh;
      for (std::size_t g = 0; g < gts[f].size(); ++g) {
        if (used[g]) continue;
        const double v = iou(d.box, gts[f][g]);
        if (v >= best_iou && (best < 0 || v > best_iou)) best_iou = v, best = int(g);
      }
      if (best >= 0) used[best] = true;
      all.push_back({d.confidence, f, k, best >= 0});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.conf > b.conf; });

  double tp = 0, fp = 0;
  for (const auto& s : all) {
    (s.tp ? tp : fp) += 1;
    res.curve.push_back({s.conf, s.tp, tp / (tp + fp), tp / double(res.num_gt)});
  }
  // All-points interpolation: precision envelope from the right.
  // Summed in extended precision over true-positive steps, rounded once.
  long double area = 0, envelope = 0;
  std::vector<long double> env(res.curve.size());
  std::vector<std::size_t> tp_at(res.curve.size());
  for (std::size_t i = 0, hits = 0; i < res.curve.size(); ++i) tp_at[i] = hits += res.curve[i].true_positive;
  for (std::size_t i = res.curve.size(); i-- > 0;) {
    envelope = std::max(envelope, (long double)tp_at[i] / (long double)(i + 1));
    env[i] = envelope;
  }
  for (std::size_t i = 0; i < res.curve.size(); ++i)
    if (res.curve[i].true_positive) area += env[i];
  res.ap = double(area / (long double)res.num_gt);
  return res;
}

// ---------------------------------------------------------------------------
// Interchange

inline std::string detections_to_jsonl(const std::vector<DetectionSet>& preds,
                                       const std::vector<std::vector<BoundingBox>>& gts) {
  std::ostringstream os;
  for (std::size_t f = 0; f < preds.size(); ++f) {
    nlohmann::json p = nlohmann::json::array(), g = nlohmann::json::array();
    for (const auto& d : preds[f]) {
      auto j = box_to_json(d.box);
      j["confidence"] = d.confidence;
      p.push_back(j);
    }
    if (f < gts.size())
      for (const auto& b : gts[f]) g.push_back(box_to_json(b));
    os << nlohmann::json{{"frame", f}, {"predictions", p}, {"ground_truth", g}}.dump() << '\n';
  }
  return os.str();
}

inline void detections_from_jsonl(const std::string& text, std::vector<DetectionSet>& preds,
                                  std::vector<std::vector<BoundingBox>>& gts) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line);
    DetectionSet ds;
    for (const auto& pj : j.at("predictions")) ds.push_back({box_from_json(pj), pj.at("confidence").get<double>()});
    std::vector<BoundingBox> g;
    for (const auto& gj : j.at("ground_truth")) g.push_back(box_from_json(gj));
    preds.push_back(std::move(ds));
    gts.push_back(std::move(g));
  }
}

inline std::string pr_curve_csv(const ApResult& r) {
  std::ostringstream os;
  os << "rank,confidence,true_positive,precision,recall\n";
  os.precision(10);
  for (std::size_t i = 0; i < r.curve.size(); ++i)
    os << i << ',' << r.curve[i].confidence << ',' << int(r.curve[i].true_positive) << ',' << r.curve[i].precision
       << ',' << r.curve[i].recall << '\n';
  return os.str();
}

}  // namespace spikeforge

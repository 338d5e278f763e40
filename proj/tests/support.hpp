#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "spikeforge/spikeforge.hpp"

namespace testkit {

using spikeforge::Shape;
using spikeforge::Tape;
using spikeforge::Tensor;

inline Tensor random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, 1e-12).
inline double relative_error(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      diff += (a[k][i] - b[k][i]) * (a[k][i] - b[k][i]);
      na += a[k][i] * a[k][i];
      nb += b[k][i] * b[k][i];
    }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

/// Central differences of a scalar function of several tensors.
inline std::vector<Tensor> numeric_grad(const std::function<double(const std::vector<Tensor>&)>& f,
                                        std::vector<Tensor> x, double h = 1e-5) {
  std::vector<Tensor> g;
  for (std::size_t k = 0; k < x.size(); ++k) {
    Tensor gk = Tensor::zeros_like(x[k]);
    for (std::size_t i = 0; i < x[k].size(); ++i) {
      const double keep = x[k][i];
      x[k][i] = keep + h;
      const double up = f(x);
      x[k][i] = keep - h;
      const double down = f(x);
      x[k][i] = keep;
      gk[i] = (up - down) / (2 * h);
    }
    g.push_back(std::move(gk));
  }
  return g;
}

inline spikeforge::EventStream random_stream(std::size_t n, spikeforge::Resolution r, std::uint64_t seed,
                                            std::int64_t max_dt = 50, bool distinct_times = false) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ux(0, r.width - 1), uy(0, r.height - 1), up(0, 1);
  std::uniform_int_distribution<std::int64_t> dt(distinct_times ? 1 : 0, std::max<std::int64_t>(max_dt, 1));
  spikeforge::EventStream s;
  s.resolution = r;
  std::int64_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t += dt(rng);
    s.events.push_back({std::uint16_t(ux(rng)), std::uint16_t(uy(rng)), t, std::uint8_t(up(rng))});
  }
  s.duration_us = s.events.empty() ? 0 : s.events.back().t + 1;
  return s;
}

/// Random small chip-compatible network with integer weights, already in
/// quantized form. Non-negative weights when `non_negative` is set.
inline spikeforge::QuantizedNetwork random_quantized_net(std::mt19937_64& rng, bool non_negative) {
  using namespace spikeforge;
  std::uniform_int_distribution<int> pick(0, 1000);
  NetworkSpec spec;
  const int side = 4 + 2 * (pick(rng) % 3);
  spec.input = {2, side, side};
  spec.mode = SpikeMode::multi;
  spec.layers.push_back({LayerKind::conv, 2 + pick(rng) % 2, 1 + pick(rng) % 2, 1.0, {}});
  if (pick(rng) % 2) spec.layers.push_back({LayerKind::fc, 3 + pick(rng) % 4, 1, 1.0, {}});
  QuantizedNetwork q{spec, {}};
  const auto geo = describe(spec);
  for (const auto& g : geo) {
    QuantizedLayer ql;
    ql.shape = g.kind == LayerKind::conv ? Shape{g.neuron_shape[0], g.in_shape[0], 3, 3}
                                         : Shape{g.neuron_shape[0], g.in_shape[0]};
    std::uniform_int_distribution<int> w(non_negative ? 0 : -20, 20);
    for (std::size_t i = 0; i < shape_size(ql.shape); ++i) ql.weight.push_back(std::int8_t(w(rng)));
    ql.theta_q = 5 + pick(rng) % 40;
    q.layers.push_back(std::move(ql));
  }
  return q;
}

/// Clock-driven multi-spike run of a quantized network on integer weights.
inline spikeforge::RunRecord<double> run_binned(const spikeforge::QuantizedNetwork& q,
                                                const spikeforge::EventStream& s, std::int64_t window_us) {
  using namespace spikeforge;
  RunOptions o;
  o.mode = SpikeMode::multi;
  o.saturate_int16 = true;
  return run_network<double>(q.spec, q.as_params(), bin_events(s, window_us, Representation::histogram), o);
}

using Builder = std::function<Tape::Var(Tape&, const std::vector<Tape::Var>&)>;

/// Checks a tape-built function by contracting its output with a fixed
/// random tensor and comparing tape gradients against central differences.
/// Returns the norm-wise relative error.
inline double check_tape_builder(const Builder& build, const std::vector<Tensor>& inputs, std::uint64_t seed,
                                 double h = 1e-5) {
  Tensor probe;
  {
    Tape t;
    std::vector<Tape::Var> vars;
    for (const auto& x : inputs) vars.push_back(t.parameter(x));
    std::mt19937_64 rng(seed);
    probe = random_tensor(t.value(build(t, vars)).shape(), rng);
  }
  auto loss_of = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Tape t;
    std::vector<Tape::Var> vars;
    for (const auto& x : xs) vars.push_back(t.parameter(x));
    const auto out = build(t, vars);
    const auto loss = t.sum(t.mul(out, t.leaf(probe)));
    if (grads) {
      t.backward(loss);
      for (auto v : vars) grads->push_back(t.grad(v));
    }
    return t.value(loss)[0];
  };
  std::vector<Tensor> analytic;
  loss_of(inputs, &analytic);
  const auto numeric = numeric_grad([&](const std::vector<Tensor>& xs) { return loss_of(xs, nullptr); }, inputs, h);
  return relative_error(analytic, numeric);
}

}  // namespace testkit

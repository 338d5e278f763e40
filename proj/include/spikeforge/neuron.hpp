#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "spikeforge/error.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

enum class SpikeMode { single, multi };

inline const char* to_string(SpikeMode m) { return m == SpikeMode::single ? "single" : "multi"; }

inline SpikeMode spike_mode_from_string(const std::string& s) {
  if (s == "single") return SpikeMode::single;
  if (s == "multi") return SpikeMode::multi;
  throw Error(Errc::InvalidArgument, "unknown spike mode '" + s + "'");
}

inline constexpr std::int64_t kDefaultMaxSpikes = 32767;  // 2^15 - 1

/// Spikes emitted for membrane potential u. Firing requires u > theta
/// strictly; multi mode emits floor(u / theta), capped at max_spikes.
template <typename T>
T spike_count(T u, T theta, SpikeMode mode, std::int64_t max_spikes = kDefaultMaxSpikes) {
  if (!(u > theta)) return T{0};
  if (mode == SpikeMode::single) return T{1};
  const T n = std::floor(u / theta);
  return std::min(n, T(max_spikes));
}

enum class SurrogateKind { single_exponential, periodic_exponential };

struct SurrogateConfig {
  SurrogateKind kind = SurrogateKind::single_exponential;
  double beta = 10.0;  // steepness
  double theta = 1.0;  // peak location, and period for the periodic kind

  /// Default pairing: single exponential for single-spike layers, periodic
  /// for multi-spike layers, beta = 10 / theta.
  static SurrogateConfig for_layer(SpikeMode mode, double theta, double beta_times_theta = 10.0) {
    return {mode == SpikeMode::single ? SurrogateKind::single_exponential : SurrogateKind::periodic_exponential,
            beta_times_theta / theta, theta};
  }
};

/// Backward-pass stand-in for d(spike_count)/du.
inline double surrogate_grad(double u, const SurrogateConfig& cfg) {
  if (cfg.kind == SurrogateKind::single_exponential) return cfg.beta * std::exp(-cfg.beta * std::abs(u - cfg.theta));
  // Below threshold nothing can fire, so only the first threshold counts.
  if (u < cfg.theta) return cfg.beta * std::exp(-cfg.beta * (cfg.theta - u));
  const double r = std::fmod(u, cfg.theta);
  const double dist = std::min(r, cfg.theta - r);
  return cfg.beta * std::exp(-cfg.beta * dist);
}

struct LayerParams {
  Tensor weight;  // [Co, Ci, 3, 3] or [M, N]; no bias
  double theta = 1.0;
};

inline LayerParams scale_layer(const LayerParams& p, double lambda) {
  if (!(lambda > 0.0)) throw Error(Errc::NonPositiveLambda, "scale factor must be positive");
  LayerParams out = p;
  out.weight *= lambda;
  out.theta *= lambda;
  return out;
}

/// Membrane potentials of one layer.
template <typename T>
struct BasicIFState {
  BasicTensor<T> U;
  bool saturated = false;  // multi-spike cap was hit at some point
};

using IFLayerState = BasicIFState<double>;

/// U += drive; S = spike_count(U); U -= S * theta (soft reset).
template <typename T>
BasicTensor<T> if_step(BasicIFState<T>& state, const BasicTensor<T>& drive, T theta, SpikeMode mode,
                       std::int64_t max_spikes = kDefaultMaxSpikes) {
  if (state.U.empty()) state.U = BasicTensor<T>(drive.shape());
  state.U.check_same(drive);
  BasicTensor<T> spikes(drive.shape());
  for (std::size_t i = 0; i < drive.size(); ++i) {
    T u = state.U[i] + drive[i];
    if (!std::isfinite(u)) throw Error(Errc::NonFiniteState, "membrane potential became non-finite");
    const T s = spike_count(u, theta, mode, max_spikes);
    if (mode == SpikeMode::multi && s >= T(max_spikes)) state.saturated = true;
    u -= s * theta;
    state.U[i] = u;
    spikes[i] = s;
  }
  return spikes;
}

}  // namespace spikeforge

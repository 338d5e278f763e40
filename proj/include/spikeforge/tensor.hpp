#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spikeforge/error.hpp"

namespace spikeforge {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, [](std::size_t a, int b) { return a * std::size_t(b); });
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major tensor. double for training, float for inference.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw Error(Errc::ShapeMismatch, "buffer of " + std::to_string(data_.size()) + " for shape " + shape_str(shape_));
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor zeros_like(const BasicTensor& o) { return BasicTensor(o.shape_); }

  const Shape& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int i, int j, int k) { return data_[(std::size_t(i) * shape_[1] + j) * shape_[2] + k]; }
  const T& at(int i, int j, int k) const { return data_[(std::size_t(i) * shape_[1] + j) * shape_[2] + k]; }

  BasicTensor reshaped(Shape s) const {
    if (shape_size(s) != size()) throw Error(Errc::ShapeMismatch, "reshape " + shape_str(shape_) + " -> " + shape_str(s));
    return BasicTensor(std::move(s), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  BasicTensor& operator+=(const BasicTensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  BasicTensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T{0}); }
  T max_abs() const {
    T m{0};
    for (auto v : data_) m = std::max(m, std::abs(v));
    return m;
  }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  void check_same(const BasicTensor& o) const {
    if (o.shape_ != shape_) throw Error(Errc::ShapeMismatch, shape_str(shape_) + " vs " + shape_str(o.shape_));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using Tensor32 = BasicTensor<float>;

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero padding 1, no bias.

namespace detail {
inline void expect_rank(const Shape& s, std::size_t r, const char* what) {
  if (s.size() != r) throw Error(Errc::ShapeMismatch, std::string(what) + " expects rank " + std::to_string(r) + ", got " + shape_str(s));
}

/// Valid output range [lo, hi) along one axis for kernel tap offset d in {-1,0,1}.
inline std::pair<int, int> tap_range(int extent, int d) { return {std::max(0, -d), std::min(extent, extent - d)}; }
}  // namespace detail

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel) {
  detail::expect_rank(input.shape(), 3, "conv2d input");
  detail::expect_rank(kernel.shape(), 4, "conv2d kernel");
  const int Ci = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int Co = kernel.dim(0);
  if (kernel.dim(1) != Ci || kernel.dim(2) != 3 || kernel.dim(3) != 3)
    throw Error(Errc::ShapeMismatch, "kernel " + shape_str(kernel.shape()) + " for input " + shape_str(input.shape()));
  BasicTensor<T> out({Co, H, W});
  const T* in = input.data();
  const T* k = kernel.data();
  T* o = out.data();
  for (int co = 0; co < Co; ++co) {
    T* oc = o + std::size_t(co) * H * W;
    for (int ci = 0; ci < Ci; ++ci) {
      const T* ic = in + std::size_t(ci) * H * W;
      const T* kc = k + (std::size_t(co) * Ci + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const auto [y0, y1] = detail::tap_range(H, ky - 1);
        for (int kx = 0; kx < 3; ++kx) {
          const T w = kc[ky * 3 + kx];
          if (w == T{0}) continue;
          const auto [x0, x1] = detail::tap_range(W, kx - 1);
          for (int y = y0; y < y1; ++y) {
            T* orow = oc + std::size_t(y) * W;
            const T* irow = ic + std::size_t(y + ky - 1) * W + (kx - 1);
            for (int x = x0; x < x1; ++x) orow[x] += w * irow[x];
          }
        }
      }
    }
  }
  return out;
}

/// dL/dinput given dL/doutput: full correlation with the flipped kernel.
template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& kernel) {
  const int Co = grad_out.dim(0), H = grad_out.dim(1), W = grad_out.dim(2);
  const int Ci = kernel.dim(1);
  BasicTensor<T> gin({Ci, H, W});
  const T* g = grad_out.data();
  const T* k = kernel.data();
  T* gi = gin.data();
  for (int co = 0; co < Co; ++co) {
    const T* gc = g + std::size_t(co) * H * W;
    for (int ci = 0; ci < Ci; ++ci) {
      T* ic = gi + std::size_t(ci) * H * W;
      const T* kc = k + (std::size_t(co) * Ci + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const auto [y0, y1] = detail::tap_range(H, ky - 1);
        for (int kx = 0; kx < 3; ++kx) {
          const T w = kc[ky * 3 + kx];
          if (w == T{0}) continue;
          const auto [x0, x1] = detail::tap_range(W, kx - 1);
          for (int y = y0; y < y1; ++y) {
            const T* grow = gc + std::size_t(y) * W;
            T* irow = ic + std::size_t(y + ky - 1) * W + (kx - 1);
            for (int x = x0; x < x1; ++x) irow[x] += w * grow[x];
          }
        }
      }
    }
  }
  return gin;
}

/// dL/dkernel given the forward input and dL/doutput.
template <typename T>
BasicTensor<T> conv2d_backward_kernel(const BasicTensor<T>& input, const BasicTensor<T>& grad_out) {
  const int Ci = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int Co = grad_out.dim(0);
  BasicTensor<T> gk({Co, Ci, 3, 3});
  const T* in = input.data();
  const T* g = grad_out.data();
  for (int co = 0; co < Co; ++co) {
    const T* gc = g + std::size_t(co) * H * W;
    for (int ci = 0; ci < Ci; ++ci) {
      const T* ic = in + std::size_t(ci) * H * W;
      T* kc = gk.data() + (std::size_t(co) * Ci + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const auto [y0, y1] = detail::tap_range(H, ky - 1);
        for (int kx = 0; kx < 3; ++kx) {
          const auto [x0, x1] = detail::tap_range(W, kx - 1);
          T acc{0};
          for (int y = y0; y < y1; ++y) {
            const T* grow = gc + std::size_t(y) * W;
            const T* irow = ic + std::size_t(y + ky - 1) * W + (kx - 1);
            for (int x = x0; x < x1; ++x) acc += grow[x] * irow[x];
          }
          kc[ky * 3 + kx] = acc;
        }
      }
    }
  }
  return gk;
}

// ---------------------------------------------------------------------------
// 2x2 sum pooling

template <typename T>
BasicTensor<T> sum_pool(const BasicTensor<T>& input, int k = 2) {
  detail::expect_rank(input.shape(), 3, "sum_pool");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  if (H % k != 0 || W % k != 0) throw Error(Errc::OddExtent, "sum_pool extent " + shape_str(input.shape()));
  const int Ho = H / k, Wo = W / k;
  BasicTensor<T> out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.at(c, y / k, x / k) += input.at(c, y, x);
  return out;
}

template <typename T>
BasicTensor<T> sum_pool_backward(const BasicTensor<T>& grad_out, int k = 2) {
  const int C = grad_out.dim(0), Ho = grad_out.dim(1), Wo = grad_out.dim(2);
  BasicTensor<T> gin({C, Ho * k, Wo * k});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho * k; ++y)
      for (int x = 0; x < Wo * k; ++x) gin.at(c, y, x) = grad_out.at(c, y / k, x / k);
  return gin;
}

// ---------------------------------------------------------------------------
// Fully connected: y = W x (+ b)

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>* bias = nullptr) {
  detail::expect_rank(weight.shape(), 2, "linear weight");
  const int M = weight.dim(0), N = weight.dim(1);
  if (x.size() != std::size_t(N))
    throw Error(Errc::ShapeMismatch, "linear input of " + std::to_string(x.size()) + " for weight " + shape_str(weight.shape()));
  if (bias && bias->size() != std::size_t(M)) throw Error(Errc::ShapeMismatch, "linear bias");
  BasicTensor<T> y({M});
  const T* w = weight.data();
  const T* xv = x.data();
  for (int m = 0; m < M; ++m) {
    const T* row = w + std::size_t(m) * N;
    T acc = bias ? (*bias)[m] : T{0};
    for (int n = 0; n < N; ++n) acc += row[n] * xv[n];
    y[m] = acc;
  }
  return y;
}

template <typename T>
BasicTensor<T> linear_backward_input(const BasicTensor<T>& grad_y, const BasicTensor<T>& weight) {
  const int M = weight.dim(0), N = weight.dim(1);
  BasicTensor<T> gx({N});
  for (int m = 0; m < M; ++m) {
    const T g = grad_y[m];
    if (g == T{0}) continue;
    const T* row = weight.data() + std::size_t(m) * N;
    for (int n = 0; n < N; ++n) gx[n] += g * row[n];
  }
  return gx;
}

template <typename T>
BasicTensor<T> linear_backward_weight(const BasicTensor<T>& x, const BasicTensor<T>& grad_y) {
  const int M = int(grad_y.size()), N = int(x.size());
  BasicTensor<T> gw({M, N});
  for (int m = 0; m < M; ++m) {
    const T g = grad_y[m];
    if (g == T{0}) continue;
    T* row = gw.data() + std::size_t(m) * N;
    for (int n = 0; n < N; ++n) row[n] = g * x[n];
  }
  return gw;
}

// ---------------------------------------------------------------------------
// Layer normalization over the feature axis of one sample (population
// variance).

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          T eps = T(kLayerNormEps)) {
  const std::size_t N = x.size();
  if (N < 2) throw Error(Errc::ShapeMismatch, "layer_norm needs at least 2 features");
  if (gamma.size() != N || beta.size() != N) throw Error(Errc::ShapeMismatch, "layer_norm affine parameters");
  T mean{0};
  for (std::size_t i = 0; i < N; ++i) mean += x[i];
  mean /= T(N);
  T var{0};
  for (std::size_t i = 0; i < N; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= T(N);
  const T inv = T(1) / std::sqrt(var + eps);
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < N; ++i) y[i] = gamma[i] * (x[i] - mean) * inv + beta[i];
  return y;
}

template <typename T>
struct LayerNormGrads {
  BasicTensor<T> input, gamma, beta;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& grad_y,
                                      T eps = T(kLayerNormEps)) {
  const std::size_t N = x.size();
  T mean{0};
  for (std::size_t i = 0; i < N; ++i) mean += x[i];
  mean /= T(N);
  T var{0};
  for (std::size_t i = 0; i < N; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= T(N);
  const T inv = T(1) / std::sqrt(var + eps);
  LayerNormGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(x.shape()), BasicTensor<T>(x.shape())};
  // xhat_i = (x_i - mean) * inv; dL/dxhat_i = gamma_i * gy_i
  T sum_d{0}, sum_d_xhat{0};
  for (std::size_t i = 0; i < N; ++i) {
    const T xhat = (x[i] - mean) * inv;
    const T d = gamma[i] * grad_y[i];
    g.gamma[i] = grad_y[i] * xhat;
    g.beta[i] = grad_y[i];
    sum_d += d;
    sum_d_xhat += d * xhat;
  }
  for (std::size_t i = 0; i < N; ++i) {
    const T xhat = (x[i] - mean) * inv;
    const T d = gamma[i] * grad_y[i];
    g.input[i] = inv * (d - sum_d / T(N) - xhat * sum_d_xhat / T(N));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over the rows of an [R, N] matrix (used only by the
// normalization ablation).

template <typename T>
struct BatchNormStats {
  std::vector<T> mean, var;
};

template <typename T>
BatchNormStats<T> batch_stats(const BasicTensor<T>& x) {
  const int R = x.dim(0), N = x.dim(1);
  BatchNormStats<T> s{std::vector<T>(N, T{0}), std::vector<T>(N, T{0})};
  for (int r = 0; r < R; ++r)
    for (int n = 0; n < N; ++n) s.mean[n] += x[std::size_t(r) * N + n];
  for (auto& m : s.mean) m /= T(R);
  for (int r = 0; r < R; ++r)
    for (int n = 0; n < N; ++n) {
      const T d = x[std::size_t(r) * N + n] - s.mean[n];
      s.var[n] += d * d;
    }
  for (auto& v : s.var) v /= T(R);
  return s;
}

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          const BatchNormStats<T>& stats, T eps = T(kLayerNormEps)) {
  const int R = x.dim(0), N = x.dim(1);
  BasicTensor<T> y(x.shape());
  for (int r = 0; r < R; ++r)
    for (int n = 0; n < N; ++n) {
      const std::size_t i = std::size_t(r) * N + n;
      y[i] = gamma[n] * (x[i] - stats.mean[n]) / std::sqrt(stats.var[n] + eps) + beta[n];
    }
  return y;
}

template <typename T>
LayerNormGrads<T> batch_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                      const BasicTensor<T>& grad_y, T eps = T(kLayerNormEps)) {
  const int R = x.dim(0), N = x.dim(1);
  const auto st = batch_stats(x);
  LayerNormGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>({N}), BasicTensor<T>({N})};
  for (int n = 0; n < N; ++n) {
    const T inv = T(1) / std::sqrt(st.var[n] + eps);
    T sum_d{0}, sum_d_xhat{0};
    for (int r = 0; r < R; ++r) {
      const std::size_t i = std::size_t(r) * N + n;
      const T xhat = (x[i] - st.mean[n]) * inv;
      g.gamma[n] += grad_y[i] * xhat;
      g.beta[n] += grad_y[i];
      sum_d += gamma[n] * grad_y[i];
      sum_d_xhat += gamma[n] * grad_y[i] * xhat;
    }
    for (int r = 0; r < R; ++r) {
      const std::size_t i = std::size_t(r) * N + n;
      const T xhat = (x[i] - st.mean[n]) * inv;
      g.input[i] = inv * (gamma[n] * grad_y[i] - sum_d / T(R) - xhat * sum_d_xhat / T(R));
    }
  }
  return g;
}

template <typename T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

}  // namespace spikeforge

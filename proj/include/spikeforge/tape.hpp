#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "spikeforge/error.hpp"
#include "spikeforge/tensor.hpp"

namespace spikeforge {

/// Reverse-mode recording of one forward pass (all timesteps of one sample).
/// Nodes are appended in execution order; backward() walks them in reverse,
/// visiting each recorded node exactly once.
class Tape {
 public:
  using Var = std::size_t;
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Var leaf(Tensor value, bool requires_grad = false) { return push(std::move(value), requires_grad, nullptr); }
  Var parameter(Tensor value) { return leaf(std::move(value), true); }

  const Tensor& value(Var v) const { return nodes_.at(v).value; }
  bool requires_grad(Var v) const { return nodes_.at(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// True once some gradient has flowed into v.
  bool reached(Var v) const { return nodes_.at(v).has_grad; }

  /// Gradient of v; all-zero when v was not reached.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v);
    return n.has_grad ? n.grad : Tensor::zeros_like(n.value);
  }

  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_.at(v);
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Records an op whose value was computed by the caller.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool rg = false;
    for (Var i : inputs) rg = rg || nodes_.at(i).requires_grad;
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr);
  }
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool rg = false;
    for (Var i : inputs) rg = rg || nodes_.at(i).requires_grad;
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr);
  }

  // --- differentiable ops -------------------------------------------------

  Var conv2d(Var x, Var k) {
    return record(spikeforge::conv2d(value(x), value(k)), {x, k}, [x, k](Tape& t, const Tensor& g) {
      if (t.requires_grad(x)) t.accumulate(x, conv2d_backward_input(g, t.value(k)));
      if (t.requires_grad(k)) t.accumulate(k, conv2d_backward_kernel(t.value(x), g));
    });
  }

  Var sum_pool(Var x, int k = 2) {
    return record(spikeforge::sum_pool(value(x), k), {x},
                  [x, k](Tape& t, const Tensor& g) { t.accumulate(x, sum_pool_backward(g, k)); });
  }

  Var linear(Var x, Var w, std::optional<Var> b = std::nullopt) {
    const Tensor* bias = b ? &value(*b) : nullptr;
    Tensor y = spikeforge::linear(value(x), value(w), bias);
    std::vector<Var> inputs{x, w};
    if (b) inputs.push_back(*b);
    return record(std::move(y), inputs, [x, w, b](Tape& t, const Tensor& g) {
      if (t.requires_grad(x)) {
        Tensor gx = linear_backward_input(g, t.value(w));
        t.accumulate(x, gx.reshaped(t.value(x).shape()));
      }
      if (t.requires_grad(w)) t.accumulate(w, linear_backward_weight(t.value(x), g));
      if (b) t.accumulate(*b, g);
    });
  }

  Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps) {
    return record(spikeforge::layer_norm(value(x), value(gamma), value(beta), eps), {x, gamma, beta},
                  [x, gamma, beta, eps](Tape& t, const Tensor& g) {
                    auto grads = layer_norm_backward(t.value(x), t.value(gamma), g, eps);
                    t.accumulate(x, grads.input);
                    t.accumulate(gamma, grads.gamma);
                    t.accumulate(beta, grads.beta);
                  });
  }

  /// Normalizes the rows of x [R, N] with batch statistics.
  Var batch_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps) {
    const auto stats = batch_stats(value(x));
    return record(spikeforge::batch_norm(value(x), value(gamma), value(beta), stats, eps), {x, gamma, beta},
                  [x, gamma, beta, eps](Tape& t, const Tensor& g) {
                    auto grads = batch_norm_backward(t.value(x), t.value(gamma), g, eps);
                    t.accumulate(x, grads.input);
                    t.accumulate(gamma, grads.gamma);
                    t.accumulate(beta, grads.beta);
                  });
  }

  Var add(Var a, Var b) {
    Tensor y = value(a);
    y += value(b);
    return record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  Var mul(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    va.check_same(vb);
    Tensor y(va.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = va[i] * vb[i];
    return record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g) {
      const Tensor& va = t.value(a);
      const Tensor& vb = t.value(b);
      Tensor ga(g.shape()), gb(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] = g[i] * vb[i];
        gb[i] = g[i] * va[i];
      }
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  Var scale(Var a, double c) {
    Tensor y = value(a);
    y *= c;
    return record(std::move(y), {a}, [a, c](Tape& t, const Tensor& g) {
      Tensor ga = g;
      ga *= c;
      t.accumulate(a, ga);
    });
  }

  Var sum(Var a) {
    return record(Tensor({1}, {value(a).sum()}), {a}, [a](Tape& t, const Tensor& g) {
      t.accumulate(a, Tensor(t.value(a).shape(), g[0]));
    });
  }

  Var reshape(Var a, Shape s) {
    return record(value(a).reshaped(std::move(s)), {a},
                  [a](Tape& t, const Tensor& g) { t.accumulate(a, g.reshaped(t.value(a).shape())); });
  }

  Var sigmoid(Var a) {
    Tensor y = value(a);
    for (auto& v : y.vec()) v = spikeforge::sigmoid(v);
    return record(std::move(y), {a}, [this_out = size(), a](Tape& t, const Tensor& g) {
      const Tensor& y = t.value(this_out);
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
      t.accumulate(a, ga);
    });
  }

  /// Elementwise y = f(x) with a user-supplied derivative used on the way
  /// back (the surrogate for spike functions).
  template <typename F, typename DF>
  Var map(Var a, F f, DF df) {
    Tensor y = value(a);
    for (auto& v : y.vec()) v = f(v);
    return record(std::move(y), {a}, [a, df](Tape& t, const Tensor& g) {
      const Tensor& x = t.value(a);
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] == 0.0 ? 0.0 : g[i] * df(x[i]);
      t.accumulate(a, ga);
    });
  }

  /// Soft reset u = v - theta * s, with s treated as a constant.
  Var subtract_detached(Var v, Var s, double theta) {
    Tensor y = value(v);
    const Tensor& sv = value(s);
    y.check_same(sv);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= theta * sv[i];
    return record(std::move(y), {v}, [v](Tape& t, const Tensor& g) { t.accumulate(v, g); });
  }

  /// Stacks equally sized vectors into an [R, N] matrix.
  Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw Error(Errc::ShapeMismatch, "stack_rows of nothing");
    const int N = int(value(rows[0]).size());
    Tensor y({int(rows.size()), N});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Tensor& v = value(rows[r]);
      if (int(v.size()) != N) throw Error(Errc::ShapeMismatch, "stack_rows width");
      std::copy(v.vec().begin(), v.vec().end(), y.data() + r * N);
    }
    return record(std::move(y), rows, [rows, N](Tape& t, const Tensor& g) {
      for (std::size_t r = 0; r < rows.size(); ++r) {
        Tensor gr(t.value(rows[r]).shape());
        std::copy(g.data() + r * N, g.data() + (r + 1) * N, gr.data());
        t.accumulate(rows[r], gr);
      }
    });
  }

  Var row(Var m, int r) {
    const Tensor& mv = value(m);
    const int N = mv.dim(1);
    Tensor y({N});
    std::copy(mv.data() + std::size_t(r) * N, mv.data() + std::size_t(r + 1) * N, y.data());
    return record(std::move(y), {m}, [m, r, N](Tape& t, const Tensor& g) {
      Tensor gm(t.value(m).shape());
      std::copy(g.vec().begin(), g.vec().end(), gm.data() + std::size_t(r) * N);
      t.accumulate(m, gm);
    });
  }

  // --- reverse pass -------------------------------------------------------

  void backward(Var root) {
    if (value(root).size() != 1) throw Error(Errc::ShapeMismatch, "backward root must be a scalar");
    backward({{root, Tensor({1}, 1.0)}});
  }

  /// Seeds several nodes (e.g. gradients arriving from a separate head
  /// computation) and runs the reverse sweep.
  void backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
    Var top = 0;
    for (const auto& [v, g] : seeds) {
      value(v).check_same(g);
      accumulate(v, g);
      top = std::max(top, v);
    }
    for (std::size_t i = top + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      // Callbacks only touch earlier nodes, so the reference stays valid.
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, false, std::move(fn)});
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
};

}  // namespace spikeforge

#pragma once

// Reverse-mode differentiation over FieldGrid-valued nodes.
//
// Each op computes its value eagerly. When at least one input requires a
// gradient the result keeps its inputs alive and stores a closure that
// pushes the result's gradient into them; otherwise nothing is recorded and
// intermediates are freed as soon as the caller drops them. `backward(root)`
// walks the recorded graph in reverse topological order.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fluidlab/field.hpp"

namespace fluidlab::ad {

struct Node {
  FieldGrid value;
  FieldGrid grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  FieldGrid& grad_buffer() {
    if (grad.size() != value.size() || !grad.same_shape(value))
      grad = FieldGrid(value.channels(), value.height(), value.width());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(FieldGrid value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var parameter(FieldGrid value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  static Var scalar(double x) { return constant(make_scalar(x)); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const FieldGrid& value() const { return node_->value; }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  double item() const {
    require(node_->value.size() == 1, "Var::item: not a scalar");
    return node_->value[0];
  }

  /// Accumulated gradient; zeros when nothing reached this node.
  FieldGrid grad() const {
    if (node_->grad.same_shape(node_->value) && !node_->grad.empty()) return node_->grad;
    return FieldGrid(value().channels(), value().height(), value().width());
  }

  const std::shared_ptr<Node>& ptr() const noexcept { return node_; }
  std::size_t channels() const { return value().channels(); }
  std::size_t height() const { return value().height(); }
  std::size_t width() const { return value().width(); }

 private:
  std::shared_ptr<Node> node_;
};

/// Copy of the value with no history.
inline Var detach(const Var& v) { return Var::constant(v.value()); }

namespace detail {

template <class Backward>
Var record(FieldGrid value, std::initializer_list<Var> inputs, Backward&& bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  for (const Var& v : inputs) any = any || v.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const Var& v : inputs) n->parents.push_back(v.ptr());
    n->backward = std::forward<Backward>(bw);
  }
  return Var(std::move(n));
}

/// Gradient buffer of parent i, or nullptr if that parent is not tracked.
inline FieldGrid* parent_grad(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

inline const FieldGrid& parent_value(const Node& self, std::size_t i) {
  return self.parents[i]->value;
}

}  // namespace detail

/// Seeds d(root)/d(root) = 1 and propagates to every tracked node.
inline void backward(const Var& root) {
  require(root.value().size() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.ptr().get(), 0);
  seen.insert(root.ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.ptr()->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "ad::add");
  return detail::record(a.value() + b.value(), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (auto* g = detail::parent_grad(self, i))
        for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += self.grad[k];
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "ad::sub");
  return detail::record(a.value() - b.value(), {a, b}, [](Node& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += self.grad[k];
    if (auto* g = detail::parent_grad(self, 1))
      for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] -= self.grad[k];
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "ad::mul");
  FieldGrid out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::record(std::move(out), {a, b}, [](Node& self) {
    const auto& av = detail::parent_value(self, 0);
    const auto& bv = detail::parent_value(self, 1);
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += self.grad[k] * bv[k];
    if (auto* g = detail::parent_grad(self, 1))
      for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += self.grad[k] * av[k];
  });
}

inline Var scale(const Var& a, double s) {
  return detail::record(s * a.value(), {a}, [s](Node& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += s * self.grad[k];
  });
}

/// Elementwise product with a fixed grid (no gradient to the grid).
inline Var mul_const(const Var& a, FieldGrid m) {
  require_same_shape(a.value(), m, "ad::mul_const");
  FieldGrid out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  return detail::record(std::move(out), {a}, [m = std::move(m)](Node& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += self.grad[k] * m[k];
  });
}

/// a scaled by a 1×1×1 variable.
inline Var scale_by(const Var& a, const Var& s) {
  require(s.value().size() == 1, "ad::scale_by: scale must be a scalar");
  const double sv = s.value()[0];
  return detail::record(sv * a.value(), {a, s}, [](Node& self) {
    const auto& av = detail::parent_value(self, 0);
    const double sv = detail::parent_value(self, 1)[0];
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += sv * self.grad[k];
    if (auto* g = detail::parent_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t k = 0; k < av.size(); ++k) acc += self.grad[k] * av[k];
      (*g)[0] += acc;
    }
  });
}

/// Channel c of a (C×H×W) multiplied by v[c] (v is C×1×1).
inline Var channel_scale(const Var& a, const Var& v) {
  const auto& av = a.value();
  require(v.value().size() == av.channels(), "ad::channel_scale: one scale per channel");
  FieldGrid out = av;
  const std::size_t n = av.plane();
  for (std::size_t c = 0; c < av.channels(); ++c)
    for (std::size_t p = 0; p < n; ++p) out[c * n + p] *= v.value()[c];
  return detail::record(std::move(out), {a, v}, [](Node& self) {
    const auto& av = detail::parent_value(self, 0);
    const auto& vv = detail::parent_value(self, 1);
    const std::size_t n = av.plane();
    auto* ga = detail::parent_grad(self, 0);
    auto* gv = detail::parent_grad(self, 1);
    for (std::size_t c = 0; c < av.channels(); ++c) {
      double acc = 0.0;
      for (std::size_t p = 0; p < n; ++p) {
        const double g = self.grad[c * n + p];
        if (ga) (*ga)[c * n + p] += g * vv[c];
        acc += g * av[c * n + p];
      }
      if (gv) (*gv)[c] += acc;
    }
  });
}

/// C×1×1 vector repeated over an H×W plane.
inline Var broadcast(const Var& v, std::size_t h, std::size_t w) {
  const std::size_t cs = v.value().size();
  FieldGrid out(cs, h, w);
  for (std::size_t c = 0; c < cs; ++c)
    for (double& x : out.channel(c)) x = v.value()[c];
  return detail::record(std::move(out), {v}, [](Node& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      const std::size_t n = self.value.plane();
      for (std::size_t c = 0; c < self.value.channels(); ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < n; ++p) acc += self.grad[c * n + p];
        (*g)[c] += acc;
      }
    }
  });
}

/// Row r of a 1×R×K matrix as a K×1×1 vector.
inline Var select_row(const Var& m, std::size_t r) {
  const auto& mv = m.value();
  require(r < mv.height(), "ad::select_row: row out of range");
  const std::size_t k = mv.width();
  FieldGrid out(k, 1, 1);
  for (std::size_t j = 0; j < k; ++j) out[j] = mv[r * k + j];
  return detail::record(std::move(out), {m}, [r, k](Node& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t j = 0; j < k; ++j) (*g)[r * k + j] += self.grad[j];
  });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

namespace detail {

/// y = f(x) with dy/dx = df(x, y).
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  FieldGrid out = a.value();
  for (double& v : out.values()) v = f(v);
  return record(std::move(out), {a}, [df](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      const auto& x = parent_value(self, 0);
      for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += self.grad[k] * df(x[k], self.value[k]);
    }
  });
}

}  // namespace detail

inline Var gelu(const Var& a) {
  return detail::unary(a, [](double x) { return fluidlab::gelu(x); },
                       [](double x, double) { return gelu_derivative(x); });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(a, [](double x) { return fluidlab::sigmoid(x); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var softplus(const Var& a) {
  return detail::unary(a, [](double x) { return fluidlab::softplus(x); },
                       [](double x, double) { return fluidlab::sigmoid(x); });
}

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// Clamp with zero subgradient outside the open interval.
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                       [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Spatial operators

inline Var laplacian(const Var& u, std::size_t dilation) {
  return detail::record(fluidlab::laplacian(u.value(), dilation), {u}, [dilation](Node& self) {
    if (auto* g = detail::parent_grad(self, 0)) laplacian_adjoint(self.grad, dilation, *g);
  });
}

inline Var avg_pool(const Var& u, std::size_t out_h, std::size_t out_w) {
  return detail::record(fluidlab::avg_pool(u.value(), out_h, out_w), {u}, [](Node& self) {
    if (auto* g = detail::parent_grad(self, 0)) avg_pool_adjoint(self.grad, *g);
  });
}

inline Var bilinear_resize(const Var& u, std::size_t out_h, std::size_t out_w) {
  if (u.height() == out_h && u.width() == out_w) return u;
  return detail::record(fluidlab::bilinear_resize(u.value(), out_h, out_w), {u}, [](Node& self) {
    if (auto* g = detail::parent_grad(self, 0)) bilinear_resize_adjoint(self.grad, *g);
  });
}

/// Per-channel spatial mean as a C×1×1 vector.
inline Var spatial_mean(const Var& u) {
  return detail::record(fluidlab::spatial_mean(u.value()).as_grid(), {u}, [](Node& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      const std::size_t n = g->plane();
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t c = 0; c < g->channels(); ++c)
        for (std::size_t p = 0; p < n; ++p) (*g)[c * n + p] += self.grad[c] * inv;
    }
  });
}

inline Var finite_diff_x(const Var& a) {
  auto [gx, gy] = finite_diff_grads(a.value());
  return detail::record(std::move(gx), {a}, [](Node& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      FieldGrid zero(self.grad.channels(), self.grad.height(), self.grad.width());
      finite_diff_adjoint(self.grad, zero, *g);
    }
  });
}

inline Var finite_diff_y(const Var& a) {
  auto [gx, gy] = finite_diff_grads(a.value());
  return detail::record(std::move(gy), {a}, [](Node& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      FieldGrid zero(self.grad.channels(), self.grad.height(), self.grad.width());
      finite_diff_adjoint(zero, self.grad, *g);
    }
  });
}

/// Depthwise 3×3 correlation with a fixed kernel, replicate border.
inline Var filter3x3(const Var& a, std::array<double, 9> kernel) {
  const auto& av = a.value();
  const std::size_t h = av.height(), w = av.width();
  FieldGrid out(av.channels(), h, w);
  for (std::size_t c = 0; c < av.channels(); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            s += kernel[ky * 3 + kx] *
                 av(c, clamp_index(static_cast<long>(y) + ky - 1, h), clamp_index(static_cast<long>(x) + kx - 1, w));
        out(c, y, x) = s;
      }
  return detail::record(std::move(out), {a}, [kernel](Node& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    const std::size_t h = g->height(), w = g->width();
    for (std::size_t c = 0; c < g->channels(); ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double v = self.grad(c, y, x);
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
              (*g)(c, clamp_index(static_cast<long>(y) + ky - 1, h), clamp_index(static_cast<long>(x) + kx - 1, w)) +=
                  kernel[ky * 3 + kx] * v;
        }
  });
}

// ---------------------------------------------------------------------------
// Channel mixing

/// Per-position matrix product over channels: out(r, p) = Σ_k W[r,k]·x(k, p) + b[r].
/// W is 1×R×K, b (optional) is R×1×1.
inline Var linear(const Var& weight, const Var& x, const Var& bias = Var()) {
  const auto& wv = weight.value();
  const auto& xv = x.value();
  const std::size_t rows = wv.height(), cols = wv.width(), n = xv.plane();
  require(cols == xv.channels(), "ad::linear: weight columns must equal input channels");
  require(!bias.defined() || bias.value().size() == rows, "ad::linear: bias size mismatch");
  FieldGrid out(rows, xv.height(), xv.width());
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.channel(r).data();
    if (bias.defined()) std::fill(o, o + n, bias.value()[r]);
    for (std::size_t k = 0; k < cols; ++k) {
      const double wk = wv[r * cols + k];
      if (wk == 0.0) continue;
      const double* xi = xv.channel(k).data();
      for (std::size_t p = 0; p < n; ++p) o[p] += wk * xi[p];
    }
  }
  auto bw = [rows, cols, n, has_bias = bias.defined()](Node& self) {
    const auto& wv = detail::parent_value(self, 0);
    const auto& xv = detail::parent_value(self, 1);
    auto* gw = detail::parent_grad(self, 0);
    auto* gx = detail::parent_grad(self, 1);
    auto* gb = has_bias ? detail::parent_grad(self, 2) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.channel(r).data();
      if (gb) {
        double acc = 0.0;
        for (std::size_t p = 0; p < n; ++p) acc += g[p];
        (*gb)[r] += acc;
      }
      for (std::size_t k = 0; k < cols; ++k) {
        const double* xi = xv.channel(k).data();
        if (gw) {
          double acc = 0.0;
          for (std::size_t p = 0; p < n; ++p) acc += g[p] * xi[p];
          (*gw)[r * cols + k] += acc;
        }
        if (gx) {
          const double wk = wv[r * cols + k];
          double* gxi = gx->channel(k).data();
          for (std::size_t p = 0; p < n; ++p) gxi[p] += wk * g[p];
        }
      }
    }
  };
  if (bias.defined()) return detail::record(std::move(out), {weight, x, bias}, std::move(bw));
  return detail::record(std::move(out), {weight, x}, std::move(bw));
}

/// Non-overlapping p×p patches folded into channels: out(ci·p²+ky·p+kx, i, j) = x(ci, i·p+ky, j·p+kx).
inline Var space_to_depth(const Var& x, std::size_t p) {
  const auto& xv = x.value();
  require(p >= 1 && xv.height() % p == 0 && xv.width() % p == 0,
          "space_to_depth: patch size must divide height and width");
  const std::size_t oh = xv.height() / p, ow = xv.width() / p;
  FieldGrid out(xv.channels() * p * p, oh, ow);
  for (std::size_t c = 0; c < xv.channels(); ++c)
    for (std::size_t ky = 0; ky < p; ++ky)
      for (std::size_t kx = 0; kx < p; ++kx)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j) out((c * p + ky) * p + kx, i, j) = xv(c, i * p + ky, j * p + kx);
  return detail::record(std::move(out), {x}, [p, oh, ow](Node& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    for (std::size_t c = 0; c < g->channels(); ++c)
      for (std::size_t ky = 0; ky < p; ++ky)
        for (std::size_t kx = 0; kx < p; ++kx)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) (*g)(c, i * p + ky, j * p + kx) += self.grad((c * p + ky) * p + kx, i, j);
  });
}

namespace detail {

/// Plane of x channel c shifted by (dy, dx) with replicate border.
inline void shifted_plane(const FieldGrid& x, std::size_t c, int dy, int dx, std::vector<double>& out) {
  const std::size_t h = x.height(), w = x.width();
  out.resize(h * w);
  const double* in = x.channel(c).data();
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = clamp_index(static_cast<long>(y) + dy, h);
    for (std::size_t xx = 0; xx < w; ++xx) out[y * w + xx] = in[sy * w + clamp_index(static_cast<long>(xx) + dx, w)];
  }
}

}  // namespace detail

/// 3×3 same-size convolution with replicate border. Weight is 1×Cout×(Cin·9),
/// column index ci·9 + ky·3 + kx; bias is Cout×1×1.
inline Var conv3x3(const Var& x, const Var& weight, const Var& bias) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const std::size_t cin = xv.channels(), cout = wv.height(), n = xv.plane();
  require(wv.width() == cin * 9, "ad::conv3x3: weight must be Cout x (Cin*9)");
  require(bias.value().size() == cout, "ad::conv3x3: bias size mismatch");
  FieldGrid out(cout, xv.height(), xv.width());
  for (std::size_t o = 0; o < cout; ++o) {
    double* op = out.channel(o).data();
    std::fill(op, op + n, bias.value()[o]);
  }
  std::vector<double> plane;
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (int k = 0; k < 9; ++k) {
      detail::shifted_plane(xv, ci, k / 3 - 1, k % 3 - 1, plane);
      for (std::size_t o = 0; o < cout; ++o) {
        const double wk = wv[o * cin * 9 + ci * 9 + static_cast<std::size_t>(k)];
        double* op = out.channel(o).data();
        for (std::size_t p = 0; p < n; ++p) op[p] += wk * plane[p];
      }
    }
  return detail::record(std::move(out), {x, weight, bias}, [cin, cout, n](Node& self) {
    const auto& xv = detail::parent_value(self, 0);
    const auto& wv = detail::parent_value(self, 1);
    auto* gx = detail::parent_grad(self, 0);
    auto* gw = detail::parent_grad(self, 1);
    auto* gb = detail::parent_grad(self, 2);
    if (gb)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = 0.0;
        for (double g : self.grad.channel(o)) acc += g;
        (*gb)[o] += acc;
      }
    const std::size_t h = xv.height(), w = xv.width();
    std::vector<double> plane, dplane(n);
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (int k = 0; k < 9; ++k) {
        const std::size_t col = ci * 9 + static_cast<std::size_t>(k);
        if (gw) {
          detail::shifted_plane(xv, ci, k / 3 - 1, k % 3 - 1, plane);
          for (std::size_t o = 0; o < cout; ++o) {
            const double* g = self.grad.channel(o).data();
            double acc = 0.0;
            for (std::size_t p = 0; p < n; ++p) acc += g[p] * plane[p];
            (*gw)[o * cin * 9 + col] += acc;
          }
        }
        if (gx) {
          std::fill(dplane.begin(), dplane.end(), 0.0);
          for (std::size_t o = 0; o < cout; ++o) {
            const double wk = wv[o * cin * 9 + col];
            const double* g = self.grad.channel(o).data();
            for (std::size_t p = 0; p < n; ++p) dplane[p] += wk * g[p];
          }
          double* gxc = gx->channel(ci).data();
          const int dy = k / 3 - 1, dx = k % 3 - 1;
          for (std::size_t y = 0; y < h; ++y) {
            const std::size_t sy = clamp_index(static_cast<long>(y) + dy, h);
            for (std::size_t xx = 0; xx < w; ++xx)
              gxc[sy * w + clamp_index(static_cast<long>(xx) + dx, w)] += dplane[y * w + xx];
          }
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Normalization

inline Var rms_norm(const Var& u, const Var& gains, double eps) {
  return detail::record(fluidlab::rms_norm(u.value(), gains.value().values(), eps), {u, gains},
                        [eps](Node& self) {
    const auto& x = detail::parent_value(self, 0);
    const auto& gam = detail::parent_value(self, 1);
    auto* gx = detail::parent_grad(self, 0);
    auto* gg = detail::parent_grad(self, 1);
    const std::size_t cs = x.channels(), n = x.plane();
    for (std::size_t p = 0; p < n; ++p) {
      double ms = 0.0;
      for (std::size_t c = 0; c < cs; ++c) ms += x[c * n + p] * x[c * n + p];
      ms = ms / static_cast<double>(cs) + eps;
      if (ms == 0.0) continue;
      const double r = 1.0 / std::sqrt(ms);
      double dot = 0.0;
      for (std::size_t c = 0; c < cs; ++c) dot += self.grad[c * n + p] * gam[c] * x[c * n + p];
      const double k = r * r * r * dot / static_cast<double>(cs);
      for (std::size_t c = 0; c < cs; ++c) {
        const double g = self.grad[c * n + p];
        if (gx) (*gx)[c * n + p] += r * gam[c] * g - k * x[c * n + p];
        if (gg) (*gg)[c] += g * x[c * n + p] * r;
      }
    }
  });
}

/// Group normalization with per-channel affine (gamma, beta are C×1×1).
inline Var group_norm(const Var& u, const Var& gamma, const Var& beta, std::size_t groups, double eps) {
  const auto& x = u.value();
  const std::size_t cs = x.channels(), n = x.plane();
  require(groups >= 1 && cs % groups == 0, "ad::group_norm: channels must be divisible by groups");
  const std::size_t per = cs / groups;
  const double count = static_cast<double>(per * n);
  FieldGrid out(cs, x.height(), x.width());
  for (std::size_t g = 0; g < groups; ++g) {
    double mean = 0.0;
    for (std::size_t c = g * per; c < (g + 1) * per; ++c)
      for (double v : x.channel(c)) mean += v;
    mean /= count;
    double var = 0.0;
    for (std::size_t c = g * per; c < (g + 1) * per; ++c)
      for (double v : x.channel(c)) var += (v - mean) * (v - mean);
    var /= count;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = g * per; c < (g + 1) * per; ++c)
      for (std::size_t p = 0; p < n; ++p)
        out[c * n + p] = (x[c * n + p] - mean) * inv * gamma.value()[c] + beta.value()[c];
  }
  return detail::record(std::move(out), {u, gamma, beta}, [groups, per, n, count, eps](Node& self) {
    const auto& x = detail::parent_value(self, 0);
    const auto& gam = detail::parent_value(self, 1);
    auto* gx = detail::parent_grad(self, 0);
    auto* gg = detail::parent_grad(self, 1);
    auto* gb = detail::parent_grad(self, 2);
    for (std::size_t g = 0; g < groups; ++g) {
      double mean = 0.0;
      for (std::size_t c = g * per; c < (g + 1) * per; ++c)
        for (double v : x.channel(c)) mean += v;
      mean /= count;
      double var = 0.0;
      for (std::size_t c = g * per; c < (g + 1) * per; ++c)
        for (double v : x.channel(c)) var += (v - mean) * (v - mean);
      var /= count;
      const double inv = 1.0 / std::sqrt(var + eps);
      double sum_d = 0.0, sum_dx = 0.0;
      for (std::size_t c = g * per; c < (g + 1) * per; ++c)
        for (std::size_t p = 0; p < n; ++p) {
          const double xhat = (x[c * n + p] - mean) * inv;
          const double go = self.grad[c * n + p];
          const double d = go * gam[c];
          sum_d += d;
          sum_dx += d * xhat;
          if (gg) (*gg)[c] += go * xhat;
          if (gb) (*gb)[c] += go;
        }
      if (!gx) continue;
      const double md = sum_d / count, mdx = sum_dx / count;
      for (std::size_t c = g * per; c < (g + 1) * per; ++c)
        for (std::size_t p = 0; p < n; ++p) {
          const double xhat = (x[c * n + p] - mean) * inv;
          const double d = self.grad[c * n + p] * gam[c];
          (*gx)[c * n + p] += inv * (d - md - xhat * mdx);
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Lateral inhibition

/// Per position, channel c scaled by max(min_factor, 1 − β(1 − |z_c|/(max|z| + guard))).
inline Var lateral_inhibition(const Var& z, double beta, double min_factor, double guard = 1e-6) {
  const auto& zv = z.value();
  const std::size_t cs = zv.channels(), n = zv.plane();
  FieldGrid out = zv;
  for (std::size_t p = 0; p < n; ++p) {
    double mx = 0.0;
    for (std::size_t c = 0; c < cs; ++c) mx = std::max(mx, std::abs(zv[c * n + p]));
    const double denom = mx + guard;
    for (std::size_t c = 0; c < cs; ++c) {
      const double f = 1.0 - beta * (1.0 - std::abs(zv[c * n + p]) / denom);
      out[c * n + p] *= std::max(min_factor, f);
    }
  }
  return detail::record(std::move(out), {z}, [beta, min_factor, guard](Node& self) {
    auto* gz = detail::parent_grad(self, 0);
    if (!gz) return;
    const auto& zv = detail::parent_value(self, 0);
    const std::size_t cs = zv.channels(), n = zv.plane();
    for (std::size_t p = 0; p < n; ++p) {
      std::size_t arg = 0;
      double mx = -1.0;
      for (std::size_t c = 0; c < cs; ++c) {
        const double a = std::abs(zv[c * n + p]);
        if (a > mx) {
          mx = a;
          arg = c;
        }
      }
      const double denom = mx + guard;
      const double zm = zv[arg * n + p];
      const double sign_m = zm > 0.0 ? 1.0 : (zm < 0.0 ? -1.0 : 0.0);
      for (std::size_t c = 0; c < cs; ++c) {
        const double zc = zv[c * n + p];
        const double g = self.grad[c * n + p];
        const double f = 1.0 - beta * (1.0 - std::abs(zc) / denom);
        if (f < min_factor) {
          (*gz)[c * n + p] += g * min_factor;
          continue;
        }
        (*gz)[c * n + p] += g * ((1.0 - beta) + 2.0 * beta * std::abs(zc) / denom);
        (*gz)[arg * n + p] -= g * beta * zc * std::abs(zc) / (denom * denom) * sign_m;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions to scalars

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return detail::record(make_scalar(s), {a}, [](Node& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (double& v : g->values()) v += self.grad[0];
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Mean squared difference to a fixed target.
inline Var mse(const Var& a, const FieldGrid& target) {
  require_same_shape(a.value(), target, "ad::mse");
  const double inv = 1.0 / static_cast<double>(target.size());
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = a.value()[i] - target[i];
    s += d * d;
  }
  return detail::record(make_scalar(s * inv), {a}, [target, inv](Node& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      const auto& av = detail::parent_value(self, 0);
      for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += self.grad[0] * 2.0 * (av[k] - target[k]) * inv;
    }
  });
}

/// Mean of |a|; subgradient 0 at zero.
inline Var mean_abs(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) s += std::abs(v);
  return detail::record(make_scalar(s * inv), {a}, [inv](Node& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      const auto& av = detail::parent_value(self, 0);
      for (std::size_t k = 0; k < g->size(); ++k) {
        const double sgn = av[k] > 0.0 ? 1.0 : (av[k] < 0.0 ? -1.0 : 0.0);
        (*g)[k] += self.grad[0] * sgn * inv;
      }
    }
  });
}

/// (1/C)·Σ_c max(0, target − std_c) with population std over each channel plane.
inline Var variance_hinge(const Var& z, double target) {
  const auto& zv = z.value();
  const std::size_t cs = zv.channels(), n = zv.plane();
  double loss = 0.0;
  for (std::size_t c = 0; c < cs; ++c) {
    double m = 0.0;
    for (double v : zv.channel(c)) m += v;
    m /= static_cast<double>(n);
    double var = 0.0;
    for (double v : zv.channel(c)) var += (v - m) * (v - m);
    loss += std::max(0.0, target - std::sqrt(var / static_cast<double>(n)));
  }
  return detail::record(make_scalar(loss / static_cast<double>(cs)), {z}, [target, cs, n](Node& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    const auto& zv = detail::parent_value(self, 0);
    for (std::size_t c = 0; c < cs; ++c) {
      double m = 0.0;
      for (double v : zv.channel(c)) m += v;
      m /= static_cast<double>(n);
      double var = 0.0;
      for (double v : zv.channel(c)) var += (v - m) * (v - m);
      const double sd = std::sqrt(var / static_cast<double>(n));
      if (!(target - sd > 0.0) || sd == 0.0) continue;
      const double k = -self.grad[0] / static_cast<double>(cs) / (static_cast<double>(n) * sd);
      for (std::size_t p = 0; p < n; ++p) (*g)[c * n + p] += k * (zv[c * n + p] - m);
    }
  });
}

// ---------------------------------------------------------------------------
// Spectra

namespace detail {

/// Unnormalized 2D DFT of a complex plane with exponent sign `sign` (−1 forward).
inline std::vector<std::complex<double>> dft2d_complex(const std::vector<std::complex<double>>& in,
                                                      std::size_t h, std::size_t w, double sign) {
  using cd = std::complex<double>;
  std::vector<cd> tw_w(w), tw_h(h);
  for (std::size_t k = 0; k < w; ++k)
    tw_w[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(w));
  for (std::size_t k = 0; k < h; ++k)
    tw_h[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(h));
  std::vector<cd> rows(h * w), out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t kx = 0; kx < w; ++kx) {
      cd s = 0.0;
      for (std::size_t x = 0; x < w; ++x) s += in[y * w + x] * tw_w[(kx * x) % w];
      rows[y * w + kx] = s;
    }
  for (std::size_t ky = 0; ky < h; ++ky)
    for (std::size_t kx = 0; kx < w; ++kx) {
      cd s = 0.0;
      for (std::size_t y = 0; y < h; ++y) s += rows[y * w + kx] * tw_h[(ky * y) % h];
      out[ky * w + kx] = s;
    }
  return out;
}

}  // namespace detail

/// log(1 + |DFT|) per channel plane.
inline Var dft_log_magnitude(const Var& a) {
  const auto& av = a.value();
  const std::size_t h = av.height(), w = av.width();
  FieldGrid out(av.channels(), h, w);
  for (std::size_t c = 0; c < av.channels(); ++c) {
    const auto f = dft2d(av.channel(c), h, w);
    for (std::size_t k = 0; k < h * w; ++k) out.channel(c)[k] = std::log1p(std::abs(f[k]));
  }
  return detail::record(std::move(out), {a}, [h, w](Node& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    const auto& av = detail::parent_value(self, 0);
    for (std::size_t c = 0; c < av.channels(); ++c) {
      const auto f = dft2d(av.channel(c), h, w);
      std::vector<std::complex<double>> gf(h * w);
      for (std::size_t k = 0; k < h * w; ++k) {
        const double mag = std::abs(f[k]);
        if (mag == 0.0) continue;
        gf[k] = self.grad.channel(c)[k] / (1.0 + mag) * (f[k] / mag);
      }
      const auto back = detail::dft2d_complex(gf, h, w, +1.0);
      for (std::size_t k = 0; k < h * w; ++k) g->channel(c)[k] += back[k].real();
    }
  });
}

}  // namespace fluidlab::ad

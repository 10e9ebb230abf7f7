#pragma once

#include "vsr/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace vsr {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over Tensor<T>. Graphs are dynamic: every op records
// its parents and a backprop closure on a shared node. Node ids grow
// monotonically, so descending id order is a valid reverse topological order.
// ---------------------------------------------------------------------------

template <typename T>
class Var;

namespace detail {
inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

// Thread-local switch: while disabled, ops keep values but record no parents
// or closures, so intermediate graphs are not retained (inference mode).
inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}
}  // namespace detail

struct NoGrad {
  bool prev;
  NoGrad() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGrad() { detail::grad_mode() = prev; }
  NoGrad(const NoGrad&) = delete;
};

template <typename T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;
  bool requires_grad = false;
  bool grad_alloc = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  Tensor<T>& ensure_grad() {
    if (!grad_alloc) {
      grad = Tensor<T>::zeros_like(val);
      grad_alloc = true;
    }
    return grad;
  }
  void clear_grad() {
    grad_alloc = false;
    grad = Tensor<T>();
  }
};

template <typename T>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<T> v, bool requires_grad) {
    Var out;
    out.n_ = std::make_shared<Node<T>>();
    out.n_->val = std::move(v);
    out.n_->requires_grad = requires_grad;
    out.n_->id = detail::next_node_id();
    return out;
  }
  static Var param(Tensor<T> v) { return leaf(std::move(v), true); }
  static Var constant(Tensor<T> v) { return leaf(std::move(v), false); }
  static Var scalar(T v) { return constant(Tensor<T>::scalar(v)); }

  explicit operator bool() const { return n_ != nullptr; }

  const Tensor<T>& value() const { return n_->val; }
  Tensor<T>& mutable_value() { return n_->val; }
  const Tensor<T>& grad() const { return n_->grad; }
  bool has_grad() const { return n_->grad_alloc; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  void set_requires_grad(bool on) { n_->requires_grad = on; }
  void clear_grad() { n_->clear_grad(); }
  std::shared_ptr<Node<T>> node() const { return n_; }

  Var detach() const { return constant(n_->val); }

  T item() const { return n_->val.item(); }

 private:
  std::shared_ptr<Node<T>> n_;
};

/// Record a new op node. `back(node)` must scatter node.grad into the
/// ensure_grad() of every parent that requires a gradient.
template <typename T>
Var<T> make_op(Tensor<T> val, std::vector<Var<T>> parents, std::function<void(Node<T>&)> back) {
  bool need = false;
  if (detail::grad_mode())
    for (const auto& p : parents) need = need || p.requires_grad();
  Var<T> out = Var<T>::leaf(std::move(val), need);
  if (need) {
    auto n = out.node();
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(back);
  }
  return out;
}

/// Backpropagate from a scalar. Gradients accumulate into every reachable
/// node that requires them; call clear_grad on parameters between steps.
template <typename T>
void backward(const Var<T>& root) {
  require(root.value().size() == 1, "backward: root must be scalar");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<const Node<T>*> seen;
  std::vector<Node<T>*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

  root.node()->ensure_grad().data.setConstant(T(1));
  for (Node<T>* n : order) {
    if (n->backprop && n->grad_alloc) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor<T> v = a.value();
  v.data += b.value().data;
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& n) {
    for (int i = 0; i < 2; ++i)
      if (n.parents[i]->requires_grad) n.parents[i]->ensure_grad().data += n.grad.data;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor<T> v = a.value();
  v.data -= b.value().data;
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad().data += n.grad.data;
    if (n.parents[1]->requires_grad) n.parents[1]->ensure_grad().data -= n.grad.data;
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor<T> v = a.value();
  v.data *= b.value().data;
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->ensure_grad().data += n.grad.data * n.parents[1]->val.data;
    if (n.parents[1]->requires_grad)
      n.parents[1]->ensure_grad().data += n.grad.data * n.parents[0]->val.data;
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.value(), b.value(), "div");
  Tensor<T> v = a.value();
  v.data /= b.value().data;
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->ensure_grad().data += n.grad.data / n.parents[1]->val.data;
    if (n.parents[1]->requires_grad)
      n.parents[1]->ensure_grad().data -=
          n.grad.data * n.parents[0]->val.data / n.parents[1]->val.data.square();
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T k) {
  Tensor<T> v = a.value();
  v.data *= k;
  return make_op<T>(std::move(v), {a}, [k](Node<T>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad().data += n.grad.data * k;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T k) {
  Tensor<T> v = a.value();
  v.data += k;
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad().data += n.grad.data;
  });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return sub(a, b);
}
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  return mul(a, b);
}
template <typename T>
Var<T> operator*(T k, const Var<T>& a) {
  return scale(a, k);
}
template <typename T>
Var<T> operator-(T k, const Var<T>& a) {
  return add_scalar(neg(a), k);
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> v = a.value();
  v.data = v.data.max(T(0));
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad().data +=
        n.grad.data * (n.parents[0]->val.data > T(0)).template cast<T>();
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Tensor<T> v = a.value();
  v.data = v.data.max(v.data * slope);
  return make_op<T>(std::move(v), {a}, [slope](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    const auto& x = n.parents[0]->val.data;
    n.parents[0]->ensure_grad().data +=
        n.grad.data * ((x > T(0)).template cast<T>() + (x <= T(0)).template cast<T>() * slope);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> v = a.value();
  v.data = T(1) / (T(1) + (-v.data).exp());
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad().data += n.grad.data * n.val.data * (T(1) - n.val.data);
  });
}

template <typename T>
Var<T> exp_of(const Var<T>& a) {
  Tensor<T> v = a.value();
  v.data = v.data.exp();
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad().data += n.grad.data * n.val.data;
  });
}

/// log(max(x, floor)); gradient is zero on the floored region.
template <typename T>
Var<T> log_floored(const Var<T>& a, T floor_val) {
  Tensor<T> v = a.value();
  v.data = v.data.max(floor_val).log();
  return make_op<T>(std::move(v), {a}, [floor_val](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    const auto& x = n.parents[0]->val.data;
    n.parents[0]->ensure_grad().data +=
        n.grad.data * (x > floor_val).template cast<T>() / x.max(floor_val);
  });
}

template <typename T>
Var<T> sqrt_of(const Var<T>& a) {
  Tensor<T> v = a.value();
  v.data = v.data.sqrt();
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad().data += n.grad.data / (T(2) * n.val.data);
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Tensor<T> v = a.value();
  v.data = v.data.square();
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->ensure_grad().data += n.grad.data * T(2) * n.parents[0]->val.data;
  });
}

/// |x|; subgradient at 0 is taken as 0.
template <typename T>
Var<T> abs_of(const Var<T>& a) {
  Tensor<T> v = a.value();
  v.data = v.data.abs();
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    const auto& x = n.parents[0]->val.data;
    n.parents[0]->ensure_grad().data +=
        n.grad.data * ((x > T(0)).template cast<T>() - (x < T(0)).template cast<T>());
  });
}

/// clamp to [0,1]; gradient passes only where the input is strictly inside.
template <typename T>
Var<T> clamp01(const Var<T>& a) {
  Tensor<T> v = a.value();
  v.data = v.data.min(T(1)).max(T(0));
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    const auto& x = n.parents[0]->val.data;
    n.parents[0]->ensure_grad().data +=
        n.grad.data * ((x > T(0)) && (x < T(1))).template cast<T>();
  });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Tensor<T> v = Tensor<T>::scalar(a.value().data.sum());
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad().data += n.grad.data[0];
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const T inv = T(1) / T(a.value().size());
  Tensor<T> v = Tensor<T>::scalar(a.value().data.sum() * inv);
  return make_op<T>(std::move(v), {a}, [inv](Node<T>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad().data += n.grad.data[0] * inv;
  });
}

/// Mean over the spatial extent of each channel: (h,w,c) -> (1,1,c).
template <typename T>
Var<T> channel_mean(const Var<T>& a) {
  const auto& x = a.value();
  const T inv = T(1) / T(std::int64_t(x.h) * x.w);
  Tensor<T> v(1, 1, x.c);
  for (int ch = 0; ch < x.c; ++ch) v.data[ch] = x.plane(ch).sum() * inv;
  return make_op<T>(std::move(v), {a}, [inv](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ch = 0; ch < g.c; ++ch) g.plane(ch) += n.grad.data[ch] * inv;
  });
}

/// Per-pixel sum across channels: (h,w,c) -> (h,w,1).
template <typename T>
Var<T> pixel_sum_channels(const Var<T>& a) {
  const auto& x = a.value();
  Tensor<T> v(x.h, x.w, 1);
  for (int ch = 0; ch < x.c; ++ch) v.plane(0) += x.plane(ch);
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ch = 0; ch < g.c; ++ch) g.plane(ch) += n.grad.plane(0);
  });
}

template <typename T>
Var<T> pixel_mean_channels(const Var<T>& a) {
  return scale(pixel_sum_channels(a), T(1) / T(a.value().c));
}

/// Multiply (h,w,c) by a per-channel vector (1,1,c).
template <typename T>
Var<T> bmul_channel(const Var<T>& a, const Var<T>& k) {
  const auto& x = a.value();
  const auto& s = k.value();
  require(s.h == 1 && s.w == 1 && s.c == x.c, "bmul_channel: scale must be (1,1,c)");
  Tensor<T> v = x;
  for (int ch = 0; ch < x.c; ++ch) v.plane(ch) *= s.data[ch];
  return make_op<T>(std::move(v), {a, k}, [](Node<T>& n) {
    const auto& x = n.parents[0]->val;
    const auto& s = n.parents[1]->val;
    if (n.parents[0]->requires_grad) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (int ch = 0; ch < x.c; ++ch) g.plane(ch) += n.grad.plane(ch) * s.data[ch];
    }
    if (n.parents[1]->requires_grad) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (int ch = 0; ch < x.c; ++ch) g.data[ch] += (n.grad.plane(ch) * x.plane(ch)).sum();
    }
  });
}

/// Add a per-channel vector (1,1,c) to (h,w,c).
template <typename T>
Var<T> badd_channel(const Var<T>& a, const Var<T>& k) {
  const auto& x = a.value();
  const auto& s = k.value();
  require(s.h == 1 && s.w == 1 && s.c == x.c, "badd_channel: bias must be (1,1,c)");
  Tensor<T> v = x;
  for (int ch = 0; ch < x.c; ++ch) v.plane(ch) += s.data[ch];
  return make_op<T>(std::move(v), {a, k}, [](Node<T>& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->ensure_grad().data += n.grad.data;
    if (n.parents[1]->requires_grad) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (int ch = 0; ch < g.c; ++ch) g.data[ch] += n.grad.plane(ch).sum();
    }
  });
}

/// Multiply (h,w,c) by a per-pixel map (h,w,1), broadcast across channels.
template <typename T>
Var<T> bmul_pixel(const Var<T>& a, const Var<T>& m) {
  const auto& x = a.value();
  const auto& s = m.value();
  require(s.h == x.h && s.w == x.w && s.c == 1, "bmul_pixel: map must be (h,w,1)");
  Tensor<T> v = x;
  for (int ch = 0; ch < x.c; ++ch) v.plane(ch) *= s.plane(0);
  return make_op<T>(std::move(v), {a, m}, [](Node<T>& n) {
    const auto& x = n.parents[0]->val;
    const auto& s = n.parents[1]->val;
    if (n.parents[0]->requires_grad) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (int ch = 0; ch < x.c; ++ch) g.plane(ch) += n.grad.plane(ch) * s.plane(0);
    }
    if (n.parents[1]->requires_grad) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (int ch = 0; ch < x.c; ++ch) g.plane(0) += n.grad.plane(ch) * x.plane(ch);
    }
  });
}

// ---------------------------------------------------------------------------
// Channel concat / slice / softmax
// ---------------------------------------------------------------------------

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  int h = parts[0].value().h, w = parts[0].value().w, c = 0;
  for (const auto& p : parts) {
    require(p.value().h == h && p.value().w == w, "concat_channels: spatial dims differ");
    c += p.value().c;
  }
  Tensor<T> v(h, w, c);
  int off = 0;
  for (const auto& p : parts) {
    for (int ch = 0; ch < p.value().c; ++ch) v.plane(off + ch) = p.value().plane(ch);
    off += p.value().c;
  }
  return make_op<T>(std::move(v), parts, [](Node<T>& n) {
    int off = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) {
        Tensor<T>& g = p->ensure_grad();
        for (int ch = 0; ch < p->val.c; ++ch) g.plane(ch) += n.grad.plane(off + ch);
      }
      off += p->val.c;
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, int from, int count) {
  const auto& x = a.value();
  require(from >= 0 && count >= 1 && from + count <= x.c, "slice_channels: range out of bounds");
  Tensor<T> v(x.h, x.w, count);
  for (int ch = 0; ch < count; ++ch) v.plane(ch) = x.plane(from + ch);
  return make_op<T>(std::move(v), {a}, [from, count](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ch = 0; ch < count; ++ch) g.plane(from + ch) += n.grad.plane(ch);
  });
}

/// Per-pixel softmax across the channel dimension.
template <typename T>
Var<T> softmax_channels(const Var<T>& a) {
  const auto& x = a.value();
  Tensor<T> v(x.h, x.w, x.c);
  for (int y = 0; y < x.h; ++y)
    for (int xx = 0; xx < x.w; ++xx) {
      T m = x(y, xx, 0);
      for (int ch = 1; ch < x.c; ++ch) m = std::max(m, x(y, xx, ch));
      T s = T(0);
      for (int ch = 0; ch < x.c; ++ch) {
        T e = std::exp(x(y, xx, ch) - m);
        v(y, xx, ch) = e;
        s += e;
      }
      for (int ch = 0; ch < x.c; ++ch) v(y, xx, ch) /= s;
    }
  return make_op<T>(std::move(v), {a}, [](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& y = n.val;
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx) {
        T dot = T(0);
        for (int ch = 0; ch < y.c; ++ch) dot += n.grad(yy, xx, ch) * y(yy, xx, ch);
        for (int ch = 0; ch < y.c; ++ch)
          g(yy, xx, ch) += y(yy, xx, ch) * (n.grad(yy, xx, ch) - dot);
      }
  });
}

// ---------------------------------------------------------------------------
// Dense / conv2d / gram
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
Eigen::Map<const MatRM<T>> as_matrix(const Tensor<T>& t) {
  return Eigen::Map<const MatRM<T>>(t.data.data(), t.h, t.w);
}
template <typename T>
Eigen::Map<MatRM<T>> as_matrix(Tensor<T>& t) {
  return Eigen::Map<MatRM<T>>(t.data.data(), t.h, t.w);
}

// Patch matrix: rows = cin*kh*kw with row index (ch*kh+ky)*kw+kx, cols = output
// positions row-major. Out-of-bounds inputs contribute zero.
template <typename T>
Mat<T> im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int ho, int wo) {
  Mat<T> col(std::int64_t(x.c) * kh * kw, std::int64_t(ho) * wo);
  col.setZero();
  for (int ch = 0; ch < x.c; ++ch) {
    auto pl = x.plane(ch);
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const int r = (ch * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            col(r, std::int64_t(oy) * wo + ox) = pl(iy, ix);
          }
        }
      }
  }
  return col;
}

template <typename T>
void col2im_add(const Mat<T>& col, Tensor<T>& gx, int kh, int kw, int stride, int pad, int ho,
                int wo) {
  for (int ch = 0; ch < gx.c; ++ch) {
    auto pl = gx.plane(ch);
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const int r = (ch * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= gx.h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= gx.w) continue;
            pl(iy, ix) += col(r, std::int64_t(oy) * wo + ox);
          }
        }
      }
  }
}
}  // namespace detail

/// 2-D convolution with zero padding. Weights are stored as a (cout,
/// cin*kh*kw, 1) tensor with patch index (ch*kh+ky)*kw+kx; bias is (1,1,cout).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int cin, int kh, int kw,
              int stride, int pad) {
  const Tensor<T>& in = x.value();
  const Tensor<T>& wt = weight.value();
  require(in.c == cin, "conv2d: input channels mismatch");
  require(wt.w == cin * kh * kw && wt.c == 1, "conv2d: weight shape mismatch");
  const int cout = wt.h;
  require(bias.value().c == cout && bias.value().h == 1 && bias.value().w == 1,
          "conv2d: bias shape mismatch");
  const int ho = (in.h + 2 * pad - kh) / stride + 1;
  const int wo = (in.w + 2 * pad - kw) / stride + 1;
  require(ho >= 1 && wo >= 1, "conv2d: output would be empty");

  detail::Mat<T> col = detail::im2col(in, kh, kw, stride, pad, ho, wo);
  detail::Mat<T> out = detail::as_matrix(wt) * col;  // cout x (ho*wo)
  Tensor<T> v(ho, wo, cout);
  for (int ch = 0; ch < cout; ++ch) {
    Eigen::Map<detail::MatRM<T>>(v.data.data() + std::int64_t(ch) * ho * wo, 1, ho * wo) =
        out.row(ch);
    v.plane(ch) += bias.value().data[ch];
  }

  auto back = [cin, kh, kw, stride, pad, ho, wo, cout](Node<T>& n) {
    const Tensor<T>& in = n.parents[0]->val;
    const Tensor<T>& wt = n.parents[1]->val;
    detail::Mat<T> gout(cout, std::int64_t(ho) * wo);
    for (int ch = 0; ch < cout; ++ch)
      gout.row(ch) = Eigen::Map<const detail::MatRM<T>>(
          n.grad.data.data() + std::int64_t(ch) * ho * wo, 1, ho * wo);
    if (n.parents[1]->requires_grad) {
      // Recompute the patch matrix instead of caching it across the graph.
      detail::Mat<T> col = detail::im2col(in, kh, kw, stride, pad, ho, wo);
      detail::as_matrix(n.parents[1]->ensure_grad()) += gout * col.transpose();
    }
    if (n.parents[2]->requires_grad) {
      Tensor<T>& gb = n.parents[2]->ensure_grad();
      for (int ch = 0; ch < cout; ++ch) gb.data[ch] += gout.row(ch).sum();
    }
    if (n.parents[0]->requires_grad) {
      detail::Mat<T> gcol = detail::as_matrix(wt).transpose() * gout;
      detail::col2im_add(gcol, n.parents[0]->ensure_grad(), kh, kw, stride, pad, ho, wo);
    }
  };
  return make_op<T>(std::move(v), {x, weight, bias}, back);
}

/// Fully connected layer on the flattened input: weight (out, in, 1),
/// bias (1,1,out), result (1,1,out). Flattening follows tensor storage order.
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Tensor<T>& in = x.value();
  const Tensor<T>& wt = weight.value();
  require(wt.w == in.size() && wt.c == 1, "dense: weight shape mismatch");
  const int out_dim = wt.h;
  require(bias.value().c == out_dim, "dense: bias shape mismatch");
  Tensor<T> v(1, 1, out_dim);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> vv(v.data.data(), out_dim);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(in.data.data(), in.size());
  vv = detail::as_matrix(wt) * xv;
  v.data += bias.value().data;
  return make_op<T>(std::move(v), {x, weight, bias}, [out_dim](Node<T>& n) {
    const Tensor<T>& in = n.parents[0]->val;
    const Tensor<T>& wt = n.parents[1]->val;
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> g(n.grad.data.data(), out_dim);
    if (n.parents[1]->requires_grad) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(in.data.data(), in.size());
      detail::as_matrix(n.parents[1]->ensure_grad()) += g * xv.transpose();
    }
    if (n.parents[2]->requires_grad) n.parents[2]->ensure_grad().data += n.grad.data;
    if (n.parents[0]->requires_grad) {
      Tensor<T>& gx = n.parents[0]->ensure_grad();
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gxv(gx.data.data(), gx.size());
      gxv += detail::as_matrix(wt).transpose() * g;
    }
  });
}

/// Gram matrix of feature maps: F is (c, h*w) in storage order; returns
/// F F^T / (h*w*c) as a (c,c,1) tensor.
template <typename T>
Var<T> gram_matrix(const Var<T>& x) {
  const Tensor<T>& in = x.value();
  require(in.size() > 0, "gram_matrix: empty input");
  const std::int64_t hw = std::int64_t(in.h) * in.w;
  const T norm = T(1) / (T(hw) * T(in.c));
  Eigen::Map<const detail::MatRM<T>> f(in.data.data(), in.c, hw);
  Tensor<T> v(in.c, in.c, 1);
  detail::as_matrix(v) = (f * f.transpose()) * norm;
  return make_op<T>(std::move(v), {x}, [norm, hw](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    const Tensor<T>& in = n.parents[0]->val;
    Eigen::Map<const detail::MatRM<T>> f(in.data.data(), in.c, hw);
    auto g = detail::as_matrix(n.grad);
    Tensor<T>& gx = n.parents[0]->ensure_grad();
    Eigen::Map<detail::MatRM<T>> gf(gx.data.data(), in.c, hw);
    gf += ((g + g.transpose()) * f) * norm;
  });
}

// ---------------------------------------------------------------------------
// Helpers for composite graphs
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), "add_n: no inputs");
  Var<T> acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& xs) {
  return scale(add_n(xs), T(1) / T(xs.size()));
}

}  // namespace vsr

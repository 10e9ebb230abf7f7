#pragma once

#include "vsr/autograd.hpp"
#include "vsr/tensor.hpp"

#include <cmath>
#include <vector>

namespace vsr {

/// n sampling coordinates per output pixel plus their combination weights.
/// u holds horizontal offsets, v vertical offsets, w the weights; each is an
/// (h,w,n) tensor whose channel i is coordinate map i. Offsets are in output
/// pixel units, added to the output pixel's own integer coordinates. Weights
/// are not constrained here; normalization is the caller's business.
template <typename T>
struct FlowStack {
  Tensor<T> u, v, w;

  int n() const { return u.c; }
  int height() const { return u.h; }
  int width() const { return u.w; }

  void validate() const {
    require(u.c >= 1, "FlowStack: n must be >= 1");
    require(u.same_shape(v) && u.same_shape(w), "FlowStack: u/v/w shapes differ");
  }

  static FlowStack identity(int h, int w, int n) {
    FlowStack f;
    f.u = Tensor<T>::zeros(h, w, n);
    f.v = Tensor<T>::zeros(h, w, n);
    f.w = Tensor<T>::constant(h, w, n, T(1) / T(n));
    return f;
  }
};

namespace detail {

// Shared bilinear gather kernel with clamp-to-edge. Returns the four corner
// indices and interpolation fractions for one coordinate.
template <typename T>
struct BilinearCell {
  int i0, i1;
  T f;
  bool inside;  // coordinate within [0, n-1]; gradient is zero outside
};

template <typename T>
inline BilinearCell<T> bilinear_cell(T q, int n) {
  BilinearCell<T> c;
  c.inside = (q >= T(0) && q <= T(n - 1));
  T qc = std::min(std::max(q, T(0)), T(n - 1));
  c.i0 = int(std::floor(qc));
  if (c.i0 > n - 2) c.i0 = n - 2 < 0 ? 0 : n - 2;
  c.i1 = std::min(c.i0 + 1, n - 1);
  c.f = qc - T(c.i0);
  return c;
}

}  // namespace detail

/// Sample `img` at real-valued coordinates. x_coords/y_coords are (h,w,1) maps
/// in source pixel units; the output takes their spatial dims and the image's
/// channel count. Out-of-bounds coordinates clamp to the edge.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& img, const Tensor<T>& x_coords,
                          const Tensor<T>& y_coords) {
  check_same_shape(x_coords, y_coords, "bilinear_sample coords");
  require(x_coords.c == 1, "bilinear_sample: coordinate maps must have one channel");
  const int oh = x_coords.h, ow = x_coords.w;
  Tensor<T> out(oh, ow, img.c);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      auto cx = detail::bilinear_cell(x_coords(y, x, 0), img.w);
      auto cy = detail::bilinear_cell(y_coords(y, x, 0), img.h);
      for (int ch = 0; ch < img.c; ++ch) {
        const T v00 = img(cy.i0, cx.i0, ch), v10 = img(cy.i0, cx.i1, ch);
        const T v01 = img(cy.i1, cx.i0, ch), v11 = img(cy.i1, cx.i1, ch);
        out(y, x, ch) = (T(1) - cy.f) * ((T(1) - cx.f) * v00 + cx.f * v10) +
                        cy.f * ((T(1) - cx.f) * v01 + cx.f * v11);
      }
    }
  return out;
}

/// Multi-coordinate warp: sum_i w_i (.) img(x + u_i, y + v_i), weights
/// broadcast across channels. Output dims follow the flow maps.
template <typename T>
Tensor<T> multi_warp(const Tensor<T>& img, const FlowStack<T>& flow) {
  flow.validate();
  const int oh = flow.height(), ow = flow.width();
  Tensor<T> out(oh, ow, img.c);
  Tensor<T> xs(oh, ow, 1), ys(oh, ow, 1);
  for (int i = 0; i < flow.n(); ++i) {
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        xs(y, x, 0) = T(x) + flow.u(y, x, i);
        ys(y, x, 0) = T(y) + flow.v(y, x, i);
      }
    Tensor<T> s = bilinear_sample(img, xs, ys);
    for (int ch = 0; ch < img.c; ++ch) out.plane(ch) += s.plane(ch) * flow.w.plane(i);
  }
  return out;
}

/// Lossless space-to-channel rearrangement. Output channel for input
/// (dy,dx,ch) within each s x s block is (dy*s+dx)*c + ch: row-major within
/// the block, input channel fastest.
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, int s) {
  require(s >= 1, "space_to_depth: scale must be >= 1");
  require(x.h % s == 0 && x.w % s == 0, "space_to_depth: dims not divisible by scale");
  if (s == 1) return x;
  Tensor<T> out(x.h / s, x.w / s, x.c * s * s);
  for (int dy = 0; dy < s; ++dy)
    for (int dx = 0; dx < s; ++dx)
      for (int ch = 0; ch < x.c; ++ch) {
        const int oc = (dy * s + dx) * x.c + ch;
        for (int y = 0; y < out.h; ++y)
          for (int xx = 0; xx < out.w; ++xx) out(y, xx, oc) = x(y * s + dy, xx * s + dx, ch);
      }
  return out;
}

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, int s) {
  require(s >= 1, "depth_to_space: scale must be >= 1");
  require(x.c % (s * s) == 0, "depth_to_space: channels not divisible by s^2");
  if (s == 1) return x;
  const int c = x.c / (s * s);
  Tensor<T> out(x.h * s, x.w * s, c);
  for (int dy = 0; dy < s; ++dy)
    for (int dx = 0; dx < s; ++dx)
      for (int ch = 0; ch < c; ++ch) {
        const int ic = (dy * s + dx) * c + ch;
        for (int y = 0; y < x.h; ++y)
          for (int xx = 0; xx < x.w; ++xx) out(y * s + dy, xx * s + dx, ch) = x(y, xx, ic);
      }
  return out;
}

/// Nearest-neighbor upsampling: each pixel becomes an r x r block.
template <typename T>
Tensor<T> nn_upsample(const Tensor<T>& x, int r) {
  require(r >= 1, "nn_upsample: factor must be >= 1");
  if (r == 1) return x;
  Tensor<T> out(x.h * r, x.w * r, x.c);
  for (int ch = 0; ch < x.c; ++ch)
    for (int y = 0; y < out.h; ++y)
      for (int xx = 0; xx < out.w; ++xx) out(y, xx, ch) = x(y / r, xx / r, ch);
  return out;
}

/// Bilinear x s upsampling on the half-pixel grid (src = (dst+0.5)/s - 0.5).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int s) {
  require(s >= 1, "upsample_bilinear: factor must be >= 1");
  if (s == 1) return x;
  Tensor<T> xs(x.h * s, x.w * s, 1), ys(x.h * s, x.w * s, 1);
  const T inv = T(1) / T(s);
  for (int y = 0; y < x.h * s; ++y)
    for (int xx = 0; xx < x.w * s; ++xx) {
      xs(y, xx, 0) = (T(xx) + T(0.5)) * inv - T(0.5);
      ys(y, xx, 0) = (T(y) + T(0.5)) * inv - T(0.5);
    }
  return bilinear_sample(x, xs, ys);
}

// ---------------------------------------------------------------------------
// Autograd ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> bilinear_sample(const Var<T>& img, const Var<T>& x_coords, const Var<T>& y_coords) {
  Tensor<T> v = bilinear_sample(img.value(), x_coords.value(), y_coords.value());
  auto back = [](Node<T>& n) {
    const Tensor<T>& img = n.parents[0]->val;
    const Tensor<T>& xs = n.parents[1]->val;
    const Tensor<T>& ys = n.parents[2]->val;
    const bool gi = n.parents[0]->requires_grad;
    const bool gx = n.parents[1]->requires_grad;
    const bool gy = n.parents[2]->requires_grad;
    Tensor<T>* gimg = gi ? &n.parents[0]->ensure_grad() : nullptr;
    Tensor<T>* gxs = gx ? &n.parents[1]->ensure_grad() : nullptr;
    Tensor<T>* gys = gy ? &n.parents[2]->ensure_grad() : nullptr;
    for (int y = 0; y < xs.h; ++y)
      for (int x = 0; x < xs.w; ++x) {
        auto cx = detail::bilinear_cell(xs(y, x, 0), img.w);
        auto cy = detail::bilinear_cell(ys(y, x, 0), img.h);
        T dx_acc = T(0), dy_acc = T(0);
        for (int ch = 0; ch < img.c; ++ch) {
          const T g = n.grad(y, x, ch);
          if (g == T(0)) continue;
          const T v00 = img(cy.i0, cx.i0, ch), v10 = img(cy.i0, cx.i1, ch);
          const T v01 = img(cy.i1, cx.i0, ch), v11 = img(cy.i1, cx.i1, ch);
          if (gimg) {
            (*gimg)(cy.i0, cx.i0, ch) += g * (T(1) - cy.f) * (T(1) - cx.f);
            (*gimg)(cy.i0, cx.i1, ch) += g * (T(1) - cy.f) * cx.f;
            (*gimg)(cy.i1, cx.i0, ch) += g * cy.f * (T(1) - cx.f);
            (*gimg)(cy.i1, cx.i1, ch) += g * cy.f * cx.f;
          }
          dx_acc += g * ((T(1) - cy.f) * (v10 - v00) + cy.f * (v11 - v01));
          dy_acc += g * ((T(1) - cx.f) * (v01 - v00) + cx.f * (v11 - v10));
        }
        if (gxs && cx.inside) (*gxs)(y, x, 0) += dx_acc;
        if (gys && cy.inside) (*gys)(y, x, 0) += dy_acc;
      }
  };
  return make_op<T>(std::move(v), {img, x_coords, y_coords}, back);
}

template <typename T>
Var<T> coordinate_grid_x(int h, int w) {
  Tensor<T> t(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t(y, x, 0) = T(x);
  return Var<T>::constant(std::move(t));
}

template <typename T>
Var<T> coordinate_grid_y(int h, int w) {
  Tensor<T> t(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t(y, x, 0) = T(y);
  return Var<T>::constant(std::move(t));
}

/// Differentiable multi-coordinate warp; u/v/w are (h,w,n) Vars. Same math
/// and accumulation order as the plain overload.
template <typename T>
Var<T> multi_warp(const Var<T>& img, const Var<T>& u, const Var<T>& v, const Var<T>& w) {
  const int n = u.value().c;
  require(n >= 1, "multi_warp: n must be >= 1");
  check_same_shape(u.value(), v.value(), "multi_warp offsets");
  check_same_shape(u.value(), w.value(), "multi_warp weights");
  const int oh = u.value().h, ow = u.value().w;
  Var<T> gx = coordinate_grid_x<T>(oh, ow);
  Var<T> gy = coordinate_grid_y<T>(oh, ow);
  Var<T> acc;
  for (int i = 0; i < n; ++i) {
    Var<T> s = bilinear_sample(img, add(gx, slice_channels(u, i, 1)),
                               add(gy, slice_channels(v, i, 1)));
    Var<T> term = bmul_pixel(s, slice_channels(w, i, 1));
    acc = (i == 0) ? term : add(acc, term);
  }
  return acc;
}

template <typename T>
Var<T> space_to_depth(const Var<T>& x, int s) {
  Tensor<T> v = space_to_depth(x.value(), s);
  return make_op<T>(std::move(v), {x}, [s](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor<T> g = depth_to_space(n.grad, s);
    n.parents[0]->ensure_grad().data += g.data;
  });
}

template <typename T>
Var<T> depth_to_space(const Var<T>& x, int s) {
  Tensor<T> v = depth_to_space(x.value(), s);
  return make_op<T>(std::move(v), {x}, [s](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor<T> g = space_to_depth(n.grad, s);
    n.parents[0]->ensure_grad().data += g.data;
  });
}

template <typename T>
Var<T> nn_upsample(const Var<T>& x, int r) {
  Tensor<T> v = nn_upsample(x.value(), r);
  return make_op<T>(std::move(v), {x}, [r](Node<T>& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (int ch = 0; ch < g.c; ++ch)
      for (int y = 0; y < n.grad.h; ++y)
        for (int x = 0; x < n.grad.w; ++x) g(y / r, x / r, ch) += n.grad(y, x, ch);
  });
}

template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int s) {
  require(s >= 1, "upsample_bilinear: factor must be >= 1");
  if (s == 1) return x;
  const int h = x.value().h, w = x.value().w;
  Var<T> xs = Var<T>::constant([&] {
    Tensor<T> t(h * s, w * s, 1);
    const T inv = T(1) / T(s);
    for (int y = 0; y < h * s; ++y)
      for (int xx = 0; xx < w * s; ++xx) t(y, xx, 0) = (T(xx) + T(0.5)) * inv - T(0.5);
    return t;
  }());
  Var<T> ys = Var<T>::constant([&] {
    Tensor<T> t(h * s, w * s, 1);
    const T inv = T(1) / T(s);
    for (int y = 0; y < h * s; ++y)
      for (int xx = 0; xx < w * s; ++xx) t(y, xx, 0) = (T(y) + T(0.5)) * inv - T(0.5);
    return t;
  }());
  return bilinear_sample(x, xs, ys);
}

}  // namespace vsr

#pragma once

// Shared test helpers: finite-difference gradient checking and naive
// reference oracles. Oracles are deliberately written as direct loops,
// independent of the library implementations they check.

#include "vsr/autograd.hpp"
#include "vsr/tensor.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace vsrtest {

using vsr::Tensor;
using vsr::Var;

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

/// Central-difference gradient check of a scalar-valued graph builder.
/// Returns the worst relative error across all elements of all inputs.
inline double fd_check(
    const std::function<Var<double>(const std::vector<Var<double>>&)>& build,
    std::vector<Tensor<double>> inputs, double eps = 1e-5) {
  std::vector<Var<double>> leaves;
  for (auto& t : inputs) leaves.push_back(Var<double>::param(t));
  Var<double> loss = build(leaves);
  vsr::backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::int64_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> vs;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor<double> t = inputs[j];
          if (j == k) t.data[i] += delta;
          vs.push_back(Var<double>::constant(t));
        }
        return build(vs).item();
      };
      const double num = (eval(eps) - eval(-eps)) / (2.0 * eps);
      const double ana = leaves[k].has_grad() ? leaves[k].grad().data[i] : 0.0;
      const double denom = std::max({std::abs(num), std::abs(ana), 1e-8});
      worst = std::max(worst, std::abs(num - ana) / denom);
    }
  }
  return worst;
}

/// Naive 4-neighbor bilinear interpolation, clamp-to-edge, one pixel at a time.
template <typename T>
T oracle_sample_at(const Tensor<T>& img, T x, T y, int ch) {
  auto cl = [](T v, T lo, T hi) { return v < lo ? lo : (v > hi ? hi : v); };
  x = cl(x, T(0), T(img.w - 1));
  y = cl(y, T(0), T(img.h - 1));
  int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  int x1 = std::min(x0 + 1, img.w - 1), y1 = std::min(y0 + 1, img.h - 1);
  T fx = x - T(x0), fy = y - T(y0);
  return (T(1) - fy) * ((T(1) - fx) * img(y0, x0, ch) + fx * img(y0, x1, ch)) +
         fy * ((T(1) - fx) * img(y1, x0, ch) + fx * img(y1, x1, ch));
}

/// Brute-force multi-coordinate warp: per-pixel sum over coordinates.
template <typename T>
Tensor<T> oracle_multi_warp(const Tensor<T>& img, const Tensor<T>& u, const Tensor<T>& v,
                            const Tensor<T>& w) {
  Tensor<T> out(u.h, u.w, img.c);
  for (int y = 0; y < u.h; ++y)
    for (int x = 0; x < u.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        T acc = T(0);
        for (int i = 0; i < u.c; ++i)
          acc += w(y, x, i) * oracle_sample_at(img, T(x) + u(y, x, i), T(y) + v(y, x, i), ch);
        out(y, x, ch) = acc;
      }
  return out;
}

/// Direct (non-separable) 2-D convolution, zero padding.
template <typename T>
Tensor<T> oracle_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int cout,
                        int kh, int kw, int stride, int pad) {
  const int cin = x.c;
  const int ho = (x.h + 2 * pad - kh) / stride + 1;
  const int wo = (x.w + 2 * pad - kw) / stride + 1;
  Tensor<T> out(ho, wo, cout);
  for (int oc = 0; oc < cout; ++oc)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T acc = b.data[oc];
        for (int ic = 0; ic < cin; ++ic)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              int iy = oy * stride - pad + ky;
              int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
              acc += w(oc, (ic * kh + ky) * kw + kx, 0) * x(iy, ix, ic);
            }
        out(oy, ox, oc) = acc;
      }
  return out;
}

/// Triple-loop Gram matrix, normalized by h*w*c.
template <typename T>
Tensor<T> oracle_gram(const Tensor<T>& f) {
  Tensor<T> g(f.c, f.c, 1);
  for (int a = 0; a < f.c; ++a)
    for (int b = 0; b < f.c; ++b) {
      T acc = T(0);
      for (int y = 0; y < f.h; ++y)
        for (int x = 0; x < f.w; ++x) acc += f(y, x, a) * f(y, x, b);
      g(a, b, 0) = acc / (T(f.h) * T(f.w) * T(f.c));
    }
  return g;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return 1e30;
  return double((a.data - b.data).abs().maxCoeff());
}

}  // namespace vsrtest

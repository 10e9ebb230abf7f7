#pragma once

#include "vsr/layers.hpp"
#include "vsr/optim.hpp"
#include "vsr/resample.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace vsr {

struct AlignNetConfig {
  int n = 5;           // sampling coordinates per pixel
  int res_blocks = 10;
  int filters = 64;
  int scale = 4;

  void validate() const {
    require(n >= 1, "AlignNetConfig: n must be >= 1");
    require(res_blocks >= 1, "AlignNetConfig: res_blocks must be >= 1");
    require(filters >= 1, "AlignNetConfig: filters must be >= 1");
    require(scale >= 1, "AlignNetConfig: scale must be >= 1");
  }
};

/// Flow at HR resolution plus the bridged motion features at LR resolution.
template <typename T>
struct AlignmentField {
  FlowStack<T> flow;
  Tensor<T> features;
};

/// Graph-valued counterpart used inside training unrolls.
template <typename T>
struct AlignmentFieldVar {
  Var<T> u, v, w;  // (HR h, HR w, n) each; weights softmax-normalized
  Var<T> features;

  AlignmentField<T> materialize() const {
    AlignmentField<T> f;
    f.flow.u = u.value();
    f.flow.v = v.value();
    f.flow.w = w.value();
    f.features = features.value();
    return f;
  }
};

/// Motion compensation network. Estimates flow from a channel-concatenated
/// LR frame pair; the head runs at LR resolution and emits 3n maps (u, v,
/// weight logit per coordinate). Offsets are bilinearly upsampled by the
/// scale factor with magnitudes scaled to HR pixel units; logits are
/// upsampled and softmax-normalized per pixel. The head starts at zero so a
/// fresh network emits an identity warp with uniform weights.
template <typename T>
struct AlignNet {
  AlignNetConfig cfg;
  ConvLayer<T> conv_in;
  std::vector<ResBlock<T>> blocks;
  ConvLayer<T> head;

  static AlignNet build(const AlignNetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    AlignNet net;
    net.cfg = cfg;
    net.conv_in = ConvLayer<T>::make(6, cfg.filters, 3, 1, 1, rng, Init::He);
    net.blocks.reserve(cfg.res_blocks);
    for (int i = 0; i < cfg.res_blocks; ++i) net.blocks.push_back(ResBlock<T>::make(cfg.filters, rng));
    net.head = ConvLayer<T>::make(cfg.filters, 3 * cfg.n, 3, 1, 1, rng, Init::Zero);
    return net;
  }

  AlignmentFieldVar<T> forward(const Var<T>& y_t, const Var<T>& y_prev) const {
    check_same_shape(y_t.value(), y_prev.value(), "estimate_alignment inputs");
    Var<T> h = relu(conv_in(concat_channels<T>({y_t, y_prev})));
    for (const auto& b : blocks) h = b(h);
    Var<T> out = head(h);
    const int n = cfg.n, s = cfg.scale;
    AlignmentFieldVar<T> f;
    f.u = scale(upsample_bilinear(slice_channels(out, 0, n), s), T(s));
    f.v = scale(upsample_bilinear(slice_channels(out, n, n), s), T(s));
    f.w = softmax_channels(upsample_bilinear(slice_channels(out, 2 * n, n), s));
    f.features = h;
    return f;
  }

  std::int64_t parameter_count() const {
    std::int64_t c = conv_in.param_count() + head.param_count();
    for (const auto& b : blocks) c += b.param_count();
    return c;
  }

  void collect(ParamRegistry<T>& r, const std::string& prefix) const {
    conv_in.collect(r, prefix + ".conv_in");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(r, prefix + ".block" + std::to_string(i));
    head.collect(r, prefix + ".head");
  }
};

/// Inference entry point: pure given parameters.
template <typename T>
AlignmentField<T> estimate_alignment(const AlignNet<T>& net, const Tensor<T>& y_t,
                                     const Tensor<T>& y_prev) {
  NoGrad guard;
  return net.forward(Var<T>::constant(y_t), Var<T>::constant(y_prev)).materialize();
}

/// Warp the previous HR estimate onto the current frame. No clamping: values
/// may leave [0,1] and the generator consumes them as-is.
template <typename T>
Tensor<T> warp_previous(const Tensor<T>& x_prev, const AlignmentField<T>& field) {
  require(x_prev.h == field.flow.height() && x_prev.w == field.flow.width(),
          "warp_previous: estimate dims do not match the flow dims");
  return multi_warp(x_prev, field.flow);
}

template <typename T>
Var<T> warp_previous(const Var<T>& x_prev, const AlignmentFieldVar<T>& field) {
  require(x_prev.value().h == field.u.value().h && x_prev.value().w == field.u.value().w,
          "warp_previous: estimate dims do not match the flow dims");
  return multi_warp(x_prev, field.u, field.v, field.w);
}

struct FlowFitOptions {
  int steps = 500;
  double lr = 0.05;
  std::uint64_t seed = 0;
  double init_spread = 0.1;  // stddev of the offset init; breaks coordinate symmetry
};

/// Gradient-descent fit of raw (u, v, weight-logit) maps minimizing the mean
/// squared warp error, without any network. Deterministic given the seed.
/// `init` (optional) seeds the parameters from an existing stack; stacks with
/// fewer than n coordinates are padded with zero-weight ones.
template <typename T>
FlowStack<T> fit_flow_direct(const Tensor<T>& x_prev, const Tensor<T>& x_target, int n,
                             const FlowFitOptions& opts, const FlowStack<T>* init = nullptr) {
  check_same_shape(x_prev, x_target, "fit_flow_direct inputs");
  require(n >= 1, "fit_flow_direct: n must be >= 1");
  require(opts.steps >= 1, "fit_flow_direct: steps must be >= 1");

  const int h = x_prev.h, w = x_prev.w;
  std::mt19937_64 rng(opts.seed);
  Tensor<T> u0(h, w, n), v0(h, w, n), l0(h, w, n);
  u0.fill_randn(rng, T(opts.init_spread));
  v0.fill_randn(rng, T(opts.init_spread));
  if (init) {
    init->validate();
    require(init->height() == h && init->width() == w, "fit_flow_direct: init dims mismatch");
    const int m = std::min(init->n(), n);
    for (int i = 0; i < n; ++i)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (i < m) {
            u0(y, x, i) = init->u(y, x, i);
            v0(y, x, i) = init->v(y, x, i);
            l0(y, x, i) = std::log(std::max(init->w(y, x, i), T(1e-30)));
          } else {
            u0(y, x, i) = T(0);
            v0(y, x, i) = T(0);
            l0(y, x, i) = std::log(T(1e-30));
          }
        }
  }

  Var<T> u = Var<T>::param(std::move(u0));
  Var<T> v = Var<T>::param(std::move(v0));
  Var<T> logits = Var<T>::param(std::move(l0));
  Var<T> target = Var<T>::constant(x_target);
  Var<T> image = Var<T>::constant(x_prev);

  std::vector<Var<T>> params{u, v, logits};
  Adam<T> adam;
  adam.lr = T(opts.lr);
  adam.init(params);

  for (int step = 0; step < opts.steps; ++step) {
    Var<T> warped = multi_warp(image, u, v, softmax_channels(logits));
    Var<T> loss = mean_all(square(sub(warped, target)));
    for (auto& p : params) p.clear_grad();
    backward(loss);
    adam.step(params);
  }

  FlowStack<T> out;
  out.u = u.value();
  out.v = v.value();
  NoGrad guard;
  out.w = softmax_channels(logits).value();
  return out;
}

}  // namespace vsr

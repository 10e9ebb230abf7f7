#pragma once

#include "vsr/autograd.hpp"
#include "vsr/tensor.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace vsr {

/// Named views over a network's trainable parameters and non-trainable
/// buffers (e.g. normalization running statistics). Names are stable across
/// runs and key the checkpoint format.
template <typename T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Var<T>>> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  void add(const std::string& name, const Var<T>& p) { params.emplace_back(name, p); }
  void add_buffer(const std::string& name, Tensor<T>* t) { buffers.emplace_back(name, t); }

  std::vector<Var<T>> param_list() const {
    std::vector<Var<T>> out;
    out.reserve(params.size());
    for (const auto& [n, p] : params) out.push_back(p);
    return out;
  }

  void clear_grads() {
    for (auto& [n, p] : params) p.clear_grad();
  }

  void freeze_all() {
    for (auto& [n, p] : params) p.set_requires_grad(false);
  }

  std::int64_t count() const {
    std::int64_t c = 0;
    for (const auto& [n, p] : params) c += p.value().size();
    return c;
  }
};

enum class Init { He, Xavier, Zero };

template <typename T>
struct ConvLayer {
  Var<T> w, b;
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;

  static ConvLayer make(int cin, int cout, int k, int stride, int pad, std::mt19937_64& rng,
                        Init init) {
    ConvLayer l;
    l.cin = cin;
    l.cout = cout;
    l.k = k;
    l.stride = stride;
    l.pad = pad;
    Tensor<T> wt(cout, cin * k * k, 1);
    if (init == Init::He)
      wt.fill_randn(rng, T(std::sqrt(2.0 / double(cin * k * k))));
    else if (init == Init::Xavier)
      wt.fill_randn(rng, T(std::sqrt(2.0 / double(cin * k * k + cout))));
    l.w = Var<T>::param(std::move(wt));
    l.b = Var<T>::param(Tensor<T>(1, 1, cout));
    return l;
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, w, b, cin, k, k, stride, pad); }

  std::int64_t param_count() const { return std::int64_t(cout) * cin * k * k + cout; }

  void collect(ParamRegistry<T>& r, const std::string& prefix) const {
    r.add(prefix + ".w", w);
    r.add(prefix + ".b", b);
  }
};

/// conv - ReLU - conv with an identity skip.
template <typename T>
struct ResBlock {
  ConvLayer<T> c1, c2;

  static ResBlock make(int filters, std::mt19937_64& rng) {
    ResBlock b;
    b.c1 = ConvLayer<T>::make(filters, filters, 3, 1, 1, rng, Init::He);
    b.c2 = ConvLayer<T>::make(filters, filters, 3, 1, 1, rng, Init::He);
    return b;
  }

  Var<T> operator()(const Var<T>& x) const { return add(x, c2(relu(c1(x)))); }

  std::int64_t param_count() const { return c1.param_count() + c2.param_count(); }

  void collect(ParamRegistry<T>& r, const std::string& prefix) const {
    c1.collect(r, prefix + ".c1");
    c2.collect(r, prefix + ".c2");
  }
};

template <typename T>
struct DenseLayer {
  Var<T> w, b;
  int in = 0, out = 0;

  static DenseLayer make(int in, int out, std::mt19937_64& rng) {
    DenseLayer l;
    l.in = in;
    l.out = out;
    Tensor<T> wt(out, in, 1);
    wt.fill_randn(rng, T(std::sqrt(2.0 / double(in + out))));
    l.w = Var<T>::param(std::move(wt));
    l.b = Var<T>::param(Tensor<T>(1, 1, out));
    return l;
  }

  Var<T> operator()(const Var<T>& x) const { return dense(x, w, b); }

  std::int64_t param_count() const { return std::int64_t(out) * in + out; }

  void collect(ParamRegistry<T>& r, const std::string& prefix) const {
    r.add(prefix + ".w", w);
    r.add(prefix + ".b", b);
  }
};

/// Batch normalization over a list of same-shaped activations. Training mode
/// normalizes with joint batch+spatial statistics (built from autograd
/// primitives so gradients flow through the statistics); eval mode uses the
/// running averages.
template <typename T>
struct BatchNorm {
  Var<T> gamma, beta;
  Tensor<T> run_mean, run_var;
  T eps = T(1e-5);
  T momentum = T(0.9);

  static BatchNorm make(int c) {
    BatchNorm bn;
    bn.gamma = Var<T>::param(Tensor<T>::constant(1, 1, c, T(1)));
    bn.beta = Var<T>::param(Tensor<T>(1, 1, c));
    bn.run_mean = Tensor<T>(1, 1, c);
    bn.run_var = Tensor<T>::constant(1, 1, c, T(1));
    return bn;
  }

  std::vector<Var<T>> forward(const std::vector<Var<T>>& xs, bool train) {
    require(!xs.empty(), "BatchNorm: empty batch");
    Var<T> mean, var;
    if (train) {
      std::vector<Var<T>> means, sqmeans;
      for (const auto& x : xs) {
        means.push_back(channel_mean(x));
        sqmeans.push_back(channel_mean(square(x)));
      }
      mean = mean_of(means);
      var = sub(mean_of(sqmeans), square(mean));
      run_mean.data = momentum * run_mean.data + (T(1) - momentum) * mean.value().data;
      run_var.data = momentum * run_var.data + (T(1) - momentum) * var.value().data;
    } else {
      mean = Var<T>::constant(run_mean);
      var = Var<T>::constant(run_var);
    }
    Var<T> inv = div(Var<T>::constant(Tensor<T>::constant(1, 1, gamma.value().c, T(1))),
                     sqrt_of(add_scalar(var, eps)));
    Var<T> neg_mean = neg(mean);
    std::vector<Var<T>> out;
    out.reserve(xs.size());
    for (const auto& x : xs) {
      Var<T> xn = bmul_channel(badd_channel(x, neg_mean), inv);
      out.push_back(badd_channel(bmul_channel(xn, gamma), beta));
    }
    return out;
  }

  std::int64_t param_count() const { return 2 * std::int64_t(gamma.value().c); }

  void collect(ParamRegistry<T>& r, const std::string& prefix) {
    r.add(prefix + ".gamma", gamma);
    r.add(prefix + ".beta", beta);
    r.add_buffer(prefix + ".run_mean", &run_mean);
    r.add_buffer(prefix + ".run_var", &run_var);
  }
};

}  // namespace vsr

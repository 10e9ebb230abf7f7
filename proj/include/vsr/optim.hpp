#pragma once

#include "vsr/autograd.hpp"
#include "vsr/tensor.hpp"

#include <cmath>
#include <vector>

namespace vsr {

/// Adaptive moment estimation. State vectors are parallel to the parameter
/// list handed to init(); that order is part of the checkpoint contract.
template <typename T>
struct Adam {
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::int64_t step_count = 0;
  std::vector<Tensor<T>> m, v;

  void init(const std::vector<Var<T>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.push_back(Tensor<T>::zeros_like(p.value()));
      v.push_back(Tensor<T>::zeros_like(p.value()));
    }
    step_count = 0;
  }

  void step(std::vector<Var<T>>& params) {
    require(m.size() == params.size(), "Adam: state/parameter count mismatch");
    ++step_count;
    const T bc1 = T(1) - T(std::pow(double(beta1), double(step_count)));
    const T bc2 = T(1) - T(std::pow(double(beta2), double(step_count)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Var<T>& p = params[i];
      if (!p.has_grad()) continue;
      const auto& g = p.grad().data;
      m[i].data = beta1 * m[i].data + (T(1) - beta1) * g;
      v[i].data = beta2 * v[i].data + (T(1) - beta2) * g.square();
      p.mutable_value().data -= lr * (m[i].data / bc1) / ((v[i].data / bc2).sqrt() + eps);
    }
  }
};

}  // namespace vsr

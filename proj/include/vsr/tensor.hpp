#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace vsr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

/// Dense h x w x c tensor. Storage is one contiguous buffer laid out as c
/// channel planes, each plane row-major: index = (ch*h + y)*w + x. Images use
/// c=3 (RGB), scalars are 1x1x1.
template <typename T>
struct Tensor {
  using Scalar = T;
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;

  int h = 0, w = 0, c = 0;
  Storage data;

  Tensor() = default;
  Tensor(int h_, int w_, int c_) : h(h_), w(w_), c(c_), data(std::int64_t(h_) * w_ * c_) {
    data.setZero();
  }

  static Tensor zeros(int h, int w, int c) { return Tensor(h, w, c); }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.h, o.w, o.c); }

  static Tensor constant(int h, int w, int c, T v) {
    Tensor t(h, w, c);
    t.data.setConstant(v);
    return t;
  }

  static Tensor scalar(T v) { return constant(1, 1, 1, v); }

  std::int64_t size() const { return std::int64_t(h) * w * c; }

  bool same_shape(const Tensor& o) const { return h == o.h && w == o.w && c == o.c; }

  T& operator()(int y, int x, int ch) { return data[(std::int64_t(ch) * h + y) * w + x]; }
  T operator()(int y, int x, int ch) const { return data[(std::int64_t(ch) * h + y) * w + x]; }

  /// View of one channel plane as an h x w row-major array.
  auto plane(int ch) {
    return Eigen::Map<Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data() + std::int64_t(ch) * h * w, h, w);
  }
  auto plane(int ch) const {
    return Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data() + std::int64_t(ch) * h * w, h, w);
  }

  T item() const {
    require(size() == 1, "item() on non-scalar tensor");
    return data[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(h, w, c);
    out.data = data.template cast<U>();
    return out;
  }

  void fill_randn(std::mt19937_64& rng, T stddev, T mean = T(0)) {
    std::normal_distribution<double> d(0.0, 1.0);
    for (std::int64_t i = 0; i < size(); ++i) data[i] = mean + stddev * T(d(rng));
  }

  void fill_uniform(std::mt19937_64& rng, T lo = T(0), T hi = T(1)) {
    std::uniform_real_distribution<double> d{double(lo), double(hi)};
    for (std::int64_t i = 0; i < size(); ++i) data[i] = T(d(rng));
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << h << "x" << w << "x" << c;
    return os.str();
  }
};

template <typename T>
Tensor<T> random_tensor(int h, int w, int c, std::mt19937_64& rng, T lo = T(0), T hi = T(1)) {
  Tensor<T> t(h, w, c);
  t.fill_uniform(rng, lo, hi);
  return t;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b))
    fail(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace vsr

#pragma once

#include "vsr/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace vsr {

/// 8-bit RGB image, interleaved row-major (the on-disk representation).
struct ImageU8 {
  int h = 0, w = 0;
  std::vector<std::uint8_t> px;  // size h*w*3
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

/// Promote to real values in [0,1].
template <typename T>
Tensor<T> to_tensor(const ImageU8& img) {
  Tensor<T> t(img.h, img.w, 3);
  const T inv = T(1) / T(255);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        t(y, x, ch) = T(img.px[(std::size_t(y) * img.w + x) * 3 + ch]) * inv;
  return t;
}

/// Quantize to 8 bits: clamp to [0,1], then round to nearest.
template <typename T>
ImageU8 from_tensor(const Tensor<T>& t) {
  require(t.c == 3, "from_tensor: expected 3 channels, got " + std::to_string(t.c));
  ImageU8 img;
  img.h = t.h;
  img.w = t.w;
  img.px.resize(std::size_t(t.h) * t.w * 3);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        T v = std::min(std::max(t(y, x, ch), T(0)), T(1));
        img.px[(std::size_t(y) * t.w + x) * 3 + ch] =
            std::uint8_t(std::lround(double(v) * 255.0));
      }
  return img;
}

}  // namespace vsr

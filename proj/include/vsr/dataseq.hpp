#pragma once

#include "vsr/image_io.hpp"
#include "vsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace vsr {

/// Ordered frames of one clip, all sharing dimensions, values in [0,1].
template <typename T>
struct FrameSequence {
  std::vector<Tensor<T>> frames;
  std::optional<double> frame_rate_hint;

  int length() const { return int(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames[0].h; }
  int width() const { return frames.empty() ? 0 : frames[0].w; }

  void validate() const {
    for (std::size_t i = 1; i < frames.size(); ++i)
      if (!frames[i].same_shape(frames[0]))
        fail("FrameSequence: frame " + std::to_string(i) + " has shape " +
             frames[i].shape_str() + ", expected " + frames[0].shape_str());
  }
};

enum class ResampleKernel { Bicubic, Box, Nearest };

inline ResampleKernel parse_kernel(const std::string& s) {
  if (s == "bicubic") return ResampleKernel::Bicubic;
  if (s == "box") return ResampleKernel::Box;
  if (s == "nearest") return ResampleKernel::Nearest;
  fail("unknown resample kernel '" + s + "' (expected bicubic|box|nearest)");
}

namespace detail {

// Keys cubic kernel, a = -0.5.
template <typename T>
inline T cubic_kernel(T t) {
  const T a = T(-0.5);
  t = std::abs(t);
  if (t <= T(1)) return (a + T(2)) * t * t * t - (a + T(3)) * t * t + T(1);
  if (t < T(2)) return a * t * t * t - T(5) * a * t * t + T(8) * a * t - T(4) * a;
  return T(0);
}

// One separable resize pass along x. `f` is in/out; kernel support widens by f
// when downscaling (anti-aliasing). Half-pixel centers, clamp-to-edge taps,
// weights normalized to sum 1.
template <typename T>
Tensor<T> resize_pass_x(const Tensor<T>& in, int out_w) {
  const T f = T(in.w) / T(out_w);
  const T scale = std::max(f, T(1));
  const int radius = int(std::ceil(T(2) * scale));
  Tensor<T> out(in.h, out_w, in.c);
  std::vector<T> weights(2 * radius + 1);
  for (int ox = 0; ox < out_w; ++ox) {
    const T center = (T(ox) + T(0.5)) * f - T(0.5);
    const int i0 = int(std::floor(center)) - radius + 1;
    T wsum = T(0);
    int taps = 0;
    for (int i = i0; i <= i0 + 2 * radius - 1; ++i) {
      T wv = cubic_kernel((T(i) - center) / scale);
      weights[taps++] = wv;
      wsum += wv;
    }
    for (int ch = 0; ch < in.c; ++ch)
      for (int y = 0; y < in.h; ++y) {
        T acc = T(0);
        for (int k = 0; k < taps; ++k) {
          int ix = std::clamp(i0 + k, 0, in.w - 1);
          acc += weights[k] * in(y, ix, ch);
        }
        out(y, ox, ch) = acc / wsum;
      }
  }
  return out;
}

template <typename T>
Tensor<T> transpose_xy(const Tensor<T>& in) {
  Tensor<T> out(in.w, in.h, in.c);
  for (int ch = 0; ch < in.c; ++ch)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) out(x, y, ch) = in(y, x, ch);
  return out;
}

}  // namespace detail

/// Separable bicubic resize with anti-aliasing on downscale. Values are NOT
/// clamped here; callers clamp where their contract requires it.
template <typename T>
Tensor<T> resize_bicubic(const Tensor<T>& in, int out_h, int out_w) {
  Tensor<T> t = detail::resize_pass_x(in, out_w);
  t = detail::transpose_xy(t);
  t = detail::resize_pass_x(t, out_h);
  return detail::transpose_xy(t);
}

/// Load a directory of PNG frames in lexicographic filename order.
template <typename T>
FrameSequence<T> load_sequence(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail("load_sequence: not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png") names.push_back(e.path().filename().string());
  }
  if (names.empty()) fail("load_sequence: no PNG frames in " + dir);
  std::sort(names.begin(), names.end());

  FrameSequence<T> seq;
  seq.frames.reserve(names.size());
  for (const auto& name : names) {
    ImageU8 img = read_png((fs::path(dir) / name).string());
    Tensor<T> frame = to_tensor<T>(img);
    if (!seq.frames.empty() && !frame.same_shape(seq.frames[0]))
      fail("load_sequence: frame '" + name + "' has dims " + frame.shape_str() +
           ", expected " + seq.frames[0].shape_str() + " (dir " + dir + ")");
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

/// Write a sequence as numbered frames (%06d.png), clamped and quantized.
template <typename T>
void write_sequence(const std::string& dir, const FrameSequence<T>& seq) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  char name[32];
  for (int t = 0; t < seq.length(); ++t) {
    std::snprintf(name, sizeof(name), "%06d.png", t);
    write_png((fs::path(dir) / name).string(), from_tensor(seq.frames[t]));
  }
}

/// Downsample a frame by integer factor s with the configured kernel,
/// clamping the result to [0,1].
template <typename T>
Tensor<T> downsample_frame(const Tensor<T>& hr, int s,
                           ResampleKernel kernel = ResampleKernel::Bicubic) {
  require(s >= 1, "downsample: scale must be >= 1");
  if (hr.h % s != 0 || hr.w % s != 0)
    fail("downsample: dims " + hr.shape_str() + " not divisible by scale " + std::to_string(s));
  const int oh = hr.h / s, ow = hr.w / s;
  Tensor<T> out;
  switch (kernel) {
    case ResampleKernel::Bicubic:
      out = resize_bicubic(hr, oh, ow);
      break;
    case ResampleKernel::Box: {
      out = Tensor<T>(oh, ow, hr.c);
      const T inv = T(1) / T(s * s);
      for (int ch = 0; ch < hr.c; ++ch)
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            T acc = T(0);
            for (int dy = 0; dy < s; ++dy)
              for (int dx = 0; dx < s; ++dx) acc += hr(y * s + dy, x * s + dx, ch);
            out(y, x, ch) = acc * inv;
          }
      break;
    }
    case ResampleKernel::Nearest: {
      out = Tensor<T>(oh, ow, hr.c);
      for (int ch = 0; ch < hr.c; ++ch)
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) out(y, x, ch) = hr(y * s, x * s, ch);
      break;
    }
  }
  out.data = out.data.min(T(1)).max(T(0));
  return out;
}

template <typename T>
FrameSequence<T> make_lr(const FrameSequence<T>& hr, int s,
                         ResampleKernel kernel = ResampleKernel::Bicubic) {
  FrameSequence<T> lr;
  lr.frame_rate_hint = hr.frame_rate_hint;
  lr.frames.reserve(hr.frames.size());
  for (const auto& f : hr.frames) lr.frames.push_back(downsample_frame(f, s, kernel));
  return lr;
}

/// One dataset entry: aligned HR/LR sequences.
template <typename T>
struct SequencePair {
  std::string name;
  FrameSequence<T> hr, lr;
};

/// Manifest: one sequence per line, HR dir and optional LR dir tab-separated.
/// Relative paths resolve against the manifest location. Missing LR is
/// synthesized by downsampling.
template <typename T>
std::vector<SequencePair<T>> load_manifest(const std::string& manifest_path, int scale,
                                           ResampleKernel kernel = ResampleKernel::Bicubic) {
  namespace fs = std::filesystem;
  std::ifstream is(manifest_path);
  if (!is) fail("cannot open manifest: " + manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();

  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q.string() : (base / q).string();
  };

  std::vector<SequencePair<T>> out;
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::string hr_dir = line, lr_dir;
    if (auto tab = line.find('\t'); tab != std::string::npos) {
      hr_dir = line.substr(0, tab);
      lr_dir = line.substr(tab + 1);
    }
    SequencePair<T> pair;
    pair.name = fs::path(hr_dir).filename().string();
    pair.hr = load_sequence<T>(resolve(hr_dir));
    pair.lr = lr_dir.empty() ? make_lr(pair.hr, scale, kernel) : load_sequence<T>(resolve(lr_dir));
    if (pair.hr.height() != pair.lr.height() * scale || pair.hr.width() != pair.lr.width() * scale)
      fail("manifest: HR dims of '" + pair.name + "' are not " + std::to_string(scale) +
           "x the LR dims");
    if (pair.hr.length() != pair.lr.length())
      fail("manifest: HR/LR frame counts differ for '" + pair.name + "'");
    out.push_back(std::move(pair));
  }
  return out;
}

/// A training batch: aligned HR/LR clips of T frames each.
template <typename T>
struct ClipBatch {
  std::vector<FrameSequence<T>> hr, lr;
  int scale = 1;

  int batch_size() const { return int(hr.size()); }

  void validate() const {
    require(hr.size() == lr.size(), "ClipBatch: hr/lr batch sizes differ");
    for (std::size_t b = 0; b < hr.size(); ++b) {
      hr[b].validate();
      lr[b].validate();
      require(hr[b].length() == lr[b].length(), "ClipBatch: hr/lr clip lengths differ");
      require(hr[b].height() == lr[b].height() * scale &&
                  hr[b].width() == lr[b].width() * scale,
              "ClipBatch: hr dims are not scale x lr dims");
    }
  }
};

template <typename T>
Tensor<T> crop(const Tensor<T>& t, int y0, int x0, int ch_h, int ch_w) {
  require(y0 >= 0 && x0 >= 0 && y0 + ch_h <= t.h && x0 + ch_w <= t.w, "crop out of bounds");
  Tensor<T> out(ch_h, ch_w, t.c);
  for (int ch = 0; ch < t.c; ++ch)
    for (int y = 0; y < ch_h; ++y)
      for (int x = 0; x < ch_w; ++x) out(y, x, ch) = t(y0 + y, x0 + x, ch);
  return out;
}

/// Draw `batch` independent (sequence, start frame, crop offset) samples.
/// The same spatial crop is applied to every frame of a clip; HR offsets are
/// multiples of `scale` so the LR crop stays aligned. Deterministic in `rng`.
template <typename T>
ClipBatch<T> sample_clip_batch(const std::vector<SequencePair<T>>& dataset, int batch, int T_steps,
                               int crop_hr, int scale, std::mt19937_64& rng) {
  require(!dataset.empty(), "sample_clip_batch: empty dataset");
  require(batch >= 1 && T_steps >= 1, "sample_clip_batch: batch and T must be >= 1");
  require(crop_hr % scale == 0, "sample_clip_batch: crop not divisible by scale");
  for (const auto& p : dataset) {
    if (p.hr.length() < T_steps)
      fail("sample_clip_batch: sequence '" + p.name + "' shorter than T=" +
           std::to_string(T_steps));
    if (p.hr.height() < crop_hr || p.hr.width() < crop_hr)
      fail("sample_clip_batch: crop " + std::to_string(crop_hr) + " exceeds dims of '" + p.name +
           "'");
  }

  ClipBatch<T> out;
  out.scale = scale;
  const int crop_lr = crop_hr / scale;
  for (int b = 0; b < batch; ++b) {
    std::uniform_int_distribution<int> pick_seq(0, int(dataset.size()) - 1);
    const auto& p = dataset[pick_seq(rng)];
    std::uniform_int_distribution<int> pick_t(0, p.hr.length() - T_steps);
    const int t0 = pick_t(rng);
    std::uniform_int_distribution<int> pick_y(0, (p.hr.height() - crop_hr) / scale);
    std::uniform_int_distribution<int> pick_x(0, (p.hr.width() - crop_hr) / scale);
    const int y0 = pick_y(rng) * scale;
    const int x0 = pick_x(rng) * scale;

    FrameSequence<T> hr, lr;
    for (int t = 0; t < T_steps; ++t) {
      hr.frames.push_back(crop(p.hr.frames[t0 + t], y0, x0, crop_hr, crop_hr));
      lr.frames.push_back(crop(p.lr.frames[t0 + t], y0 / scale, x0 / scale, crop_lr, crop_lr));
    }
    out.hr.push_back(std::move(hr));
    out.lr.push_back(std::move(lr));
  }
  out.validate();
  return out;
}

}  // namespace vsr

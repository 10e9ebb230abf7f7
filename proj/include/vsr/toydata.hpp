#pragma once

#include "vsr/dataseq.hpp"
#include "vsr/tensor.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace vsr {

// Procedural video clips with known motion: band-limited sinusoid textures,
// soft-edged moving sprites and global pans. Everything is evaluated from a
// continuous scene model, so frames are exact samples and pan clips have
// exact ground-truth flow.

struct SinusoidTexture {
  struct Wave {
    double fx, fy, phase, amp;
    int ch;
  };
  std::vector<Wave> waves;
  double base = 0.5;

  static SinusoidTexture random(std::mt19937_64& rng, int k, double min_freq, double max_freq,
                                double total_amp) {
    SinusoidTexture t;
    std::uniform_real_distribution<double> freq{min_freq, max_freq};
    std::uniform_real_distribution<double> phase{0.0, 6.283185307179586};
    std::uniform_real_distribution<double> dir{0.0, 6.283185307179586};
    std::uniform_int_distribution<int> ch{0, 2};
    const double amp = total_amp / k;
    for (int i = 0; i < k; ++i) {
      double f = freq(rng), d = dir(rng);
      t.waves.push_back({f * std::cos(d), f * std::sin(d), phase(rng), amp, ch(rng)});
    }
    return t;
  }

  double eval(double x, double y, int ch) const {
    double v = base;
    for (const auto& w : waves)
      if (w.ch == ch) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase) * 3.0;
    return v;
  }
};

struct Sprite {
  SinusoidTexture tex;
  double cx0, cy0;    // center at t=0
  double vx, vy;      // px per frame
  double half_w, half_h;
  double edge = 1.5;  // soft edge width in px

  double alpha(double x, double y, int t) const {
    const double cx = cx0 + vx * t, cy = cy0 + vy * t;
    auto cov = [this](double d, double half) {
      return std::min(1.0, std::max(0.0, (half - std::abs(d)) / edge + 0.5));
    };
    return cov(x - cx, half_w) * cov(y - cy, half_h);
  }

  double color(double x, double y, int t, int ch) const {
    // texture rides with the sprite
    const double cx = cx0 + vx * t, cy = cy0 + vy * t;
    return tex.eval(x - cx, y - cy, ch);
  }
};

struct ToyParams {
  int hr_size = 128;
  int frames = 10;
  int clips = 24;
  std::uint64_t seed = 1;
  double max_pan = 1.2;       // background px/frame
  double max_sprite_speed = 2.0;
  int waves_bg = 10;
  int waves_sprite = 8;
};

template <typename T>
struct ToyClip {
  FrameSequence<T> hr;
  bool pure_pan = false;       // exact uniform ground-truth flow available
  double flow_u = 0, flow_v = 0;  // backward flow (frame t -> t-1) when pure_pan
  bool mostly_static = false;  // static background, one small mover
};

namespace detail {

template <typename T>
Tensor<T> render_frame(int size, int t, const SinusoidTexture& bg, double pan_x, double pan_y,
                       const std::vector<Sprite>& sprites) {
  Tensor<T> f(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        double v = bg.eval(x - pan_x * t, y - pan_y * t, ch);
        for (const auto& s : sprites) {
          double a = s.alpha(x, y, t);
          if (a > 0) v = (1 - a) * v + a * s.color(x, y, t, ch);
        }
        f(y, x, ch) = T(std::min(1.0, std::max(0.0, v)));
      }
  return f;
}

}  // namespace detail

/// Deterministic clip set mixing three kinds: pure pans (exact flow), sprite
/// scenes over a panning background, and mostly-static scenes with one small
/// mover (the interesting case for static-region temporal metrics).
template <typename T>
std::vector<ToyClip<T>> make_toy_clips(const ToyParams& p) {
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> pan{-p.max_pan, p.max_pan};
  std::uniform_real_distribution<double> speed{-p.max_sprite_speed, p.max_sprite_speed};
  std::uniform_real_distribution<double> pos{p.hr_size * 0.2, p.hr_size * 0.8};
  std::uniform_real_distribution<double> half{p.hr_size * 0.08, p.hr_size * 0.2};

  std::vector<ToyClip<T>> clips;
  for (int c = 0; c < p.clips; ++c) {
    const int kind = c % 3;  // 0: pan, 1: sprites, 2: mostly static
    ToyClip<T> clip;
    SinusoidTexture bg = SinusoidTexture::random(rng, p.waves_bg, 0.08, 0.55, 0.42);
    double px = pan(rng), py = pan(rng);
    std::vector<Sprite> sprites;
    if (kind == 0) {
      clip.pure_pan = true;
      clip.flow_u = -px;
      clip.flow_v = -py;
    } else {
      const int n_sprites = (kind == 2) ? 1 : 2;
      if (kind == 2) px = py = 0.0;
      clip.mostly_static = (kind == 2);
      for (int i = 0; i < n_sprites; ++i) {
        Sprite s;
        s.tex = SinusoidTexture::random(rng, p.waves_sprite, 0.15, 0.7, 0.45);
        s.cx0 = pos(rng);
        s.cy0 = pos(rng);
        s.vx = speed(rng);
        s.vy = speed(rng);
        s.half_w = (kind == 2) ? p.hr_size * 0.08 : half(rng);
        s.half_h = (kind == 2) ? p.hr_size * 0.08 : half(rng);
        sprites.push_back(s);
      }
    }
    for (int t = 0; t < p.frames; ++t)
      clip.hr.frames.push_back(detail::render_frame<T>(p.hr_size, t, bg, px, py, sprites));
    clips.push_back(std::move(clip));
  }
  return clips;
}

/// HR/LR pairs ready for training or evaluation.
template <typename T>
std::vector<SequencePair<T>> toy_pairs(const std::vector<ToyClip<T>>& clips, int scale,
                                       ResampleKernel kernel = ResampleKernel::Bicubic,
                                       const std::string& name_prefix = "toy") {
  std::vector<SequencePair<T>> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    SequencePair<T> p;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%03zu", name_prefix.c_str(), i);
    p.name = buf;
    p.hr = clips[i].hr;
    p.lr = make_lr(p.hr, scale, kernel);
    out.push_back(std::move(p));
  }
  return out;
}

/// Frame pair related by a fractional translation plus a smooth sinusoidal
/// deformation, rendered exactly from the continuous texture. Returns
/// (previous frame, target frame). With amp = 0 this is a pure translation.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> deformation_pair(int size, std::uint64_t seed, double shift_x,
                                                 double shift_y, double amp, double freq) {
  std::mt19937_64 rng(seed);
  SinusoidTexture tex = SinusoidTexture::random(rng, 24, 0.25, 2.1, 0.46);
  Tensor<T> prev(size, size, 3), target(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = shift_x + amp * std::sin(freq * y) * std::cos(0.7 * freq * x);
      const double dy = shift_y + amp * std::cos(freq * x) * std::sin(0.9 * freq * y);
      for (int ch = 0; ch < 3; ++ch) {
        prev(y, x, ch) = T(std::min(1.0, std::max(0.0, tex.eval(x, y, ch))));
        target(y, x, ch) = T(std::min(1.0, std::max(0.0, tex.eval(x + dx, y + dy, ch))));
      }
    }
  return {std::move(prev), std::move(target)};
}

}  // namespace vsr

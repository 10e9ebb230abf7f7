#pragma once

#include "vsr/archive.hpp"
#include "vsr/autograd.hpp"
#include "vsr/layers.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace vsr {

/// Combination weights for the full training objective, plus the sharpness
/// of the static-region mask.
struct LossWeights {
  double pixel = 0.01;        // L1 term
  double adversarial = 0.005; // generator GAN term
  double texture = 1.0;       // gram/texture term
  double temporal = 0.1;      // shared weight of both temporal terms
  double mask_sharpness = 100.0;

  void validate() const {
    require(pixel >= 0 && adversarial >= 0 && texture >= 0 && temporal >= 0 &&
                mask_sharpness >= 0,
            "LossWeights: weights must be non-negative");
  }
};

inline constexpr double kLogFloor = 1e-8;

// ---------------------------------------------------------------------------
// Pixel-wise L1
// ---------------------------------------------------------------------------

template <typename T>
Var<T> l1_loss(const Var<T>& x_hat, const Var<T>& x) {
  check_same_shape(x_hat.value(), x.value(), "l1_loss");
  return mean_all(abs_of(sub(x_hat, x)));
}

template <typename T>
T l1_loss(const Tensor<T>& x_hat, const Tensor<T>& x) {
  NoGrad guard;
  return l1_loss(Var<T>::constant(x_hat), Var<T>::constant(x)).item();
}

// ---------------------------------------------------------------------------
// Adversarial terms (epsilon-floored logs)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> adversarial_g_loss(const Var<T>& d_out) {
  return neg(log_floored(d_out, T(kLogFloor)));
}

template <typename T>
T adversarial_g_loss(T d_out) {
  NoGrad guard;
  return adversarial_g_loss(Var<T>::scalar(d_out)).item();
}

template <typename T>
Var<T> adversarial_d_loss(const Var<T>& d_real, const Var<T>& d_fake) {
  return sub(neg(log_floored(d_real, T(kLogFloor))),
             log_floored(T(1) - d_fake, T(kLogFloor)));
}

template <typename T>
T adversarial_d_loss(T d_real, T d_fake) {
  NoGrad guard;
  return adversarial_d_loss(Var<T>::scalar(d_real), Var<T>::scalar(d_fake)).item();
}

// ---------------------------------------------------------------------------
// Texture (gram) loss with a pluggable frozen feature extractor
// ---------------------------------------------------------------------------

struct FeatureExtractorConfig {
  std::vector<int> channels{8, 16};
  std::vector<int> strides{1, 2};
  int kernel = 3;
  std::uint64_t seed = 7;

  void validate() const {
    require(!channels.empty() && channels.size() == strides.size(),
            "FeatureExtractorConfig: channels/strides must match and be non-empty");
    require(kernel >= 1 && kernel % 2 == 1, "FeatureExtractorConfig: kernel must be odd");
  }
};

/// Frozen convolutional feature extractor; one tap after each layer's ReLU.
/// Default weights are deterministic random values from the config seed;
/// externally trained weights can be loaded from a tensor archive. Weights
/// are graph constants, so nothing here ever trains.
template <typename T>
struct FeatureExtractor {
  FeatureExtractorConfig cfg;
  std::vector<Tensor<T>> weights;  // (cout, cin*k*k, 1) per layer
  std::vector<Tensor<T>> biases;   // (1,1,cout) per layer

  static FeatureExtractor build(const FeatureExtractorConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    FeatureExtractor fe;
    fe.cfg = cfg;
    int cin = 3;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      const int cout = cfg.channels[i];
      Tensor<T> w(cout, cin * cfg.kernel * cfg.kernel, 1);
      w.fill_randn(rng, T(std::sqrt(2.0 / double(cin * cfg.kernel * cfg.kernel))));
      fe.weights.push_back(std::move(w));
      fe.biases.push_back(Tensor<T>(1, 1, cout));
      cin = cout;
    }
    return fe;
  }

  /// Load weights saved as fe.layer<i>.w / fe.layer<i>.b (float32 archive).
  static FeatureExtractor load(const FeatureExtractorConfig& cfg, const std::string& path) {
    FeatureExtractor fe = build(cfg);
    TensorArchive a = TensorArchive::load(path);
    for (std::size_t i = 0; i < fe.weights.size(); ++i) {
      const Tensor<float>& w = a.get("fe.layer" + std::to_string(i) + ".w");
      const Tensor<float>& b = a.get("fe.layer" + std::to_string(i) + ".b");
      require(w.h == fe.weights[i].h && w.w == fe.weights[i].w,
              "feature extractor: weight shape mismatch in " + path);
      require(b.c == fe.biases[i].c, "feature extractor: bias shape mismatch in " + path);
      fe.weights[i] = w.template cast<T>();
      fe.biases[i] = b.template cast<T>();
    }
    return fe;
  }

  void save(const std::string& path) const {
    TensorArchive a;
    a.meta["kind"] = "feature_extractor";
    for (std::size_t i = 0; i < weights.size(); ++i) {
      a.add("fe.layer" + std::to_string(i) + ".w", weights[i].template cast<float>());
      a.add("fe.layer" + std::to_string(i) + ".b", biases[i].template cast<float>());
    }
    a.save(path);
  }

  std::vector<Var<T>> extract(const Var<T>& image) const {
    std::vector<Var<T>> taps;
    Var<T> h = image;
    int cin = 3;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      h = relu(conv2d(h, Var<T>::constant(weights[i]), Var<T>::constant(biases[i]), cin,
                      cfg.kernel, cfg.kernel, cfg.strides[i], cfg.kernel / 2));
      taps.push_back(h);
      cin = cfg.channels[i];
    }
    return taps;
  }
};

/// Sum over tapped layers of the mean absolute gram-matrix difference.
template <typename T>
Var<T> texture_loss(const FeatureExtractor<T>& fe, const Var<T>& x_hat, const Var<T>& x) {
  check_same_shape(x_hat.value(), x.value(), "texture_loss");
  std::vector<Var<T>> ta = fe.extract(x_hat);
  std::vector<Var<T>> tb = fe.extract(x);
  Var<T> acc;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    Var<T> term = mean_all(abs_of(sub(gram_matrix(ta[i]), gram_matrix(tb[i]))));
    acc = (i == 0) ? term : add(acc, term);
  }
  return acc;
}

template <typename T>
T texture_loss(const FeatureExtractor<T>& fe, const Tensor<T>& x_hat, const Tensor<T>& x) {
  NoGrad guard;
  return texture_loss(fe, Var<T>::constant(x_hat), Var<T>::constant(x)).item();
}

// ---------------------------------------------------------------------------
// Temporal terms
// ---------------------------------------------------------------------------

/// Per-pixel mask in (0,1]: exp(-alpha * squared frame difference), squared
/// difference summed over the color channels so the mask is one map.
template <typename T>
Var<T> static_mask(const Var<T>& x_t, const Var<T>& x_prev, T alpha) {
  check_same_shape(x_t.value(), x_prev.value(), "static_mask");
  return exp_of(scale(pixel_sum_channels(square(sub(x_t, x_prev))), -alpha));
}

template <typename T>
Tensor<T> static_mask(const Tensor<T>& x_t, const Tensor<T>& x_prev, T alpha) {
  NoGrad guard;
  return static_mask(Var<T>::constant(x_t), Var<T>::constant(x_prev), alpha).value();
}

/// Masked inter-frame difference: mean over pixels of
/// mask * channel-mean |est_t - est_{t-1}|.
template <typename T>
Var<T> static_temporal_loss(const Var<T>& x_hat_t, const Var<T>& x_hat_prev, const Var<T>& mask) {
  check_same_shape(x_hat_t.value(), x_hat_prev.value(), "static_temporal_loss");
  require(mask.value().h == x_hat_t.value().h && mask.value().w == x_hat_t.value().w &&
              mask.value().c == 1,
          "static_temporal_loss: mask must be a (h,w,1) map");
  return mean_all(mul(pixel_mean_channels(abs_of(sub(x_hat_t, x_hat_prev))), mask));
}

template <typename T>
T static_temporal_loss(const Tensor<T>& x_hat_t, const Tensor<T>& x_hat_prev,
                       const Tensor<T>& mask) {
  NoGrad guard;
  return static_temporal_loss(Var<T>::constant(x_hat_t), Var<T>::constant(x_hat_prev),
                              Var<T>::constant(mask))
      .item();
}

/// Per-pixel population variance across the frames of a sequence (two-pass).
template <typename T>
Var<T> temporal_variance(const std::vector<Var<T>>& frames) {
  require(frames.size() >= 2, "temporal_variance: need at least 2 frames");
  Var<T> mean = mean_of(frames);
  std::vector<Var<T>> sq;
  sq.reserve(frames.size());
  for (const auto& f : frames) sq.push_back(square(sub(f, mean)));
  return mean_of(sq);
}

/// L1 distance between the temporal variance maps of the two sequences.
template <typename T>
Var<T> temporal_statistics_loss(const std::vector<Var<T>>& est, const std::vector<Var<T>>& gt) {
  require(est.size() == gt.size(), "temporal_statistics_loss: sequence lengths differ");
  require(est.size() >= 2, "temporal_statistics_loss: need at least 2 frames");
  return mean_all(abs_of(sub(temporal_variance(est), temporal_variance(gt))));
}

template <typename T>
T temporal_statistics_loss(const std::vector<Tensor<T>>& est, const std::vector<Tensor<T>>& gt) {
  NoGrad guard;
  std::vector<Var<T>> e, g;
  for (const auto& f : est) e.push_back(Var<T>::constant(f));
  for (const auto& f : gt) g.push_back(Var<T>::constant(f));
  return temporal_statistics_loss(e, g).item();
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

template <typename T>
struct LossTerms {
  T pixel = T(0);
  T adversarial = T(0);
  T texture = T(0);
  T temporal_static = T(0);
  T temporal_stats = T(0);
};

template <typename T>
void check_finite(T v, const char* name) {
  if (!std::isfinite(double(v))) fail(std::string("non-finite loss term: ") + name);
}

template <typename T>
T combined_loss(const LossWeights& w, const LossTerms<T>& t) {
  check_finite(t.pixel, "pixel");
  check_finite(t.adversarial, "adversarial");
  check_finite(t.texture, "texture");
  check_finite(t.temporal_static, "temporal_static");
  check_finite(t.temporal_stats, "temporal_stats");
  return T(w.pixel) * t.pixel + T(w.adversarial) * t.adversarial + T(w.texture) * t.texture +
         T(w.temporal) * (t.temporal_static + t.temporal_stats);
}

/// Graph version used by the trainer; term values are checked finite.
template <typename T>
Var<T> combined_loss(const LossWeights& w, const Var<T>& pixel, const Var<T>& adversarial,
                     const Var<T>& texture, const Var<T>& temporal_static,
                     const Var<T>& temporal_stats) {
  check_finite(pixel.item(), "pixel");
  check_finite(adversarial.item(), "adversarial");
  check_finite(texture.item(), "texture");
  check_finite(temporal_static.item(), "temporal_static");
  check_finite(temporal_stats.item(), "temporal_stats");
  Var<T> acc = scale(pixel, T(w.pixel));
  acc = add(acc, scale(adversarial, T(w.adversarial)));
  acc = add(acc, scale(texture, T(w.texture)));
  acc = add(acc, scale(add(temporal_static, temporal_stats), T(w.temporal)));
  return acc;
}

}  // namespace vsr

#pragma once

#include "vsr/dataseq.hpp"
#include "vsr/layers.hpp"

#include <random>
#include <string>
#include <vector>

namespace vsr {

struct DiscriminatorConfig {
  int blocks = 5;
  int base_filters = 64;
  double leaky_slope = 0.2;
  int dense_width = 1024;
  int T = 10;           // frames per stream
  int input_size = 256; // square HR crop the dense head is sized for

  void validate() const {
    require(blocks >= 1, "DiscriminatorConfig: blocks must be >= 1");
    require(base_filters >= 1, "DiscriminatorConfig: base_filters must be >= 1");
    require(dense_width >= 1, "DiscriminatorConfig: dense_width must be >= 1");
    require(T >= 1, "DiscriminatorConfig: T must be >= 1");
    require(input_size % (1 << blocks) == 0,
            "DiscriminatorConfig: input dims must be divisible by 2^blocks");
  }

  int channels_at(int block) const {
    int c = base_filters << block;
    return std::min(c, 8 * base_filters);
  }

  int spatial_after_blocks() const { return input_size >> blocks; }
};

/// Video discriminator: classifies a whole T-frame stream. Frames are channel
/// concatenated (3T input channels); each strided block halves the spatial
/// dims and doubles channels up to a cap of 8x base. Batch normalization in
/// every block except the first. Head: flatten, dense, leaky ReLU, dense,
/// sigmoid.
template <typename T>
struct Discriminator {
  DiscriminatorConfig cfg;
  std::vector<ConvLayer<T>> convs;
  std::vector<BatchNorm<T>> bns;  // for blocks 1..blocks-1
  DenseLayer<T> fc1, fc2;

  static Discriminator build(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    Discriminator d;
    d.cfg = cfg;
    int cin = 3 * cfg.T;
    for (int i = 0; i < cfg.blocks; ++i) {
      const int cout = cfg.channels_at(i);
      d.convs.push_back(ConvLayer<T>::make(cin, cout, 3, 2, 1, rng, Init::Xavier));
      if (i > 0) d.bns.push_back(BatchNorm<T>::make(cout));
      cin = cout;
    }
    const int flat = cfg.spatial_after_blocks() * cfg.spatial_after_blocks() * cin;
    d.fc1 = DenseLayer<T>::make(flat, cfg.dense_width, rng);
    d.fc2 = DenseLayer<T>::make(cfg.dense_width, 1, rng);
    return d;
  }

  /// Batched forward over streams of T frames each. In training mode the
  /// batch normalization statistics are computed jointly over the batch.
  std::vector<Var<T>> forward(const std::vector<std::vector<Var<T>>>& streams, bool train) {
    std::vector<Var<T>> probs = forward_logits(streams, train);
    for (auto& p : probs) p = sigmoid(p);
    return probs;
  }

  std::vector<Var<T>> forward_logits(const std::vector<std::vector<Var<T>>>& streams,
                                     bool train) {
    require(!streams.empty(), "discriminate: empty batch");
    std::vector<Var<T>> xs;
    xs.reserve(streams.size());
    for (const auto& stream : streams) {
      require(int(stream.size()) == cfg.T,
              "discriminate: expected " + std::to_string(cfg.T) + " frames, got " +
                  std::to_string(stream.size()));
      for (const auto& f : stream) {
        require(f.value().h == cfg.input_size && f.value().w == cfg.input_size,
                "discriminate: frame dims " + f.value().shape_str() + " do not match input size " +
                    std::to_string(cfg.input_size));
      }
      xs.push_back(concat_channels(stream));
    }
    for (int i = 0; i < cfg.blocks; ++i) {
      for (auto& x : xs) x = convs[i](x);
      if (i > 0) xs = bns[i - 1].forward(xs, train);
      for (auto& x : xs) x = leaky_relu(x, T(cfg.leaky_slope));
    }
    std::vector<Var<T>> logits;
    logits.reserve(xs.size());
    for (auto& x : xs) logits.push_back(fc2(leaky_relu(fc1(x), T(cfg.leaky_slope))));
    return logits;
  }

  std::int64_t parameter_count() const {
    std::int64_t c = fc1.param_count() + fc2.param_count();
    for (const auto& l : convs) c += l.param_count();
    for (const auto& bn : bns) c += bn.param_count();
    return c;
  }

  void collect(ParamRegistry<T>& r, const std::string& prefix) {
    for (std::size_t i = 0; i < convs.size(); ++i)
      convs[i].collect(r, prefix + ".conv" + std::to_string(i));
    for (std::size_t i = 0; i < bns.size(); ++i)
      bns[i].collect(r, prefix + ".bn" + std::to_string(i + 1));
    fc1.collect(r, prefix + ".fc1");
    fc2.collect(r, prefix + ".fc2");
  }
};

/// Inference-mode probability for one stream.
template <typename T>
T discriminate(Discriminator<T>& d, const FrameSequence<T>& frames) {
  NoGrad guard;
  std::vector<Var<T>> stream;
  stream.reserve(frames.frames.size());
  for (const auto& f : frames.frames) stream.push_back(Var<T>::constant(f));
  return d.forward({stream}, /*train=*/false)[0].item();
}

}  // namespace vsr

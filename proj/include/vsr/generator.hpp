#pragma once

#include "vsr/align.hpp"
#include "vsr/dataseq.hpp"
#include "vsr/layers.hpp"
#include "vsr/resample.hpp"

#include <random>
#include <string>
#include <vector>

namespace vsr {

struct GeneratorConfig {
  int res_blocks = 10;
  int filters = 64;
  int scale = 4;
  int inter_step = 2;  // per-stage magnification; scale = inter_step^2
  int motion_feature_channels = 64;

  void validate() const {
    require(res_blocks >= 1, "GeneratorConfig: res_blocks must be >= 1");
    require(filters >= 1, "GeneratorConfig: filters must be >= 1");
    require(inter_step >= 1 && inter_step * inter_step == scale,
            "GeneratorConfig: two-stage upscaling needs scale = inter_step^2");
    require(motion_feature_channels >= 0,
            "GeneratorConfig: motion_feature_channels must be >= 0");
  }

  int input_channels() const { return 3 + 3 * scale * scale + motion_feature_channels; }
};

/// Recurrent upscaling generator. Input: current LR frame, space-to-depth of
/// the warped previous HR estimate, bridged motion features, all channel
/// concatenated at LR. ResNet body without batch normalization, two
/// nearest-neighbor upscaling stages, and a global skip adding the
/// nearest-neighbor upscaled LR frame, so the network learns a residual.
/// The output conv starts at zero: at init every frame passes through as its
/// nearest-neighbor upscale.
template <typename T>
struct Generator {
  GeneratorConfig cfg;
  ConvLayer<T> conv_in;
  std::vector<ResBlock<T>> blocks;
  ConvLayer<T> up1, up2;
  ConvLayer<T> conv_out;

  static Generator build(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    Generator g;
    g.cfg = cfg;
    g.conv_in = ConvLayer<T>::make(cfg.input_channels(), cfg.filters, 3, 1, 1, rng, Init::He);
    g.blocks.reserve(cfg.res_blocks);
    for (int i = 0; i < cfg.res_blocks; ++i) g.blocks.push_back(ResBlock<T>::make(cfg.filters, rng));
    g.up1 = ConvLayer<T>::make(cfg.filters, cfg.filters, 3, 1, 1, rng, Init::He);
    g.up2 = ConvLayer<T>::make(cfg.filters, cfg.filters, 3, 1, 1, rng, Init::He);
    g.conv_out = ConvLayer<T>::make(cfg.filters, 3, 3, 1, 1, rng, Init::Zero);
    return g;
  }

  Var<T> forward(const Var<T>& y_t, const Var<T>& warped_prev, const Var<T>& features) const {
    const auto& lr = y_t.value();
    require(lr.c == 3, "generate_frame: LR frame must have 3 channels");
    require(warped_prev.value().h == lr.h * cfg.scale && warped_prev.value().w == lr.w * cfg.scale,
            "generate_frame: warped estimate dims must be scale x the LR dims");
    require(features.value().h == lr.h && features.value().w == lr.w,
            "generate_frame: motion features must be at LR resolution");
    require(features.value().c == cfg.motion_feature_channels,
            "generate_frame: motion feature channel count mismatch");

    Var<T> in = concat_channels<T>({y_t, space_to_depth(warped_prev, cfg.scale), features});
    Var<T> h = relu(conv_in(in));
    for (const auto& b : blocks) h = b(h);
    h = relu(up1(nn_upsample(h, cfg.inter_step)));
    h = relu(up2(nn_upsample(h, cfg.inter_step)));
    return add(conv_out(h), nn_upsample(y_t, cfg.scale));
  }

  std::int64_t parameter_count() const {
    std::int64_t c = conv_in.param_count() + up1.param_count() + up2.param_count() +
                     conv_out.param_count();
    for (const auto& b : blocks) c += b.param_count();
    return c;
  }

  void collect(ParamRegistry<T>& r, const std::string& prefix) const {
    conv_in.collect(r, prefix + ".conv_in");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(r, prefix + ".block" + std::to_string(i));
    up1.collect(r, prefix + ".up1");
    up2.collect(r, prefix + ".up2");
    conv_out.collect(r, prefix + ".conv_out");
  }
};

/// Single-frame inference.
template <typename T>
Tensor<T> generate_frame(const Generator<T>& g, const Tensor<T>& y_t,
                         const Tensor<T>& warped_prev, const Tensor<T>& features) {
  NoGrad guard;
  return g
      .forward(Var<T>::constant(y_t), Var<T>::constant(warped_prev), Var<T>::constant(features))
      .value();
}

template <typename T>
struct UnrollResultVar {
  std::vector<Var<T>> estimates;     // T HR frames
  std::vector<Var<T>> warped_prevs;  // warped previous estimate per step
  std::vector<AlignmentFieldVar<T>> fields;
};

template <typename T>
struct UnrollResult {
  FrameSequence<T> estimates;
  FrameSequence<T> warped_prevs;
  std::vector<AlignmentField<T>> fields;
};

/// Unfold the recurrence for T steps with shared weights. Step 0 uses a black
/// HR frame as the previous estimate and estimates alignment from the
/// duplicated first frame; later steps warp the previous estimate with the
/// field from (Y_t, Y_{t-1}). Gradients flow through the whole chain unless
/// `detach_recurrence` cuts the estimate fed into the next step.
template <typename T>
UnrollResultVar<T> unroll_graph(const Generator<T>& g, const AlignNet<T>& a,
                                const std::vector<Tensor<T>>& lr_frames, int T_steps,
                                bool detach_recurrence = false) {
  require(T_steps >= 1, "unroll: T must be >= 1");
  require(int(lr_frames.size()) >= T_steps, "unroll: sequence shorter than T");
  require(g.cfg.scale == a.cfg.scale, "unroll: generator/align scale mismatch");
  require(g.cfg.motion_feature_channels == a.cfg.filters,
          "unroll: bridged feature width does not match the align filters");

  const int s = g.cfg.scale;
  const int hr_h = lr_frames[0].h * s, hr_w = lr_frames[0].w * s;

  UnrollResultVar<T> out;
  Var<T> prev_est = Var<T>::constant(Tensor<T>::zeros(hr_h, hr_w, 3));
  for (int t = 0; t < T_steps; ++t) {
    Var<T> y_t = Var<T>::constant(lr_frames[t]);
    Var<T> y_prev = Var<T>::constant(lr_frames[t > 0 ? t - 1 : 0]);
    AlignmentFieldVar<T> field = a.forward(y_t, y_prev);
    Var<T> recur = detach_recurrence ? prev_est.detach() : prev_est;
    Var<T> warped = warp_previous(recur, field);
    Var<T> est = g.forward(y_t, warped, field.features);
    out.estimates.push_back(est);
    out.warped_prevs.push_back(warped);
    out.fields.push_back(std::move(field));
    prev_est = est;
  }
  return out;
}

template <typename T>
UnrollResult<T> unroll(const Generator<T>& g, const AlignNet<T>& a,
                       const FrameSequence<T>& lr_seq, int T_steps) {
  NoGrad guard;
  UnrollResultVar<T> r = unroll_graph(g, a, lr_seq.frames, T_steps);
  UnrollResult<T> out;
  for (int t = 0; t < T_steps; ++t) {
    out.estimates.frames.push_back(r.estimates[t].value());
    out.warped_prevs.frames.push_back(r.warped_prevs[t].value());
    out.fields.push_back(r.fields[t].materialize());
  }
  return out;
}

}  // namespace vsr

#pragma once

#include "vsr/dataseq.hpp"
#include "vsr/losses.hpp"
#include "vsr/resample.hpp"
#include "vsr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace vsr {

inline constexpr double kScoreCap = 99.0;

/// -20 log10(loss) with the 99 dB-style cap; higher is better.
inline double db_from_loss(double loss) {
  if (loss <= 0.0) return kScoreCap;
  return std::min(kScoreCap, -20.0 * std::log10(loss));
}

template <typename T>
Tensor<T> crop_border(const Tensor<T>& t, int margin) {
  require(2 * margin < t.h && 2 * margin < t.w, "crop_border: margin too large");
  if (margin == 0) return t;
  return crop(t, margin, margin, t.h - 2 * margin, t.w - 2 * margin);
}

// ---------------------------------------------------------------------------
// Intra-frame metrics
// ---------------------------------------------------------------------------

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mse");
  return double((a.data - b.data).square().sum()) / double(a.size());
}

/// 10 log10(1/MSE) on [0,1] images, capped at 99 dB.
template <typename T>
double psnr(const Tensor<T>& x_hat, const Tensor<T>& x) {
  const double m = mse(x_hat, x);
  if (m <= 0.0) return kScoreCap;
  return std::min(kScoreCap, 10.0 * std::log10(1.0 / m));
}

namespace detail {
inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(11);
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
      double d = i - 5;
      v[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += v[i];
    }
    for (auto& x : v) x /= sum;
    return v;
  }();
  return w;
}

// separable valid-region Gaussian window sum of one channel plane
template <typename T>
Eigen::ArrayXXd windowed(const Tensor<T>& img, int ch, const Eigen::ArrayXXd* other = nullptr,
                         int other_ch = 0) {
  const auto& w = ssim_window();
  Eigen::ArrayXXd src(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double v = double(img(y, x, ch));
      src(y, x) = other ? v * (*other)(y, x) : v;
    }
  Eigen::ArrayXXd hpass(img.h, img.w - 10);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x + 10 < img.w; ++x) {
      double acc = 0;
      for (int k = 0; k < 11; ++k) acc += w[k] * src(y, x + k);
      hpass(y, x) = acc;
    }
  Eigen::ArrayXXd out(img.h - 10, img.w - 10);
  for (int y = 0; y + 10 < img.h; ++y)
    for (int x = 0; x + 10 < img.w; ++x) {
      double acc = 0;
      for (int k = 0; k < 11; ++k) acc += w[k] * hpass(y + k, x);
      out(y, x) = acc;
    }
  return out;
}
}  // namespace detail

/// Single-scale SSIM with the standard 11x11 Gaussian window (sigma 1.5) and
/// stabilizers C1=(0.01)^2, C2=(0.03)^2 on the [0,1] range, averaged over all
/// valid window positions and channels.
template <typename T>
double ssim(const Tensor<T>& x_hat, const Tensor<T>& x) {
  check_same_shape(x_hat, x, "ssim");
  require(x.h >= 11 && x.w >= 11, "ssim: image smaller than the 11x11 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0;
  std::int64_t count = 0;
  for (int ch = 0; ch < x.c; ++ch) {
    Eigen::ArrayXXd a(x.h, x.w), b(x.h, x.w);
    for (int y = 0; y < x.h; ++y)
      for (int xx = 0; xx < x.w; ++xx) {
        a(y, xx) = double(x_hat(y, xx, ch));
        b(y, xx) = double(x(y, xx, ch));
      }
    Eigen::ArrayXXd mu_a = detail::windowed(x_hat, ch);
    Eigen::ArrayXXd mu_b = detail::windowed(x, ch);
    Eigen::ArrayXXd s_aa = detail::windowed(x_hat, ch, &a, ch) - mu_a.square();
    Eigen::ArrayXXd s_bb = detail::windowed(x, ch, &b, ch) - mu_b.square();
    Eigen::ArrayXXd s_ab = detail::windowed(x_hat, ch, &b, ch) - mu_a * mu_b;
    Eigen::ArrayXXd num = (2.0 * mu_a * mu_b + c1) * (2.0 * s_ab + c2);
    Eigen::ArrayXXd den = (mu_a.square() + mu_b.square() + c1) * (s_aa + s_bb + c2);
    acc += (num / den).sum();
    count += num.size();
  }
  return acc / double(count);
}

// ---------------------------------------------------------------------------
// Temporal metrics
// ---------------------------------------------------------------------------

/// Static-consistency score: -20 log10 of the mean masked inter-frame
/// difference of the estimates, masks derived from the ground truth.
template <typename T>
double static_metric(const FrameSequence<T>& est, const FrameSequence<T>& gt,
                     double mask_alpha = 100.0) {
  require(est.length() == gt.length(), "static_metric: sequence lengths differ");
  require(est.length() >= 2, "static_metric: need at least 2 frames");
  double acc = 0;
  for (int t = 1; t < est.length(); ++t) {
    Tensor<T> mask = static_mask(gt.frames[t], gt.frames[t - 1], T(mask_alpha));
    acc += double(static_temporal_loss(est.frames[t], est.frames[t - 1], mask));
  }
  return db_from_loss(acc / double(est.length() - 1));
}

/// Temporal-statistics score: -20 log10 of the variance-map L1 distance.
template <typename T>
double variance_distance_metric(const FrameSequence<T>& est, const FrameSequence<T>& gt) {
  require(est.length() == gt.length(), "variance_distance_metric: sequence lengths differ");
  require(est.length() >= 2, "variance_distance_metric: need at least 2 frames");
  return db_from_loss(double(temporal_statistics_loss(est.frames, gt.frames)));
}

/// Mean PSNR between each frame and its predecessor warped by the supplied
/// n=1 flow, borders cropped to exclude clamp-to-edge artifacts.
template <typename T>
double warping_error_metric(const FrameSequence<T>& est, const std::vector<FlowStack<T>>& flows,
                            int border = 4) {
  require(est.length() >= 2, "warping_error_metric: need at least 2 frames");
  require(int(flows.size()) == est.length() - 1,
          "warping_error_metric: missing flow for a frame pair (need " +
              std::to_string(est.length() - 1) + ", got " + std::to_string(flows.size()) + ")");
  double acc = 0;
  for (int t = 1; t < est.length(); ++t) {
    Tensor<T> warped = multi_warp(est.frames[t - 1], flows[t - 1]);
    acc += psnr(crop_border(est.frames[t], border), crop_border(warped, border));
  }
  return acc / double(est.length() - 1);
}

/// Pluggable perceptual pair distance (e.g. an external LPIPS binding). The
/// repo ships only an MSE plug-in; absence of a plug-in marks the metric
/// unavailable rather than zero.
using PairDistance = std::function<double(const Tensor<double>&, const Tensor<double>&)>;

inline PairDistance mse_pair_distance() {
  return [](const Tensor<double>& a, const Tensor<double>& b) { return mse(a, b); };
}

template <typename T>
double temporal_perceptual_metric(const PairDistance& distance, const FrameSequence<T>& est,
                                  const FrameSequence<T>& gt) {
  require(bool(distance), "temporal_perceptual_metric: no pair distance supplied");
  require(est.length() == gt.length() && est.length() >= 2,
          "temporal_perceptual_metric: need equal lengths >= 2");
  double acc = 0;
  for (int t = 1; t < est.length(); ++t) {
    double de = distance(est.frames[t - 1].template cast<double>(),
                         est.frames[t].template cast<double>());
    double dg = distance(gt.frames[t - 1].template cast<double>(),
                         gt.frames[t].template cast<double>());
    acc += std::abs(de - dg);
  }
  return acc / double(est.length() - 1);
}

// ---------------------------------------------------------------------------
// Flow files: u32 height, u32 width, then u then v as little-endian float32.
// ---------------------------------------------------------------------------

inline void write_flow(const std::string& path, const Tensor<float>& u, const Tensor<float>& v) {
  check_same_shape(u, v, "write_flow");
  require(u.c == 1, "write_flow: single-coordinate flow expected");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("cannot write flow file: " + path);
  detail::put_u32(os, std::uint32_t(u.h));
  detail::put_u32(os, std::uint32_t(u.w));
  for (std::int64_t i = 0; i < u.size(); ++i) detail::put_f32(os, u.data[i]);
  for (std::int64_t i = 0; i < v.size(); ++i) detail::put_f32(os, v.data[i]);
  if (!os) fail("write failed for flow file: " + path);
}

template <typename T>
FlowStack<T> read_flow(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot open flow file: " + path);
  const int h = int(detail::get_u32(is));
  const int w = int(detail::get_u32(is));
  require(h > 0 && w > 0, "flow file has empty dims: " + path);
  FlowStack<T> f;
  f.u = Tensor<T>(h, w, 1);
  f.v = Tensor<T>(h, w, 1);
  f.w = Tensor<T>::constant(h, w, 1, T(1));
  for (std::int64_t i = 0; i < f.u.size(); ++i) f.u.data[i] = T(detail::get_f32(is));
  for (std::int64_t i = 0; i < f.v.size(); ++i) f.v.data[i] = T(detail::get_f32(is));
  if (!is) fail("truncated flow file: " + path);
  return f;
}

// ---------------------------------------------------------------------------
// Coordinate-count ablation
// ---------------------------------------------------------------------------

struct AblationRow {
  int n = 0;
  double warp_err_psnr = 0;
};

/// Warp-error PSNR of a fitted stack against the target, border-cropped.
template <typename T>
double warp_error_psnr(const Tensor<T>& prev, const Tensor<T>& target, const FlowStack<T>& flow,
                       int border = 4) {
  Tensor<T> warped = multi_warp(prev, flow);
  return psnr(crop_border(warped, border), crop_border(target, border));
}

/// Fit flows of increasing coordinate count to one frame pair, sharing the
/// seed, and report the final warp-error PSNR per n.
template <typename T>
std::vector<AblationRow> ablate_n(const Tensor<T>& prev, const Tensor<T>& target,
                                  const std::vector<int>& n_values, int steps,
                                  std::uint64_t seed = 0, double lr = 0.05) {
  check_same_shape(prev, target, "ablate_n");
  require(steps >= 1, "ablate_n: steps must be >= 1");
  std::vector<AblationRow> rows;
  for (int n : n_values) {
    FlowFitOptions opts;
    opts.steps = steps;
    opts.lr = lr;
    opts.seed = seed;
    FlowStack<T> flow = fit_flow_direct(prev, target, n, opts);
    rows.push_back({n, warp_error_psnr(prev, target, flow)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Sequence evaluation
// ---------------------------------------------------------------------------

struct SequenceScores {
  std::string name;
  std::optional<double> psnr_db, ssim_score, static_db, var_dist_db, warp_err_db, t_perceptual;
};

struct MetricsReport {
  std::vector<SequenceScores> per_sequence;
  SequenceScores aggregate;  // means over sequences; absent fields stay absent
};

struct EvalOptions {
  bool want_psnr = true;
  bool want_ssim = true;
  bool want_static = true;
  bool want_var_dist = true;
  bool want_warp_err = false;
  bool want_tperc = false;
  std::string flows_dir;  // required when want_warp_err
  PairDistance tperc;     // required to actually compute t_perceptual
  double mask_alpha = 100.0;
  int border = 4;
};

using SequenceUpscaler = std::function<FrameSequence<double>(const FrameSequence<double>& lr)>;

inline SequenceUpscaler bicubic_upscaler(int scale) {
  return [scale](const FrameSequence<double>& lr) {
    FrameSequence<double> out;
    for (const auto& f : lr.frames) {
      Tensor<double> up = resize_bicubic(f, f.h * scale, f.w * scale);
      up.data = up.data.min(1.0).max(0.0);
      out.frames.push_back(std::move(up));
    }
    return out;
  };
}

inline SequenceUpscaler nn_baseline_upscaler(int scale) {
  return [scale](const FrameSequence<double>& lr) {
    FrameSequence<double> out;
    for (const auto& f : lr.frames) out.frames.push_back(nn_upsample(f, scale));
    return out;
  };
}

/// Inference model from a training checkpoint: unrolls the recurrent
/// generator over the whole sequence at 32-bit precision, clamps to [0,1].
/// The discriminator is never touched.
inline SequenceUpscaler upscaler_from_checkpoint(const std::string& checkpoint_path) {
  auto st = std::make_shared<TrainerState<float>>(load_checkpoint<float>(checkpoint_path));
  return [st](const FrameSequence<double>& lr) {
    FrameSequence<float> lr32;
    for (const auto& f : lr.frames) lr32.frames.push_back(f.cast<float>());
    UnrollResult<float> r = unroll(st->gen, st->align, lr32, lr32.length());
    FrameSequence<double> out;
    for (auto& f : r.estimates.frames) {
      f.data = f.data.min(1.0f).max(0.0f);
      out.frames.push_back(f.cast<double>());
    }
    return out;
  };
}

template <typename Opt>
void accumulate(Opt& acc, const Opt& v, int count) {
  if (!v.has_value()) return;
  acc = acc.value_or(0.0) + *v / double(count);
}

/// Run inference over every sequence and compute all requested metrics.
/// Sequences are processed in name order; aggregates are means.
inline MetricsReport evaluate(const SequenceUpscaler& model,
                              std::vector<SequencePair<double>> dataset,
                              const EvalOptions& opt) {
  require(bool(model), "evaluate: no model");
  require(!dataset.empty(), "evaluate: empty dataset");
  std::sort(dataset.begin(), dataset.end(),
            [](const auto& a, const auto& b) { return a.name < b.name; });

  MetricsReport report;
  for (const auto& pair : dataset) {
    require(pair.hr.length() >= 2, "evaluate: sequence '" + pair.name + "' shorter than 2");
    FrameSequence<double> est = model(pair.lr);
    require(est.length() == pair.hr.length(),
            "evaluate: model returned wrong frame count for '" + pair.name + "'");

    SequenceScores s;
    s.name = pair.name;
    if (opt.want_psnr) {
      double acc = 0;
      for (int t = 0; t < est.length(); ++t) acc += psnr(est.frames[t], pair.hr.frames[t]);
      s.psnr_db = acc / est.length();
    }
    if (opt.want_ssim) {
      double acc = 0;
      for (int t = 0; t < est.length(); ++t) acc += ssim(est.frames[t], pair.hr.frames[t]);
      s.ssim_score = acc / est.length();
    }
    if (opt.want_static) s.static_db = static_metric(est, pair.hr, opt.mask_alpha);
    if (opt.want_var_dist) s.var_dist_db = variance_distance_metric(est, pair.hr);
    if (opt.want_warp_err && !opt.flows_dir.empty()) {
      namespace fs = std::filesystem;
      std::vector<FlowStack<double>> flows;
      for (int t = 1; t < est.length(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06d.flow", t);
        fs::path p = fs::path(opt.flows_dir) / pair.name / name;
        if (!fs::exists(p))
          fail("evaluate: missing flow for pair " + std::to_string(t) + " of '" + pair.name +
               "' (" + p.string() + ")");
        flows.push_back(read_flow<double>(p.string()));
      }
      s.warp_err_db = warping_error_metric(est, flows, opt.border);
    }
    if (opt.want_tperc && opt.tperc)
      s.t_perceptual = temporal_perceptual_metric(opt.tperc, est, pair.hr);
    report.per_sequence.push_back(std::move(s));
  }

  report.aggregate.name = "mean";
  const int n = int(report.per_sequence.size());
  for (const auto& s : report.per_sequence) {
    accumulate(report.aggregate.psnr_db, s.psnr_db, n);
    accumulate(report.aggregate.ssim_score, s.ssim_score, n);
    accumulate(report.aggregate.static_db, s.static_db, n);
    accumulate(report.aggregate.var_dist_db, s.var_dist_db, n);
    accumulate(report.aggregate.warp_err_db, s.warp_err_db, n);
    accumulate(report.aggregate.t_perceptual, s.t_perceptual, n);
  }
  return report;
}

inline std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(6);
  os << *v;
  return os.str();
}

inline void write_report_csv(const MetricsReport& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail("cannot write report: " + path);
  os << "sequence,psnr,ssim,static,var_dist,warp_err,t_perceptual\n";
  auto row = [&](const SequenceScores& s) {
    os << s.name << ',' << cell(s.psnr_db) << ',' << cell(s.ssim_score) << ','
       << cell(s.static_db) << ',' << cell(s.var_dist_db) << ',' << cell(s.warp_err_db) << ','
       << cell(s.t_perceptual) << "\n";
  };
  for (const auto& s : r.per_sequence) row(s);
  row(r.aggregate);
}

inline std::string format_report_text(const MetricsReport& r) {
  std::ostringstream os;
  auto field = [](const std::optional<double>& v) {
    if (!v) return std::string("absent");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return std::string(buf);
  };
  auto row = [&](const SequenceScores& s) {
    os << "  " << s.name << ": psnr=" << field(s.psnr_db) << " ssim=" << field(s.ssim_score)
       << " static=" << field(s.static_db) << " var_dist=" << field(s.var_dist_db)
       << " warp_err=" << field(s.warp_err_db) << " t_perceptual=" << field(s.t_perceptual)
       << "\n";
  };
  os << "per-sequence scores:\n";
  for (const auto& s : r.per_sequence) row(s);
  os << "aggregate (mean over " << r.per_sequence.size() << " sequences):\n";
  row(r.aggregate);
  return os.str();
}

}  // namespace vsr

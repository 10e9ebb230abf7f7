#pragma once

#include "vsr/archive.hpp"
#include "vsr/config.hpp"
#include "vsr/dataseq.hpp"
#include "vsr/discriminator.hpp"
#include "vsr/generator.hpp"
#include "vsr/losses.hpp"
#include "vsr/optim.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace vsr {

/// Everything one training run owns. Training runs at 32-bit precision; the
/// checkpoint stores parameters, optimizer state, RNG state and the resolved
/// config, so a resumed run continues the exact trajectory.
template <typename T = float>
struct TrainerState {
  TrainConfig cfg;
  Generator<T> gen;
  AlignNet<T> align;
  Discriminator<T> disc;
  FeatureExtractor<T> fe;
  ParamRegistry<T> g_reg;  // generator + alignment (updated together)
  ParamRegistry<T> d_reg;
  std::vector<Var<T>> g_params, d_params;
  Adam<T> opt_g, opt_d;
  std::mt19937_64 rng;
  std::int64_t iteration = 0;
  std::int64_t saturated_iters = 0;   // consecutive steps with d_fake < 1e-6
  std::int64_t saturation_window = 0; // iterations per epoch; 0 disables the warning

  bool in_pretrain_phase(std::int64_t pretrain_iters) const {
    return iteration < pretrain_iters;
  }
};

template <typename T = float>
TrainerState<T> make_trainer(const TrainConfig& cfg) {
  cfg.validate();
  TrainerState<T> st;
  st.cfg = cfg;

  AlignNetConfig ac;
  ac.n = cfg.n;
  ac.res_blocks = cfg.align_blocks;
  ac.filters = cfg.align_filters;
  ac.scale = cfg.scale;

  GeneratorConfig gc;
  gc.res_blocks = cfg.gen_blocks;
  gc.filters = cfg.gen_filters;
  gc.scale = cfg.scale;
  gc.inter_step = int(std::lround(std::sqrt(double(cfg.scale))));
  gc.motion_feature_channels = cfg.align_filters;

  DiscriminatorConfig dc;
  dc.blocks = cfg.disc_blocks;
  dc.base_filters = cfg.disc_base_filters;
  dc.dense_width = cfg.disc_dense_width;
  dc.T = cfg.T;
  dc.input_size = cfg.crop_hr;

  st.gen = Generator<T>::build(gc, cfg.seed * 1000003ull + 1);
  st.align = AlignNet<T>::build(ac, cfg.seed * 1000003ull + 2);
  st.disc = Discriminator<T>::build(dc, cfg.seed * 1000003ull + 3);

  FeatureExtractorConfig fc = feature_extractor_config(cfg);
  st.fe = cfg.fe_weights.empty() ? FeatureExtractor<T>::build(fc)
                                 : FeatureExtractor<T>::load(fc, cfg.fe_weights);

  st.gen.collect(st.g_reg, "gen");
  st.align.collect(st.g_reg, "align");
  st.disc.collect(st.d_reg, "disc");
  st.g_params = st.g_reg.param_list();
  st.d_params = st.d_reg.param_list();
  st.opt_g.lr = T(cfg.learning_rate);
  st.opt_d.lr = T(cfg.learning_rate);
  st.opt_g.init(st.g_params);
  st.opt_d.init(st.d_params);
  st.rng.seed(cfg.seed);
  return st;
}

template <typename T>
struct StepLog {
  double pixel = 0, adversarial = 0, texture = 0;
  double temporal_static = 0, temporal_stats = 0, combined = 0;
  double d_loss = 0, d_real = 0, d_fake = 0;
};

namespace detail {

template <typename T>
std::vector<Var<T>> as_stream(const FrameSequence<T>& seq) {
  std::vector<Var<T>> out;
  out.reserve(seq.frames.size());
  for (const auto& f : seq.frames) out.push_back(Var<T>::constant(f));
  return out;
}

template <typename T>
std::vector<Var<T>> clamped_stream(const std::vector<Var<T>>& estimates) {
  std::vector<Var<T>> out;
  out.reserve(estimates.size());
  for (const auto& e : estimates) out.push_back(clamp01(e));
  return out;
}

}  // namespace detail

/// Graph of every generator-side objective on one batch: unrolls each clip,
/// evaluates the discriminator freshly on the clamped estimates, and combines
/// the terms with the configured weights. No parameters change here.
template <typename T>
struct GeneratorLossGraph {
  std::vector<UnrollResultVar<T>> unrolls;
  Var<T> pixel, adversarial, texture, temporal_static, temporal_stats, combined;

  StepLog<T> log() const {
    StepLog<T> s;
    s.pixel = double(pixel.item());
    s.adversarial = double(adversarial.item());
    s.texture = double(texture.item());
    s.temporal_static = double(temporal_static.item());
    s.temporal_stats = double(temporal_stats.item());
    s.combined = double(combined.item());
    return s;
  }
};

template <typename T>
GeneratorLossGraph<T> build_generator_losses(TrainerState<T>& st, const ClipBatch<T>& batch) {
  batch.validate();
  const int B = batch.batch_size();
  const int steps = batch.hr[0].length();
  const T alpha = T(st.cfg.mask_alpha);

  GeneratorLossGraph<T> g;
  std::vector<Var<T>> pixel_terms, texture_terms, static_terms, stats_terms;
  std::vector<std::vector<Var<T>>> fake_streams;

  for (int b = 0; b < B; ++b) {
    UnrollResultVar<T> r = unroll_graph(st.gen, st.align, batch.lr[b].frames, steps);

    std::vector<Var<T>> l1s, texs;
    for (int t = 0; t < steps; ++t) {
      Var<T> gt = Var<T>::constant(batch.hr[b].frames[t]);
      l1s.push_back(l1_loss(r.estimates[t], gt));
      texs.push_back(texture_loss(st.fe, r.estimates[t], gt));
    }
    pixel_terms.push_back(mean_of(l1s));
    texture_terms.push_back(mean_of(texs));

    std::vector<Var<T>> tds;
    for (int t = 1; t < steps; ++t) {
      Tensor<T> mask;
      {
        NoGrad guard;  // masks come from ground truth only
        mask = static_mask(batch.hr[b].frames[t], batch.hr[b].frames[t - 1], alpha);
      }
      tds.push_back(
          static_temporal_loss(r.estimates[t], r.estimates[t - 1], Var<T>::constant(mask)));
    }
    static_terms.push_back(mean_of(tds));

    std::vector<Var<T>> gts;
    for (int t = 0; t < steps; ++t) gts.push_back(Var<T>::constant(batch.hr[b].frames[t]));
    stats_terms.push_back(temporal_statistics_loss(r.estimates, gts));

    fake_streams.push_back(detail::clamped_stream(r.estimates));
    g.unrolls.push_back(std::move(r));
  }

  // one adversarial scalar per stream, freshly evaluated
  std::vector<Var<T>> probs = st.disc.forward(fake_streams, /*train=*/true);
  std::vector<Var<T>> adv_terms;
  for (const auto& p : probs) adv_terms.push_back(adversarial_g_loss(p));

  g.pixel = mean_of(pixel_terms);
  g.texture = mean_of(texture_terms);
  g.temporal_static = mean_of(static_terms);
  g.temporal_stats = mean_of(stats_terms);
  g.adversarial = mean_of(adv_terms);
  g.combined = combined_loss(st.cfg.weights(), g.pixel, g.adversarial, g.texture,
                             g.temporal_static, g.temporal_stats);
  return g;
}

/// One gradient step on the pixel (L1) objective only; the discriminator is
/// untouched.
template <typename T>
double pretrain_step(TrainerState<T>& st, const ClipBatch<T>& batch) {
  batch.validate();
  const int B = batch.batch_size();
  const int steps = batch.hr[0].length();

  std::vector<Var<T>> pixel_terms;
  for (int b = 0; b < B; ++b) {
    UnrollResultVar<T> r = unroll_graph(st.gen, st.align, batch.lr[b].frames, steps);
    std::vector<Var<T>> l1s;
    for (int t = 0; t < steps; ++t)
      l1s.push_back(l1_loss(r.estimates[t], Var<T>::constant(batch.hr[b].frames[t])));
    pixel_terms.push_back(mean_of(l1s));
  }
  Var<T> loss = mean_of(pixel_terms);
  if (!std::isfinite(double(loss.item())))
    fail("pretrain_step: non-finite pixel loss at iteration " + std::to_string(st.iteration));

  st.g_reg.clear_grads();
  backward(loss);
  st.opt_g.step(st.g_params);
  st.g_reg.clear_grads();
  ++st.iteration;
  return double(loss.item());
}

/// One discriminator update on (real, detached fake) streams followed by one
/// generator+alignment update on the combined objective.
template <typename T>
StepLog<T> adversarial_step(TrainerState<T>& st, const ClipBatch<T>& batch) {
  batch.validate();
  const int B = batch.batch_size();
  const int steps = batch.hr[0].length();
  StepLog<T> log;

  // --- discriminator update; fake streams carry no generator graph
  {
    std::vector<std::vector<Var<T>>> real_streams, fake_streams;
    for (int b = 0; b < B; ++b) {
      real_streams.push_back(detail::as_stream(batch.hr[b]));
      NoGrad guard;
      UnrollResultVar<T> r = unroll_graph(st.gen, st.align, batch.lr[b].frames, steps);
      fake_streams.push_back(detail::clamped_stream(r.estimates));
    }
    std::vector<Var<T>> p_real = st.disc.forward(real_streams, /*train=*/true);
    std::vector<Var<T>> p_fake = st.disc.forward(fake_streams, /*train=*/true);
    std::vector<Var<T>> terms;
    for (int b = 0; b < B; ++b) {
      terms.push_back(adversarial_d_loss(p_real[b], p_fake[b]));
      log.d_real += double(p_real[b].item()) / B;
      log.d_fake += double(p_fake[b].item()) / B;
    }
    Var<T> d_loss = mean_of(terms);
    if (!std::isfinite(double(d_loss.item())))
      fail("adversarial_step: non-finite discriminator loss at iteration " +
           std::to_string(st.iteration));
    log.d_loss = double(d_loss.item());
    st.d_reg.clear_grads();
    backward(d_loss);
    st.opt_d.step(st.d_params);
    st.d_reg.clear_grads();
  }

  // --- generator + alignment update (combined_loss checks every term finite)
  {
    GeneratorLossGraph<T> g = build_generator_losses(st, batch);
    StepLog<T> terms = g.log();
    log.pixel = terms.pixel;
    log.adversarial = terms.adversarial;
    log.texture = terms.texture;
    log.temporal_static = terms.temporal_static;
    log.temporal_stats = terms.temporal_stats;
    log.combined = terms.combined;
    st.g_reg.clear_grads();
    st.d_reg.clear_grads();
    backward(g.combined);
    st.opt_g.step(st.g_params);
    st.g_reg.clear_grads();
    st.d_reg.clear_grads();  // discard gradients that flowed into D
  }

  if (log.d_fake < 1e-6) {
    if (++st.saturated_iters == st.saturation_window && st.saturation_window > 0)
      std::cerr << "warning: discriminator saturated (d_fake < 1e-6) for a full epoch ("
                << st.saturation_window << " iterations)\n";
  } else {
    st.saturated_iters = 0;
  }
  ++st.iteration;
  return log;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
void add_registry(TensorArchive& a, const ParamRegistry<T>& reg) {
  for (const auto& [name, p] : reg.params) a.add(name, p.value().template cast<float>());
  for (const auto& [name, t] : reg.buffers) a.add(name, t->template cast<float>());
}

template <typename T>
void add_adam(TensorArchive& a, const std::string& prefix, const Adam<T>& opt,
              const ParamRegistry<T>& reg) {
  for (std::size_t i = 0; i < reg.params.size(); ++i) {
    a.add(prefix + ".m." + reg.params[i].first, opt.m[i].template cast<float>());
    a.add(prefix + ".v." + reg.params[i].first, opt.v[i].template cast<float>());
  }
  a.meta[prefix + ".steps"] = std::to_string(opt.step_count);
}

template <typename T>
void restore_registry(const TensorArchive& a, ParamRegistry<T>& reg) {
  for (auto& [name, p] : reg.params) {
    const Tensor<float>& t = a.get(name);
    require(t.h == p.value().h && t.w == p.value().w && t.c == p.value().c,
            "checkpoint: tensor '" + name + "' has shape " + t.shape_str() + ", expected " +
                p.value().shape_str());
    p.mutable_value() = t.template cast<T>();
  }
  for (auto& [name, t] : reg.buffers) *t = a.get(name).template cast<T>();
}

template <typename T>
void restore_adam(const TensorArchive& a, const std::string& prefix, Adam<T>& opt,
                  const ParamRegistry<T>& reg) {
  for (std::size_t i = 0; i < reg.params.size(); ++i) {
    opt.m[i] = a.get(prefix + ".m." + reg.params[i].first).template cast<T>();
    opt.v[i] = a.get(prefix + ".v." + reg.params[i].first).template cast<T>();
  }
  opt.step_count = std::stoll(a.meta.at(prefix + ".steps"));
}
}  // namespace detail

template <typename T>
void save_checkpoint(const TrainerState<T>& st, const std::string& path) {
  TensorArchive a;
  a.meta["kind"] = "checkpoint";
  a.meta["config"] = st.cfg.canonical_string();
  char fp[32];
  std::snprintf(fp, sizeof(fp), "%016llx", (unsigned long long)st.cfg.fingerprint());
  a.meta["fingerprint"] = fp;
  a.meta["iteration"] = std::to_string(st.iteration);
  a.meta["saturated_iters"] = std::to_string(st.saturated_iters);
  std::ostringstream rs;
  rs << st.rng;
  a.meta["rng"] = rs.str();
  detail::add_registry(a, st.g_reg);
  detail::add_registry(a, st.d_reg);
  detail::add_adam(a, "opt_g", st.opt_g, st.g_reg);
  detail::add_adam(a, "opt_d", st.opt_d, st.d_reg);
  a.save(path);
}

/// Rebuild a trainer from a checkpoint. When `expected` is given its
/// fingerprint must match the stored one unless `allow_mismatch`; without
/// `expected` the config embedded in the checkpoint is used.
template <typename T = float>
TrainerState<T> load_checkpoint(const std::string& path, const TrainConfig* expected = nullptr,
                                bool allow_mismatch = false) {
  TensorArchive a = TensorArchive::load(path);
  if (a.meta.count("kind") == 0 || a.meta.at("kind") != "checkpoint")
    fail("not a training checkpoint: " + path);

  TrainConfig cfg;
  {
    std::istringstream is(a.meta.at("config"));
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto eq = line.find('=');
      cfg.set(line.substr(0, eq), line.substr(eq + 1));
    }
  }
  if (expected) {
    char fp[32];
    std::snprintf(fp, sizeof(fp), "%016llx", (unsigned long long)expected->fingerprint());
    if (a.meta.at("fingerprint") != fp) {
      if (!allow_mismatch)
        fail("checkpoint fingerprint mismatch for " + path +
             " (stored " + a.meta.at("fingerprint") + ", expected " + fp +
             "); pass the override flag to load anyway");
    }
    cfg = *expected;
  }

  TrainerState<T> st = make_trainer<T>(cfg);
  detail::restore_registry(a, st.g_reg);
  detail::restore_registry(a, st.d_reg);
  detail::restore_adam(a, "opt_g", st.opt_g, st.g_reg);
  detail::restore_adam(a, "opt_d", st.opt_d, st.d_reg);
  st.iteration = std::stoll(a.meta.at("iteration"));
  st.saturated_iters = std::stoll(a.meta.at("saturated_iters"));
  std::istringstream rs(a.meta.at("rng"));
  rs >> st.rng;
  return st;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

inline std::int64_t iterations_per_epoch(std::int64_t clips, int batch) {
  return (clips + batch - 1) / batch;
}

template <typename T>
std::int64_t resolve_pretrain_iters(const TrainConfig& cfg, std::int64_t clips) {
  if (cfg.pretrain_iters >= 0) return cfg.pretrain_iters;
  return std::int64_t(std::llround(cfg.pretrain_epochs * double(iterations_per_epoch(clips, cfg.batch))));
}

template <typename T>
std::int64_t resolve_main_iters(const TrainConfig& cfg, std::int64_t clips) {
  if (cfg.main_iters >= 0) return cfg.main_iters;
  return std::int64_t(std::llround(cfg.main_epochs * double(iterations_per_epoch(clips, cfg.batch))));
}

/// Full run: pretraining phase then adversarial phase, CSV loss log with every
/// objective term per iteration, checkpoints at the configured interval and a
/// final one. Resuming from a checkpoint reproduces the uninterrupted
/// trajectory bit for bit.
template <typename T = float>
TrainerState<T> train(const TrainConfig& cfg, const std::vector<SequencePair<T>>& dataset,
                      const std::string& resume_path = "") {
  cfg.validate();
  require(!dataset.empty(), "train: empty dataset");
  for (const auto& p : dataset) {
    p.hr.validate();
    if (p.hr.length() < cfg.T)
      fail("train: sequence '" + p.name + "' has " + std::to_string(p.hr.length()) +
           " frames, need T=" + std::to_string(cfg.T));
    if (p.hr.height() < cfg.crop_hr || p.hr.width() < cfg.crop_hr)
      fail("train: sequence '" + p.name + "' smaller than crop_hr=" +
           std::to_string(cfg.crop_hr));
  }

  const std::int64_t pretrain_iters = resolve_pretrain_iters<T>(cfg, std::int64_t(dataset.size()));
  const std::int64_t total_iters = pretrain_iters + resolve_main_iters<T>(cfg, std::int64_t(dataset.size()));

  TrainerState<T> st =
      resume_path.empty() ? make_trainer<T>(cfg) : load_checkpoint<T>(resume_path, &cfg);
  st.saturation_window = iterations_per_epoch(std::int64_t(dataset.size()), cfg.batch);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const std::string log_path = (fs::path(cfg.out_dir) / "training_log.csv").string();
  std::ofstream log(log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!log) fail("train: cannot write log file " + log_path);
  if (resume_path.empty())
    log << "iteration,phase,pixel,adversarial,texture,temporal_static,temporal_stats,combined,"
           "d_loss,d_real,d_fake,wall_time_s\n";

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  while (st.iteration < total_iters) {
    ClipBatch<T> batch =
        sample_clip_batch(dataset, cfg.batch, cfg.T, cfg.crop_hr, cfg.scale, st.rng);
    if (st.in_pretrain_phase(pretrain_iters)) {
      double l = pretrain_step(st, batch);
      log << st.iteration << ",pretrain," << l << ",,,,," << (cfg.w_pixel * l) << ",,,,"
          << elapsed() << "\n";
    } else {
      StepLog<T> s = adversarial_step(st, batch);
      log << st.iteration << ",adversarial," << s.pixel << "," << s.adversarial << ","
          << s.texture << "," << s.temporal_static << "," << s.temporal_stats << ","
          << s.combined << "," << s.d_loss << "," << s.d_real << "," << s.d_fake << ","
          << elapsed() << "\n";
    }
    if (st.iteration % cfg.checkpoint_interval == 0 || st.iteration == total_iters) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%08lld.vsra", (long long)st.iteration);
      save_checkpoint(st, (fs::path(cfg.out_dir) / name).string());
      log.flush();
    }
  }
  save_checkpoint(st, (fs::path(cfg.out_dir) / "checkpoint_final.vsra").string());
  return st;
}

}  // namespace vsr

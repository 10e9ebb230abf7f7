#pragma once

#include "vsr/dataseq.hpp"
#include "vsr/losses.hpp"
#include "vsr/tensor.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace vsr {

/// Full training configuration. Mirrors the flat key=value config file; every
/// key is listed in `schema()` and unknown keys are rejected.
struct TrainConfig {
  // data
  std::string train_manifest;
  std::string holdout_manifest;
  std::string lr_kernel = "bicubic";
  // shapes
  int scale = 4;
  int T = 10;
  int batch = 8;
  int crop_hr = 256;
  // alignment network
  int n = 5;
  int align_blocks = 10;
  int align_filters = 64;
  // generator
  int gen_blocks = 10;
  int gen_filters = 64;
  // discriminator
  int disc_blocks = 5;
  int disc_base_filters = 64;
  int disc_dense_width = 1024;
  // texture feature extractor
  std::string fe_channels = "8,16";
  std::string fe_strides = "1,2";
  int fe_kernel = 3;
  std::uint64_t fe_seed = 7;
  std::string fe_weights;  // optional archive of pretrained weights
  // optimization
  double learning_rate = 1e-4;
  std::int64_t pretrain_iters = -1;  // <0: derive from pretrain_epochs
  double pretrain_epochs = 2;
  std::int64_t main_iters = -1;  // <0: derive from main_epochs
  double main_epochs = 4;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_interval = 500;
  std::string out_dir = "runs/default";
  // loss weights
  double w_pixel = 0.01;
  double w_adversarial = 0.005;
  double w_texture = 1.0;
  double w_temporal = 0.1;
  double mask_alpha = 100.0;

  LossWeights weights() const {
    LossWeights w;
    w.pixel = w_pixel;
    w.adversarial = w_adversarial;
    w.texture = w_texture;
    w.temporal = w_temporal;
    w.mask_sharpness = mask_alpha;
    return w;
  }

  void validate() const {
    require(batch >= 1, "config: batch must be >= 1");
    require(T >= 2, "config: T must be >= 2 for the temporal losses");
    require(scale >= 1, "config: scale must be >= 1");
    require(crop_hr % scale == 0, "config: crop_hr must be divisible by scale");
    require(crop_hr % (1 << disc_blocks) == 0,
            "config: crop_hr must be divisible by 2^disc_blocks");
    require(n >= 1, "config: n must be >= 1");
    require(learning_rate > 0, "config: learning_rate must be positive");
    require(checkpoint_interval >= 1, "config: checkpoint_interval must be >= 1");
    parse_kernel(lr_kernel);
    weights().validate();
  }

  // --- key=value plumbing -------------------------------------------------

  using Setter = std::function<void(TrainConfig&, const std::string&)>;

  static const std::map<std::string, Setter>& schema();

  void set(const std::string& key, const std::string& value) {
    auto it = schema().find(key);
    if (it == schema().end()) fail("unknown config key '" + key + "'");
    it->second(*this, value);
  }

  static TrainConfig from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail("cannot open config file: " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
      auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        s.erase(0, s.find_first_not_of(ws));
        if (auto e = s.find_last_not_of(ws); e != std::string::npos) s.erase(e + 1);
        else s.clear();
        return s;
      };
      std::string t = trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        fail("config " + path + ":" + std::to_string(lineno) + ": expected key = value");
      cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
  }

  /// Apply "key=value" strings (CLI overrides), after file parsing.
  void apply_overrides(const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
      auto eq = o.find('=');
      if (eq == std::string::npos) fail("override '" + o + "' is not of the form key=value");
      set(o.substr(0, eq), o.substr(eq + 1));
    }
  }

  std::string canonical_string() const;

  /// FNV-1a over the canonical key=value dump (out_dir excluded): identifies
  /// the architecture+training recipe a checkpoint belongs to.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : canonical_string()) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    return h;
  }
};

namespace detail {
inline std::int64_t parse_i64(const std::string& s) {
  std::size_t pos = 0;
  std::int64_t v = std::stoll(s, &pos);
  if (pos != s.size()) fail("bad integer value '" + s + "'");
  return v;
}
inline double parse_f64(const std::string& s) {
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) fail("bad numeric value '" + s + "'");
  return v;
}
inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(int(parse_i64(item)));
  return out;
}
}  // namespace detail

inline const std::map<std::string, TrainConfig::Setter>& TrainConfig::schema() {
  using C = TrainConfig;
  auto i = [](int C::* f) {
    return [f](C& c, const std::string& v) { c.*f = int(detail::parse_i64(v)); };
  };
  auto i64 = [](std::int64_t C::* f) {
    return [f](C& c, const std::string& v) { c.*f = detail::parse_i64(v); };
  };
  auto u64 = [](std::uint64_t C::* f) {
    return [f](C& c, const std::string& v) { c.*f = std::uint64_t(detail::parse_i64(v)); };
  };
  auto d = [](double C::* f) {
    return [f](C& c, const std::string& v) { c.*f = detail::parse_f64(v); };
  };
  auto s = [](std::string C::* f) {
    return [f](C& c, const std::string& v) { c.*f = v; };
  };
  static const std::map<std::string, Setter> m = {
      {"train_manifest", s(&C::train_manifest)},
      {"holdout_manifest", s(&C::holdout_manifest)},
      {"lr_kernel", s(&C::lr_kernel)},
      {"scale", i(&C::scale)},
      {"T", i(&C::T)},
      {"batch", i(&C::batch)},
      {"crop_hr", i(&C::crop_hr)},
      {"n", i(&C::n)},
      {"align_blocks", i(&C::align_blocks)},
      {"align_filters", i(&C::align_filters)},
      {"gen_blocks", i(&C::gen_blocks)},
      {"gen_filters", i(&C::gen_filters)},
      {"disc_blocks", i(&C::disc_blocks)},
      {"disc_base_filters", i(&C::disc_base_filters)},
      {"disc_dense_width", i(&C::disc_dense_width)},
      {"fe_channels", s(&C::fe_channels)},
      {"fe_strides", s(&C::fe_strides)},
      {"fe_kernel", i(&C::fe_kernel)},
      {"fe_seed", u64(&C::fe_seed)},
      {"fe_weights", s(&C::fe_weights)},
      {"learning_rate", d(&C::learning_rate)},
      {"pretrain_iters", i64(&C::pretrain_iters)},
      {"pretrain_epochs", d(&C::pretrain_epochs)},
      {"main_iters", i64(&C::main_iters)},
      {"main_epochs", d(&C::main_epochs)},
      {"seed", u64(&C::seed)},
      {"checkpoint_interval", i64(&C::checkpoint_interval)},
      {"out_dir", s(&C::out_dir)},
      {"w_pixel", d(&C::w_pixel)},
      {"w_adversarial", d(&C::w_adversarial)},
      {"w_texture", d(&C::w_texture)},
      {"w_temporal", d(&C::w_temporal)},
      {"mask_alpha", d(&C::mask_alpha)},
  };
  return m;
}

inline std::string TrainConfig::canonical_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "train_manifest=" << train_manifest << "\nholdout_manifest=" << holdout_manifest
     << "\nlr_kernel=" << lr_kernel << "\nscale=" << scale << "\nT=" << T << "\nbatch=" << batch
     << "\ncrop_hr=" << crop_hr << "\nn=" << n << "\nalign_blocks=" << align_blocks
     << "\nalign_filters=" << align_filters << "\ngen_blocks=" << gen_blocks
     << "\ngen_filters=" << gen_filters << "\ndisc_blocks=" << disc_blocks
     << "\ndisc_base_filters=" << disc_base_filters << "\ndisc_dense_width=" << disc_dense_width
     << "\nfe_channels=" << fe_channels << "\nfe_strides=" << fe_strides
     << "\nfe_kernel=" << fe_kernel << "\nfe_seed=" << fe_seed << "\nfe_weights=" << fe_weights
     << "\nlearning_rate=" << learning_rate << "\npretrain_iters=" << pretrain_iters
     << "\npretrain_epochs=" << pretrain_epochs << "\nmain_iters=" << main_iters
     << "\nmain_epochs=" << main_epochs << "\nseed=" << seed
     << "\ncheckpoint_interval=" << checkpoint_interval << "\nw_pixel=" << w_pixel
     << "\nw_adversarial=" << w_adversarial << "\nw_texture=" << w_texture
     << "\nw_temporal=" << w_temporal << "\nmask_alpha=" << mask_alpha << "\n";
  return os.str();
}

inline FeatureExtractorConfig feature_extractor_config(const TrainConfig& cfg) {
  FeatureExtractorConfig fc;
  fc.channels = detail::parse_int_list(cfg.fe_channels);
  fc.strides = detail::parse_int_list(cfg.fe_strides);
  fc.kernel = cfg.fe_kernel;
  fc.seed = cfg.fe_seed;
  fc.validate();
  return fc;
}

}  // namespace vsr

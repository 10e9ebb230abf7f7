// Command-line entry points: train, infer, eval, ablate-n.
// Exit codes: 0 success, 2 usage/config error, 3 runtime failure.

#include <CLI11.hpp>

#include "vsr/config.hpp"
#include "vsr/dataseq.hpp"
#include "vsr/metrics.hpp"
#include "vsr/toydata.hpp"
#include "vsr/trainer.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace vsr;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string default_out(const std::string& leaf) {
  const char* root = std::getenv("VSR_OUT_ROOT");
  return ((root && *root) ? fs::path(root) : fs::path("vsr_out")) / leaf;
}

std::string resolve_against(const std::string& base_file, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base_file).parent_path() / path).string();
}

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string in_path;
  std::string out_path;
  std::string metrics = "psnr,ssim,static,var,tperc";
  std::string flows;
  std::int64_t seed = -1;
};

TrainConfig load_config(const CommonArgs& args) {
  TrainConfig cfg;
  if (!args.config_path.empty()) {
    cfg = TrainConfig::from_file(args.config_path);
    cfg.train_manifest = resolve_against(args.config_path, cfg.train_manifest);
    cfg.holdout_manifest = resolve_against(args.config_path, cfg.holdout_manifest);
    cfg.fe_weights = resolve_against(args.config_path, cfg.fe_weights);
  }
  std::vector<std::string> overrides;
  for (const auto& o : args.overrides)
    if (o.rfind("baseline=", 0) != 0) overrides.push_back(o);  // eval-only pseudo-key
  cfg.apply_overrides(overrides);
  if (args.seed >= 0) cfg.seed = std::uint64_t(args.seed);
  if (!args.out_path.empty()) cfg.out_dir = args.out_path;
  return cfg;
}

int cmd_train(const CommonArgs& args) {
  TrainConfig cfg;
  std::vector<SequencePair<float>> dataset;
  try {
    if (args.config_path.empty()) fail("train: --config is required");
    cfg = load_config(args);
    if (args.out_path.empty() && cfg.out_dir == "runs/default")
      cfg.out_dir = default_out("train");
    cfg.validate();
    if (cfg.train_manifest.empty()) fail("train: config must set train_manifest");
    dataset = load_manifest<float>(cfg.train_manifest, cfg.scale, parse_kernel(cfg.lr_kernel));
    if (dataset.empty()) fail("train: manifest lists no sequences");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    train(cfg, dataset, args.checkpoint);
    std::cout << "training finished; outputs in " << cfg.out_dir << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_infer(const CommonArgs& args) {
  FrameSequence<double> lr;
  std::vector<std::string> names;
  std::string out_dir;
  SequenceUpscaler model;
  try {
    if (args.checkpoint.empty()) fail("infer: --checkpoint is required");
    if (args.in_path.empty()) fail("infer: --in is required");
    if (!fs::exists(args.checkpoint)) fail("infer: missing checkpoint " + args.checkpoint);
    out_dir = args.out_path.empty() ? default_out("infer") : args.out_path;
    lr = load_sequence<double>(args.in_path);
    for (const auto& e : fs::directory_iterator(args.in_path)) {
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
      if (e.is_regular_file() && ext == ".png") names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    model = upscaler_from_checkpoint(args.checkpoint);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    FrameSequence<double> est = model(lr);
    fs::create_directories(out_dir);
    for (int t = 0; t < est.length(); ++t)
      write_png((fs::path(out_dir) / names[t]).string(), from_tensor(est.frames[t]));
    std::cout << "wrote " << est.length() << " frames to " << out_dir << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_eval(const CommonArgs& args) {
  std::vector<SequencePair<double>> dataset;
  SequenceUpscaler model;
  EvalOptions opt;
  std::string out_dir;
  try {
    TrainConfig cfg = load_config(args);
    std::string baseline;
    for (const auto& o : args.overrides)
      if (o.rfind("baseline=", 0) == 0) baseline = o.substr(9);
    out_dir = args.out_path.empty() ? default_out("eval") : args.out_path;
    if (args.in_path.empty()) fail("eval: --in manifest is required");
    dataset = load_manifest<double>(args.in_path, cfg.scale, parse_kernel(cfg.lr_kernel));
    if (dataset.empty()) fail("eval: empty dataset");

    if (!baseline.empty()) {
      if (baseline == "bicubic") model = bicubic_upscaler(cfg.scale);
      else if (baseline == "nn") model = nn_baseline_upscaler(cfg.scale);
      else fail("eval: unknown baseline '" + baseline + "' (expected bicubic|nn)");
    } else {
      if (args.checkpoint.empty()) fail("eval: --checkpoint or --set baseline=... is required");
      if (!fs::exists(args.checkpoint)) fail("eval: missing checkpoint " + args.checkpoint);
      model = upscaler_from_checkpoint(args.checkpoint);
    }

    opt.want_psnr = opt.want_ssim = opt.want_static = opt.want_var_dist = false;
    opt.mask_alpha = cfg.mask_alpha;
    std::stringstream ss(args.metrics);
    std::string m;
    while (std::getline(ss, m, ',')) {
      if (m == "psnr") opt.want_psnr = true;
      else if (m == "ssim") opt.want_ssim = true;
      else if (m == "static") opt.want_static = true;
      else if (m == "var") opt.want_var_dist = true;
      else if (m == "warp") {
        opt.want_warp_err = true;
        if (args.flows.empty()) fail("eval: metric 'warp' needs --flows");
        opt.flows_dir = args.flows;
      } else if (m == "tperc") {
        opt.want_tperc = true;  // stays absent unless a plug-in is named
      } else if (m == "tperc=mse") {
        opt.want_tperc = true;
        opt.tperc = mse_pair_distance();
      } else {
        fail("eval: unknown metric '" + m + "'");
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    MetricsReport report = evaluate(model, dataset, opt);
    fs::create_directories(out_dir);
    write_report_csv(report, (fs::path(out_dir) / "report.csv").string());
    std::string text = format_report_text(report);
    std::ofstream((fs::path(out_dir) / "report.txt").string()) << text;
    std::cout << text;
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_ablate_n(const CommonArgs& args) {
  Tensor<double> prev, target;
  std::vector<int> n_values{1, 2, 5};
  int steps = 500;
  double lr = 0.05;
  std::uint64_t seed = args.seed >= 0 ? std::uint64_t(args.seed) : 0;
  std::string out_path;
  try {
    if (args.in_path.empty()) fail("ablate-n: --in frame directory is required");
    out_path = args.out_path.empty() ? default_out("ablate_n.csv") : args.out_path;
    for (const auto& o : args.overrides) {
      auto eq = o.find('=');
      if (eq == std::string::npos) fail("override '" + o + "' is not key=value");
      std::string k = o.substr(0, eq), v = o.substr(eq + 1);
      if (k == "n_list") n_values = detail::parse_int_list(v);
      else if (k == "steps") steps = int(detail::parse_i64(v));
      else if (k == "lr") lr = detail::parse_f64(v);
      else fail("ablate-n: unknown key '" + k + "'");
    }
    FrameSequence<double> seq = load_sequence<double>(args.in_path);
    if (seq.length() < 2)
      fail("ablate-n: need at least 2 frames, got " + std::to_string(seq.length()));
    prev = seq.frames[0];
    target = seq.frames[1];
    if (steps < 1) fail("ablate-n: steps must be >= 1");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    auto rows = ablate_n(prev, target, n_values, steps, seed, lr);
    if (fs::path(out_path).has_parent_path())
      fs::create_directories(fs::path(out_path).parent_path());
    std::ofstream os(out_path);
    if (!os) fail("cannot write " + out_path);
    os << "n,warp_err_psnr\n";
    for (const auto& r : rows) {
      os << r.n << ',' << r.warp_err_psnr << "\n";
      std::cout << "n=" << r.n << "  warp-error PSNR " << r.warp_err_psnr << " dB\n";
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frame-recurrent adversarial video upscaler"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "flat key=value config file");
    cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
    cmd->add_option("--seed", args.seed, "random seed override");
    cmd->add_option("--checkpoint", args.checkpoint, "checkpoint archive path");
    cmd->add_option("--in", args.in_path, "input path");
    cmd->add_option("--out", args.out_path, "output path (default under $VSR_OUT_ROOT)");
    cmd->add_option("--metrics", args.metrics,
                    "comma list: psnr,ssim,static,var,warp,tperc[=mse]");
    cmd->add_option("--flows", args.flows, "directory of external flow files");
  };

  CLI::App* c_train = app.add_subcommand("train", "train on a manifest dataset");
  CLI::App* c_infer = app.add_subcommand("infer", "upscale an LR frame directory");
  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint or baseline");
  CLI::App* c_ablate = app.add_subcommand("ablate-n", "warp-error PSNR vs coordinate count");
  for (auto* c : {c_train, c_infer, c_eval, c_ablate}) add_common(c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (c_train->parsed()) return cmd_train(args);
    if (c_infer->parsed()) return cmd_infer(args);
    if (c_eval->parsed()) return cmd_eval(args);
    if (c_ablate->parsed()) return cmd_ablate_n(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

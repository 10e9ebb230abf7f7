// Writes the bundled synthetic dataset to disk: PNG clips, train/holdout
// manifests, exact flow files for the pure-pan clips, and a ready-to-run
// training config sized for a desktop CPU.

#include <CLI11.hpp>

#include "vsr/dataseq.hpp"
#include "vsr/metrics.hpp"
#include "vsr/toydata.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace vsr;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic toy dataset generator"};
  std::string out = "toy_data";
  int clips = 24, frames = 10, size = 128, scale = 4, holdout = 6;
  std::uint64_t seed = 1;
  app.add_option("--out", out, "output directory");
  app.add_option("--clips", clips, "total number of clips");
  app.add_option("--frames", frames, "frames per clip");
  app.add_option("--size", size, "HR frame size (square)");
  app.add_option("--scale", scale, "downsampling factor");
  app.add_option("--holdout", holdout, "clips reserved for the holdout manifest");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    ToyParams params;
    params.hr_size = size;
    params.frames = frames;
    params.clips = clips;
    params.seed = seed;
    auto toy = make_toy_clips<float>(params);

    fs::create_directories(fs::path(out) / "clips");
    fs::create_directories(fs::path(out) / "flows");
    std::ofstream train_m((fs::path(out) / "train_manifest.txt").string());
    std::ofstream hold_m((fs::path(out) / "holdout_manifest.txt").string());

    for (int i = 0; i < clips; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "toy_%03d", i);
      fs::path clip_dir = fs::path(out) / "clips" / name;
      write_sequence((clip_dir / "hr").string(), toy[i].hr);
      write_sequence((clip_dir / "lr").string(), make_lr(toy[i].hr, scale));
      std::string line = (fs::path("clips") / name / "hr").string() + "\t" +
                         (fs::path("clips") / name / "lr").string() + "\n";
      (i < clips - holdout ? train_m : hold_m) << line;

      if (toy[i].pure_pan) {
        fs::path flow_dir = fs::path(out) / "flows" / name;
        fs::create_directories(flow_dir);
        for (int t = 1; t < frames; ++t) {
          char fname[32];
          std::snprintf(fname, sizeof(fname), "%06d.flow", t);
          Tensor<float> u = Tensor<float>::constant(size, size, 1, float(toy[i].flow_u));
          Tensor<float> v = Tensor<float>::constant(size, size, 1, float(toy[i].flow_v));
          write_flow((flow_dir / fname).string(), u, v);
        }
      }
    }

    std::ofstream cfg((fs::path(out) / "toy.cfg").string());
    cfg << "# desktop-scale training recipe for the bundled toy dataset\n"
        << "train_manifest = train_manifest.txt\n"
        << "holdout_manifest = holdout_manifest.txt\n"
        << "scale = " << scale << "\n"
        << "T = 5\n"
        << "batch = 2\n"
        << "crop_hr = 64\n"
        << "n = 3\n"
        << "align_blocks = 2\n"
        << "align_filters = 16\n"
        << "gen_blocks = 3\n"
        << "gen_filters = 16\n"
        << "disc_blocks = 4\n"
        << "disc_base_filters = 16\n"
        << "disc_dense_width = 64\n"
        << "fe_channels = 8,12\n"
        << "fe_strides = 1,2\n"
        << "learning_rate = 2e-4\n"
        << "pretrain_iters = 2000\n"
        << "main_iters = 500\n"
        << "checkpoint_interval = 500\n"
        << "seed = 0\n";

    std::cout << "wrote " << clips << " clips (" << holdout << " held out) under " << out << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

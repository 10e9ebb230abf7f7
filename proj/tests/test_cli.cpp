#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// End-to-end checks of the installed CLI binary via subprocesses.

#include "support.hpp"

#include "vsr/dataseq.hpp"
#include "vsr/toydata.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace vsr;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "vsr_cli_tests";

int run(const std::string& cmdline, std::string* output = nullptr) {
  const fs::path log = kRoot / "cmd_output.txt";
  std::string full = std::string(VSR_CLI_PATH) + " " + cmdline + " > " + log.string() + " 2>&1";
  int rc = std::system(full.c_str());
  if (output) {
    std::ifstream is(log);
    std::stringstream ss;
    ss << is.rdbuf();
    *output = ss.str();
  }
  return WEXITSTATUS(rc);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(bool(is));
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// one-time fixture: a tiny on-disk toy dataset and config
struct Fixture {
  fs::path data = kRoot / "data";
  fs::path cfg_path = kRoot / "tiny.cfg";

  Fixture() {
    fs::remove_all(kRoot);
    fs::create_directories(data / "clips");
    ToyParams p;
    p.hr_size = 16;
    p.frames = 4;
    p.clips = 3;
    p.seed = 21;
    auto toy = make_toy_clips<float>(p);
    std::ofstream manifest((data / "train_manifest.txt").string());
    for (int i = 0; i < 3; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "toy_%03d", i);
      write_sequence((data / "clips" / name / "hr").string(), toy[i].hr);
      manifest << (fs::path("clips") / name / "hr").string() << "\n";
    }
    std::ofstream cfg(cfg_path.string());
    cfg << "train_manifest = data/train_manifest.txt\n"
        << "scale = 4\nT = 3\nbatch = 1\ncrop_hr = 16\nn = 2\n"
        << "align_blocks = 1\nalign_filters = 6\ngen_blocks = 1\ngen_filters = 8\n"
        << "disc_blocks = 2\ndisc_base_filters = 4\ndisc_dense_width = 8\n"
        << "fe_channels = 4\nfe_strides = 1\n"
        << "learning_rate = 1e-3\npretrain_iters = 3\nmain_iters = 1\n"
        << "checkpoint_interval = 100\nseed = 1\n";
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("train: smoke run produces checkpoint and loss CSV") {
  auto& f = fixture();
  const fs::path out = kRoot / "run1";
  std::string output;
  int rc = run("train --config " + f.cfg_path.string() + " --out " + out.string(), &output);
  INFO(output);
  CHECK(rc == 0);
  CHECK(fs::exists(out / "checkpoint_final.vsra"));
  CHECK(fs::exists(out / "training_log.csv"));
  std::string log = file_bytes(out / "training_log.csv");
  CHECK(log.find("pretrain") != std::string::npos);
  CHECK(log.find("adversarial") != std::string::npos);
}

TEST_CASE("train: unknown override key exits 2 and names the key") {
  auto& f = fixture();
  std::string output;
  int rc = run("train --config " + f.cfg_path.string() + " --set bogus_knob=1", &output);
  CHECK(rc == 2);
  CHECK(output.find("bogus_knob") != std::string::npos);
}

TEST_CASE("train: same seed twice gives identical checkpoints") {
  auto& f = fixture();
  const fs::path out_a = kRoot / "det_a", out_b = kRoot / "det_b";
  std::string output;
  CHECK(run("train --config " + f.cfg_path.string() + " --seed 5 --out " + out_a.string(),
            &output) == 0);
  CHECK(run("train --config " + f.cfg_path.string() + " --seed 5 --out " + out_b.string(),
            &output) == 0);
  CHECK(file_bytes(out_a / "checkpoint_final.vsra") == file_bytes(out_b / "checkpoint_final.vsra"));
}

TEST_CASE("infer: shape contract, rerun byte-identical, missing checkpoint exits 2") {
  auto& f = fixture();
  const fs::path ckpt = kRoot / "run1" / "checkpoint_final.vsra";
  REQUIRE(fs::exists(ckpt));  // produced by the train smoke test

  // 10 LR frames at 16x16 -> 10 HR frames at 64x64
  fs::path lr_dir = kRoot / "lr_in";
  FrameSequence<float> lr;
  auto g = vsrtest::rng(31);
  for (int t = 0; t < 10; ++t) lr.frames.push_back(random_tensor<float>(16, 16, 3, g));
  write_sequence(lr_dir.string(), lr);

  const fs::path out_a = kRoot / "hr_a", out_b = kRoot / "hr_b";
  std::string output;
  int rc = run("infer --checkpoint " + ckpt.string() + " --in " + lr_dir.string() + " --out " +
                   out_a.string(),
               &output);
  INFO(output);
  CHECK(rc == 0);
  auto est = load_sequence<double>(out_a.string());
  CHECK(est.length() == 10);
  CHECK(est.height() == 64);
  CHECK(est.width() == 64);

  CHECK(run("infer --checkpoint " + ckpt.string() + " --in " + lr_dir.string() + " --out " +
            out_b.string()) == 0);
  CHECK(file_bytes(out_a / "000000.png") == file_bytes(out_b / "000000.png"));
  CHECK(file_bytes(out_a / "000009.png") == file_bytes(out_b / "000009.png"));

  CHECK(run("infer --checkpoint " + (kRoot / "nope.vsra").string() + " --in " + lr_dir.string()) ==
        2);
}

TEST_CASE("eval: checkpoint and baseline smoke runs; plugin and dataset errors") {
  auto& f = fixture();
  const fs::path ckpt = kRoot / "run1" / "checkpoint_final.vsra";
  REQUIRE(fs::exists(ckpt));
  const fs::path manifest = f.data / "train_manifest.txt";
  const fs::path out = kRoot / "eval_out";

  std::string output;
  int rc = run("eval --checkpoint " + ckpt.string() + " --in " + manifest.string() + " --out " +
                   out.string() + " --metrics psnr,static,var,tperc",
               &output);
  INFO(output);
  CHECK(rc == 0);
  CHECK(fs::exists(out / "report.csv"));
  CHECK(fs::exists(out / "report.txt"));
  // tperc requested without a plug-in: flagged absent, never zero-filled
  CHECK(output.find("t_perceptual=absent") != std::string::npos);

  rc = run("eval --set baseline=bicubic --in " + manifest.string() + " --out " +
               (kRoot / "eval_base").string() + " --metrics psnr,tperc=mse",
           &output);
  INFO(output);
  CHECK(rc == 0);
  CHECK(output.find("t_perceptual=absent") == std::string::npos);

  // empty dataset manifest
  fs::path empty = kRoot / "empty_manifest.txt";
  std::ofstream(empty.string()) << "\n";
  CHECK(run("eval --set baseline=bicubic --in " + empty.string()) == 2);
}

TEST_CASE("ablate-n: monotone CSV on a translation pair; degenerate inputs") {
  // two-frame fractional translation pair
  auto [prev, target] = deformation_pair<double>(24, 3, 0.6, 0.3, 0.0, 0.0);
  fs::path pair_dir = kRoot / "pair";
  FrameSequence<double> seq;
  seq.frames = {prev, target};
  write_sequence(pair_dir.string(), seq);

  const fs::path csv = kRoot / "ablate.csv";
  std::string output;
  int rc = run("ablate-n --in " + pair_dir.string() + " --out " + csv.string() +
                   " --set n_list=1,2 --set steps=120 --seed 2",
               &output);
  INFO(output);
  CHECK(rc == 0);
  std::ifstream is(csv);
  std::string header, row1, row2;
  std::getline(is, header);
  std::getline(is, row1);
  std::getline(is, row2);
  CHECK(header == "n,warp_err_psnr");
  double p1 = std::stod(row1.substr(row1.find(',') + 1));
  double p2 = std::stod(row2.substr(row2.find(',') + 1));
  CHECK(p2 >= p1 - 0.1);

  // identical frames: capped scores for every n
  fs::path same_dir = kRoot / "same_pair";
  FrameSequence<double> same;
  same.frames = {prev, prev};
  write_sequence(same_dir.string(), same);
  rc = run("ablate-n --in " + same_dir.string() + " --out " + (kRoot / "same.csv").string() +
               " --set n_list=1 --set steps=60",
           &output);
  CHECK(rc == 0);
  std::ifstream is2((kRoot / "same.csv").string());
  std::getline(is2, header);
  std::getline(is2, row1);
  CHECK(std::stod(row1.substr(row1.find(',') + 1)) > 40.0);

  // single frame input
  fs::path one_dir = kRoot / "one_frame";
  FrameSequence<double> one;
  one.frames = {prev};
  write_sequence(one_dir.string(), one);
  rc = run("ablate-n --in " + one_dir.string(), &output);
  CHECK(rc == 2);
  CHECK(output.find("at least 2 frames") != std::string::npos);
}

TEST_CASE("cli: bad subcommand and missing required arguments exit 2") {
  std::string output;
  CHECK(run("frobnicate", &output) == 2);
  CHECK(run("train", &output) == 2);  // no --config
  CHECK(run("infer", &output) == 2);
}

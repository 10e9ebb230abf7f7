#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "vsr/discriminator.hpp"

#include <algorithm>
#include <cmath>

using namespace vsr;

namespace {

DiscriminatorConfig small_cfg() {
  DiscriminatorConfig cfg;
  cfg.blocks = 3;
  cfg.base_filters = 4;
  cfg.dense_width = 16;
  cfg.T = 3;
  cfg.input_size = 16;
  return cfg;
}

FrameSequence<double> random_stream(int T, int size, std::uint64_t seed) {
  auto g = vsrtest::rng(seed);
  FrameSequence<double> s;
  for (int t = 0; t < T; ++t) s.frames.push_back(random_tensor<double>(size, size, 3, g));
  return s;
}

std::vector<double> param_vector(Discriminator<double>& net) {
  ParamRegistry<double> r;
  net.collect(r, "disc");
  std::vector<double> out;
  for (const auto& [n, p] : r.params)
    for (std::int64_t i = 0; i < p.value().size(); ++i) out.push_back(p.value().data[i]);
  return out;
}

}  // namespace

TEST_CASE("build_discriminator: deterministic given seed") {
  auto a = Discriminator<double>::build(small_cfg(), 3);
  auto b = Discriminator<double>::build(small_cfg(), 3);
  auto c = Discriminator<double>::build(small_cfg(), 4);
  CHECK(param_vector(a) == param_vector(b));
  CHECK(param_vector(a) != param_vector(c));
}

TEST_CASE("discriminator: T=10 64x64 with 5 blocks flattens from 2x2") {
  DiscriminatorConfig cfg;
  cfg.blocks = 5;
  cfg.base_filters = 64;
  cfg.T = 10;
  cfg.input_size = 64;
  CHECK(cfg.spatial_after_blocks() == 2);
  // channel doubling caps at 8x base
  CHECK(cfg.channels_at(0) == 64);
  CHECK(cfg.channels_at(3) == 512);
  CHECK(cfg.channels_at(4) == 512);
}

TEST_CASE("build_discriminator: parameter count equals the closed-form sum") {
  auto cfg = small_cfg();
  auto d = Discriminator<double>::build(cfg, 5);
  std::int64_t expect = 0;
  int cin = 3 * cfg.T;
  for (int i = 0; i < cfg.blocks; ++i) {
    int cout = cfg.channels_at(i);
    expect += std::int64_t(cout) * cin * 9 + cout;  // strided conv
    if (i > 0) expect += 2 * cout;                  // batch norm affine
    cin = cout;
  }
  const int spatial = cfg.spatial_after_blocks();
  expect += std::int64_t(cfg.dense_width) * (spatial * spatial * cin) + cfg.dense_width;
  expect += cfg.dense_width + 1;
  CHECK(d.parameter_count() == expect);
}

TEST_CASE("discriminate: output strictly inside (0,1); |logit| < 5 at init") {
  auto cfg = small_cfg();
  auto d = Discriminator<double>::build(cfg, 7);
  for (int trial = 0; trial < 5; ++trial) {
    auto stream = random_stream(cfg.T, cfg.input_size, 100 + trial);
    double p = discriminate(d, stream);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    double logit = std::log(p / (1.0 - p));
    CHECK(std::abs(logit) < 5.0);
  }
}

TEST_CASE("discriminate: rejects wrong frame counts and wrong dims") {
  auto cfg = small_cfg();
  auto d = Discriminator<double>::build(cfg, 9);
  auto bad_count = random_stream(cfg.T + 1, cfg.input_size, 200);
  CHECK_THROWS_AS(discriminate(d, bad_count), Error);
  auto bad_dims = random_stream(cfg.T, cfg.input_size / 2, 201);
  CHECK_THROWS_AS(discriminate(d, bad_dims), Error);
  DiscriminatorConfig bad_cfg = cfg;
  bad_cfg.input_size = 18;  // not divisible by 2^3
  CHECK_THROWS_AS(Discriminator<double>::build(bad_cfg, 1), Error);
}

TEST_CASE("discriminate: permuting the temporal order changes the output") {
  auto cfg = small_cfg();
  auto d = Discriminator<double>::build(cfg, 11);
  auto stream = random_stream(cfg.T, cfg.input_size, 300);
  const double base = discriminate(d, stream);

  std::mt19937_64 g(301);
  int changed = 0;
  for (int trial = 0; trial < 20; ++trial) {
    FrameSequence<double> perm = stream;
    std::shuffle(perm.frames.begin(), perm.frames.end(), g);
    if (std::abs(discriminate(d, perm) - base) > 1e-6) ++changed;
  }
  CHECK(changed >= 1);
}

TEST_CASE("discriminate: a batch of two identical streams gives identical outputs") {
  auto cfg = small_cfg();
  auto d = Discriminator<double>::build(cfg, 13);
  auto stream = random_stream(cfg.T, cfg.input_size, 400);
  std::vector<Var<double>> s;
  for (const auto& f : stream.frames) s.push_back(Var<double>::constant(f));
  for (bool train : {false, true}) {
    auto probs = d.forward({s, s}, train);
    CHECK(probs.size() == 2);
    CHECK(probs[0].item() == probs[1].item());
  }
}

TEST_CASE("discriminator: batch-norm training mode backpropagates through the statistics") {
  DiscriminatorConfig cfg = small_cfg();
  cfg.blocks = 2;
  cfg.input_size = 8;
  cfg.T = 2;
  auto d = Discriminator<double>::build(cfg, 17);
  auto g = vsrtest::rng(500);
  Tensor<double> f0 = random_tensor<double>(8, 8, 3, g);
  Tensor<double> f1 = random_tensor<double>(8, 8, 3, g);

  double worst = vsrtest::fd_check(
      [&](const std::vector<Var<double>>& in) {
        auto probs = d.forward({{in[0], in[1]}}, /*train=*/true);
        return neg(log_floored(probs[0], 1e-8));
      },
      {f0, f1});
  CHECK(worst < 1e-3);
}

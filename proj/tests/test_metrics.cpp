#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "vsr/metrics.hpp"
#include "vsr/toydata.hpp"

#include <cmath>
#include <filesystem>

using namespace vsr;
namespace fs = std::filesystem;

namespace {

Tensor<double> rnd(int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  auto g = vsrtest::rng(seed);
  return random_tensor<double>(h, w, c, g, lo, hi);
}

// direct windowed-statistics SSIM oracle: explicit 11x11 loops per position
double oracle_ssim(const Tensor<double>& a, const Tensor<double>& b) {
  std::vector<double> w1(11);
  double sum = 0;
  for (int i = 0; i < 11; ++i) {
    double d = i - 5;
    w1[i] = std::exp(-d * d / 4.5);
    sum += w1[i];
  }
  for (auto& v : w1) v /= sum;
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0;
  std::int64_t cnt = 0;
  for (int ch = 0; ch < a.c; ++ch)
    for (int y = 0; y + 10 < a.h; ++y)
      for (int x = 0; x + 10 < a.w; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            double w = w1[i] * w1[j];
            double va = a(y + i, x + j, ch), vb = b(y + i, x + j, ch);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        saa -= ma * ma;
        sbb -= mb * mb;
        sab -= ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * sab + c2)) /
               ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
        ++cnt;
      }
  return acc / double(cnt);
}

FrameSequence<double> seq_of(std::initializer_list<Tensor<double>> frames) {
  FrameSequence<double> s;
  for (const auto& f : frames) s.frames.push_back(f);
  return s;
}

}  // namespace

TEST_CASE("psnr: closed form, cap, loop oracle, monotone in MSE") {
  Tensor<double> zero = Tensor<double>::zeros(10, 10, 3);
  Tensor<double> off = Tensor<double>::constant(10, 10, 3, 0.1);  // MSE 0.01
  CHECK(psnr(off, zero) == doctest::Approx(20.0));
  CHECK(psnr(zero, zero) == 99.0);

  Tensor<double> a = rnd(6, 6, 3, 1), b = rnd(6, 6, 3, 2);
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    double d = a.data[i] - b.data[i];
    m += d * d;
  }
  m /= double(a.size());
  CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(1.0 / m)));

  double prev = 1e9;
  Tensor<double> zero4 = Tensor<double>::zeros(4, 4, 3);
  for (double amp : {0.05, 0.1, 0.2, 0.4}) {
    double p = psnr(Tensor<double>::constant(4, 4, 3, amp), zero4);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim: identity is 1, negatives score lower, oracle match") {
  Tensor<double> x = rnd(16, 16, 3, 3);
  CHECK(ssim(x, x) == doctest::Approx(1.0));

  Tensor<double> neg = x;
  neg.data = 1.0 - neg.data;  // mirrored around 0.5: structure inverted
  CHECK(ssim(neg, x) < 1.0);

  Tensor<double> y = rnd(16, 16, 3, 4);
  CHECK(ssim(x, y) == doctest::Approx(oracle_ssim(x, y)).epsilon(1e-6));

  Tensor<double> tiny = rnd(8, 8, 3, 5);
  CHECK_THROWS_AS(ssim(tiny, tiny), Error);
}

TEST_CASE("static_metric: perfect consistency capped, closed-form transform, recomposition") {
  // temporally constant estimates + static GT regions -> zero loss -> cap
  Tensor<double> f = rnd(8, 8, 3, 6);
  auto est = seq_of({f, f, f});
  auto gt = seq_of({f, f, f});
  CHECK(static_metric(est, gt) == 99.0);

  CHECK(db_from_loss(0.01) == doctest::Approx(40.0));
  CHECK(db_from_loss(0.1) == doctest::Approx(20.0));

  auto e2 = seq_of({rnd(8, 8, 3, 7), rnd(8, 8, 3, 8), rnd(8, 8, 3, 9)});
  auto g2 = seq_of({rnd(8, 8, 3, 10), rnd(8, 8, 3, 11), rnd(8, 8, 3, 12)});
  double loss = 0;
  for (int t = 1; t < 3; ++t) {
    auto mask = static_mask(g2.frames[t], g2.frames[t - 1], 100.0);
    loss += static_temporal_loss(e2.frames[t], e2.frames[t - 1], mask);
  }
  loss /= 2.0;
  CHECK(static_metric(e2, g2) == doctest::Approx(-20.0 * std::log10(loss)));

  auto bad = seq_of({f, f});
  CHECK_THROWS_AS(static_metric(bad, gt), Error);
}

TEST_CASE("variance_distance_metric: cap and recomposition") {
  Tensor<double> f = rnd(8, 8, 3, 13);
  auto est = seq_of({f, rnd(8, 8, 3, 14), rnd(8, 8, 3, 15)});
  CHECK(variance_distance_metric(est, est) == 99.0);

  auto gt = seq_of({rnd(8, 8, 3, 16), rnd(8, 8, 3, 17), rnd(8, 8, 3, 18)});
  std::vector<Tensor<double>> ef(est.frames.begin(), est.frames.end());
  std::vector<Tensor<double>> gf(gt.frames.begin(), gt.frames.end());
  double l = temporal_statistics_loss(ef, gf);
  CHECK(variance_distance_metric(est, gt) == doctest::Approx(-20.0 * std::log10(l)));
}

TEST_CASE("warping_error_metric: static + zero flow capped; exact integer translation") {
  Tensor<double> f = rnd(16, 16, 3, 19);
  auto est = seq_of({f, f, f});
  std::vector<FlowStack<double>> zero_flows(2, FlowStack<double>::identity(16, 16, 1));
  CHECK(warping_error_metric(est, zero_flows) == 99.0);

  // frame t shifts content left by one pixel: est_t(x) = est_{t-1}(x+1)
  Tensor<double> wide = rnd(16, 20, 3, 20);
  FrameSequence<double> moving;
  for (int t = 0; t < 3; ++t) {
    Tensor<double> fr(16, 16, 3);
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) fr(y, x, ch) = wide(y, x + t, ch);
    moving.frames.push_back(fr);
  }
  FlowStack<double> shift = FlowStack<double>::identity(16, 16, 1);
  shift.u.data.setConstant(1.0);
  std::vector<FlowStack<double>> flows(2, shift);
  // integer flow, boundary cropped: the warp aligns exactly
  CHECK(warping_error_metric(moving, flows) == 99.0);

  // recomposition on random flows
  auto g = vsrtest::rng(21);
  FlowStack<double> rf;
  rf.u = random_tensor<double>(16, 16, 1, g, -1.5, 1.5);
  rf.v = random_tensor<double>(16, 16, 1, g, -1.5, 1.5);
  rf.w = Tensor<double>::constant(16, 16, 1, 1.0);
  std::vector<FlowStack<double>> rfl(2, rf);
  double expect = 0;
  for (int t = 1; t < 3; ++t) {
    Tensor<double> warped = multi_warp(moving.frames[t - 1], rf);
    expect += psnr(crop_border(moving.frames[t], 4), crop_border(warped, 4));
  }
  CHECK(warping_error_metric(moving, rfl) == doctest::Approx(expect / 2.0));

  std::vector<FlowStack<double>> missing(1, rf);
  CHECK_THROWS_WITH_AS(warping_error_metric(moving, missing), doctest::Contains("missing flow"),
                       Error);
}

TEST_CASE("temporal_perceptual_metric: zero cases and the MSE plug-in") {
  auto est = seq_of({rnd(8, 8, 3, 22), rnd(8, 8, 3, 23)});
  CHECK(temporal_perceptual_metric(mse_pair_distance(), est, est) == doctest::Approx(0.0));

  PairDistance constant = [](const Tensor<double>&, const Tensor<double>&) { return 0.75; };
  auto gt = seq_of({rnd(8, 8, 3, 24), rnd(8, 8, 3, 25)});
  CHECK(temporal_perceptual_metric(constant, est, gt) == doctest::Approx(0.0));

  // hand-computed two-frame case with the MSE plug-in
  double de = mse(est.frames[0], est.frames[1]);
  double dg = mse(gt.frames[0], gt.frames[1]);
  CHECK(temporal_perceptual_metric(mse_pair_distance(), est, gt) ==
        doctest::Approx(std::abs(de - dg)));
}

TEST_CASE("flow files: round trip") {
  fs::path tmp = fs::temp_directory_path() / "vsr_flow_test.flow";
  auto g = vsrtest::rng(26);
  Tensor<float> u = random_tensor<float>(6, 7, 1, g, -3.f, 3.f);
  Tensor<float> v = random_tensor<float>(6, 7, 1, g, -3.f, 3.f);
  write_flow(tmp.string(), u, v);
  auto f = read_flow<double>(tmp.string());
  CHECK(f.u.h == 6);
  CHECK(f.u.w == 7);
  CHECK(f.n() == 1);
  for (std::int64_t i = 0; i < u.size(); ++i) {
    CHECK(f.u.data[i] == doctest::Approx(double(u.data[i])));
    CHECK(f.v.data[i] == doctest::Approx(double(v.data[i])));
  }
  CHECK(vsrtest::max_abs_diff(f.w, Tensor<double>::constant(6, 7, 1, 1.0)) == 0.0);
  fs::remove(tmp);
}

TEST_CASE("ablate_n: identical frames cap for every n; embedding scores equal at step 0") {
  Tensor<double> img = rnd(12, 12, 3, 27);
  auto rows = ablate_n(img, img, {1, 2}, 40, 3);
  for (const auto& r : rows) CHECK(r.warp_err_psnr > 40.0);

  // embedding: n=5 seeded from a fitted n=1 stack scores identically at step 0
  auto [prev, target] = deformation_pair<double>(16, 5, 0.6, -0.4, 0.15, 0.5);
  FlowFitOptions opts;
  opts.steps = 60;
  opts.seed = 11;
  FlowStack<double> f1 = fit_flow_direct(prev, target, 1, opts);
  double score1 = warp_error_psnr(prev, target, f1);

  FlowFitOptions init_only;
  init_only.steps = 1;
  init_only.lr = 0.0;  // step with zero learning rate: parameters unchanged
  init_only.seed = 11;
  FlowStack<double> f5 = fit_flow_direct(prev, target, 5, init_only, &f1);
  double score5 = warp_error_psnr(prev, target, f5);
  CHECK(score5 == score1);
}

TEST_CASE("evaluate: perfect pseudo-model is capped everywhere; baseline populated") {
  // fully static synthetic clips: est == gt makes every score perfect,
  // including the static metric (no motion anywhere in the ground truth)
  ToyParams p;
  p.hr_size = 32;
  p.frames = 4;
  p.clips = 2;
  p.seed = 4;
  auto pairs64 = toy_pairs(make_toy_clips<double>(p), 4);
  for (auto& pr : pairs64) {
    for (int t = 1; t < pr.hr.length(); ++t) {
      pr.hr.frames[t] = pr.hr.frames[0];
      pr.lr.frames[t] = pr.lr.frames[0];
    }
  }

  // pseudo-model that returns ground truth
  SequenceUpscaler perfect = [&pairs64](const FrameSequence<double>& lr) {
    for (const auto& pr : pairs64)
      if (pr.lr.height() == lr.height() && pr.lr.length() == lr.length()) {
        double d = 0;
        for (int t = 0; t < lr.length(); ++t)
          d += vsrtest::max_abs_diff(pr.lr.frames[t], lr.frames[t]);
        if (d == 0) return pr.hr;
      }
    fail("no matching sequence");
  };

  EvalOptions opt;
  opt.want_tperc = true;
  opt.tperc = mse_pair_distance();
  auto report = evaluate(perfect, pairs64, opt);
  CHECK(report.per_sequence.size() == 2);
  CHECK(*report.aggregate.psnr_db == 99.0);
  CHECK(*report.aggregate.ssim_score == doctest::Approx(1.0));
  CHECK(*report.aggregate.static_db == 99.0);
  CHECK(*report.aggregate.var_dist_db == 99.0);
  CHECK(*report.aggregate.t_perceptual == doctest::Approx(0.0));
  CHECK_FALSE(report.aggregate.warp_err_db.has_value());  // no flows supplied

  // bicubic baseline: finite, populated scores
  auto base = evaluate(bicubic_upscaler(4), pairs64, opt);
  REQUIRE(base.aggregate.psnr_db.has_value());
  CHECK(std::isfinite(*base.aggregate.psnr_db));
  CHECK(*base.aggregate.psnr_db > 10.0);
  CHECK(*base.aggregate.psnr_db < 99.0);

  // absent plugin: flagged, never zero-filled
  EvalOptions no_plugin;
  no_plugin.want_tperc = true;  // requested but no distance supplied
  auto r2 = evaluate(bicubic_upscaler(4), pairs64, no_plugin);
  CHECK_FALSE(r2.aggregate.t_perceptual.has_value());

  // determinism
  auto again = evaluate(bicubic_upscaler(4), pairs64, opt);
  CHECK(*again.aggregate.psnr_db == *base.aggregate.psnr_db);

  // report files
  fs::path csv = fs::temp_directory_path() / "vsr_report_test.csv";
  write_report_csv(base, csv.string());
  std::ifstream is(csv);
  std::string header;
  std::getline(is, header);
  CHECK(header == "sequence,psnr,ssim,static,var_dist,warp_err,t_perceptual");
  std::string text = format_report_text(base);
  CHECK(text.find("absent") != std::string::npos);  // warp_err has no flows
  CHECK(text.find("aggregate") != std::string::npos);
  fs::remove(csv);
}

TEST_CASE("evaluate: toy pan clips give exact-flow warping scores via flow files") {
  ToyParams p;
  p.hr_size = 32;
  p.frames = 3;
  p.clips = 1;  // clip 0 is a pure pan
  p.seed = 8;
  auto clips = make_toy_clips<double>(p);
  REQUIRE(clips[0].pure_pan);
  auto pairs = toy_pairs(clips, 4);

  fs::path flows = fs::temp_directory_path() / "vsr_eval_flows";
  fs::remove_all(flows);
  fs::create_directories(flows / pairs[0].name);
  for (int t = 1; t < 3; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.flow", t);
    Tensor<float> u = Tensor<float>::constant(32, 32, 1, float(clips[0].flow_u));
    Tensor<float> v = Tensor<float>::constant(32, 32, 1, float(clips[0].flow_v));
    write_flow((flows / pairs[0].name / name).string(), u, v);
  }

  SequenceUpscaler perfect = [&pairs](const FrameSequence<double>&) { return pairs[0].hr; };
  EvalOptions opt;
  opt.want_warp_err = true;
  opt.flows_dir = flows.string();
  auto report = evaluate(perfect, pairs, opt);
  REQUIRE(report.aggregate.warp_err_db.has_value());
  // ground-truth flow on a pure pan: warping error is tiny (PSNR high)
  CHECK(*report.aggregate.warp_err_db > 45.0);

  fs::remove_all(flows / pairs[0].name);
  EvalOptions opt2 = opt;
  CHECK_THROWS_WITH_AS(evaluate(perfect, pairs, opt2), doctest::Contains("missing flow"), Error);
  fs::remove_all(flows);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "vsr/losses.hpp"

#include <cmath>
#include <filesystem>

using namespace vsr;
using vsrtest::fd_check;

namespace {

Tensor<double> rnd(int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  auto g = vsrtest::rng(seed);
  return random_tensor<double>(h, w, c, g, lo, hi);
}

FeatureExtractor<double> small_extractor(std::uint64_t seed = 7) {
  FeatureExtractorConfig cfg;
  cfg.channels = {4, 6};
  cfg.strides = {1, 2};
  cfg.kernel = 3;
  cfg.seed = seed;
  return FeatureExtractor<double>::build(cfg);
}

}  // namespace

TEST_CASE("l1_loss: identity, closed form, loop oracle") {
  Tensor<double> x = rnd(4, 4, 3, 1);
  CHECK(l1_loss(x, x) == 0.0);

  Tensor<double> a = Tensor<double>::constant(5, 5, 3, 0.75);
  Tensor<double> b = Tensor<double>::constant(5, 5, 3, 0.25);
  CHECK(l1_loss(a, b) == doctest::Approx(0.5));

  Tensor<double> p = rnd(3, 5, 3, 2), q = rnd(3, 5, 3, 3);
  double ref = 0;
  for (std::int64_t i = 0; i < p.size(); ++i) ref += std::abs(p.data[i] - q.data[i]);
  ref /= double(p.size());
  CHECK(l1_loss(p, q) == doctest::Approx(ref).epsilon(1e-12));

  CHECK_THROWS_AS(l1_loss(p, rnd(3, 4, 3, 4)), Error);
}

TEST_CASE("adversarial losses: closed forms") {
  CHECK(adversarial_g_loss(1.0) == doctest::Approx(0.0));
  CHECK(adversarial_g_loss(std::exp(-1.0)) == doctest::Approx(1.0));
  CHECK(adversarial_g_loss(0.5) == doctest::Approx(std::log(2.0)));

  CHECK(adversarial_d_loss(1.0, 0.0) == doctest::Approx(0.0));
  CHECK(adversarial_d_loss(0.5, 0.5) == doctest::Approx(2.0 * std::log(2.0)));

  auto g = vsrtest::rng(5);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 10; ++i) {
    double dr = u(g), df = u(g);
    CHECK(adversarial_d_loss(dr, df) == doctest::Approx(-std::log(dr) - std::log(1 - df)));
  }
  // the epsilon floor keeps saturated values finite
  CHECK(std::isfinite(adversarial_g_loss(0.0)));
  CHECK(std::isfinite(adversarial_d_loss(0.0, 1.0)));
}

TEST_CASE("gram_matrix: one-hot channels are diagonal; identical channels rank-1") {
  // channel 0 lives on the left half, channel 1 on the right: orthogonal
  Tensor<double> f(2, 2, 2);
  f(0, 0, 0) = 1.0;
  f(1, 0, 0) = 0.5;
  f(0, 1, 1) = 0.7;
  f(1, 1, 1) = 0.2;
  auto g = gram_matrix(Var<double>::constant(f)).value();
  CHECK(g(0, 1, 0) == doctest::Approx(0.0));
  CHECK(g(1, 0, 0) == doctest::Approx(0.0));
  CHECK(g(0, 0, 0) > 0.0);

  Tensor<double> same(3, 3, 2);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      double v = 0.1 * (y * 3 + x);
      same(y, x, 0) = v;
      same(y, x, 1) = v;
    }
  auto gs = gram_matrix(Var<double>::constant(same)).value();
  CHECK(gs(0, 0, 0) == doctest::Approx(gs(0, 1, 0)));
  CHECK(gs(1, 1, 0) == doctest::Approx(gs(1, 0, 0)));
}

TEST_CASE("texture_loss: zero at identity, symmetric, matches gram-of-taps recomposition") {
  auto fe = small_extractor();
  Tensor<double> x = rnd(8, 8, 3, 6), y = rnd(8, 8, 3, 7);
  CHECK(texture_loss(fe, x, x) == 0.0);
  CHECK(texture_loss(fe, x, y) == doctest::Approx(texture_loss(fe, y, x)));

  // recomposition through an independent path: extract taps, gram, L1
  NoGrad guard;
  auto ta = fe.extract(Var<double>::constant(x));
  auto tb = fe.extract(Var<double>::constant(y));
  double ref = 0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    Tensor<double> ga = vsrtest::oracle_gram(ta[i].value());
    Tensor<double> gb = vsrtest::oracle_gram(tb[i].value());
    ref += double((ga.data - gb.data).abs().mean());
  }
  CHECK(texture_loss(fe, x, y) == doctest::Approx(ref).epsilon(1e-9));
}

TEST_CASE("texture_loss: spatial permutation is invisible to a 1x1-receptive-field extractor") {
  FeatureExtractorConfig cfg;
  cfg.channels = {5};
  cfg.strides = {1};
  cfg.kernel = 1;
  cfg.seed = 11;
  auto fe = FeatureExtractor<double>::build(cfg);

  Tensor<double> x = rnd(4, 4, 3, 12);
  // a fixed spatial permutation of the same pixel multiset
  Tensor<double> perm(4, 4, 3);
  std::vector<int> order(16);
  for (int i = 0; i < 16; ++i) order[i] = (i * 5 + 3) % 16;
  for (int i = 0; i < 16; ++i)
    for (int ch = 0; ch < 3; ++ch)
      perm(i / 4, i % 4, ch) = x(order[i] / 4, order[i] % 4, ch);
  CHECK(texture_loss(fe, perm, x) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("static_mask: calibration values and monotonicity") {
  Tensor<double> x = rnd(3, 3, 3, 13);
  auto m_same = static_mask(x, x, 100.0);
  for (std::int64_t i = 0; i < m_same.size(); ++i) CHECK(m_same.data[i] == 1.0);

  // channel-summed squared diff of 0.0461 -> exp(-4.61)
  Tensor<double> a = Tensor<double>::zeros(1, 1, 3), b = Tensor<double>::zeros(1, 1, 3);
  b(0, 0, 0) = std::sqrt(0.0461);
  auto m = static_mask(a, b, 100.0);
  CHECK(std::abs(m(0, 0, 0) - 0.009952) < 1e-6);

  // 0.3 difference on all three channels -> exp(-27), effectively zero
  Tensor<double> c = Tensor<double>::constant(2, 2, 3, 0.3);
  auto m2 = static_mask(Tensor<double>::zeros(2, 2, 3), c, 100.0);
  CHECK(m2(0, 0, 0) < 2e-12);

  // monotone decrease in the per-pixel squared difference
  double prev = 1.1;
  for (double d = 0.0; d <= 0.2; d += 0.01) {
    Tensor<double> t = Tensor<double>::constant(1, 1, 3, d);
    double v = static_mask(Tensor<double>::zeros(1, 1, 3), t, 100.0)(0, 0, 0);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("static_temporal_loss: zero cases and the per-pixel loop oracle") {
  Tensor<double> est = rnd(4, 4, 3, 14);
  Tensor<double> mask = rnd(4, 4, 1, 15);
  CHECK(static_temporal_loss(est, est, mask) == 0.0);

  Tensor<double> other = rnd(4, 4, 3, 16);
  CHECK(static_temporal_loss(est, other, Tensor<double>::zeros(4, 4, 1)) == 0.0);

  double ref = 0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      double d = 0;
      for (int ch = 0; ch < 3; ++ch) d += std::abs(est(y, x, ch) - other(y, x, ch));
      ref += mask(y, x, 0) * (d / 3.0);
    }
  ref /= 16.0;
  CHECK(static_temporal_loss(est, other, mask) == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("temporal_statistics_loss: zero cases, oracle, offset invariance") {
  std::vector<Tensor<double>> est, gt;
  for (int t = 0; t < 3; ++t) {
    est.push_back(rnd(4, 4, 3, 20 + t));
    gt.push_back(rnd(4, 4, 3, 30 + t));
  }
  CHECK(temporal_statistics_loss(est, est) == 0.0);

  // temporally constant sequences have zero variance regardless of level
  std::vector<Tensor<double>> ca(3, Tensor<double>::constant(4, 4, 3, 0.2));
  std::vector<Tensor<double>> cb(3, Tensor<double>::constant(4, 4, 3, 0.9));
  CHECK(temporal_statistics_loss(ca, cb) == doctest::Approx(0.0));

  // two-pass mean/variance loop oracle
  auto var_at = [](const std::vector<Tensor<double>>& seq, int y, int x, int ch) {
    double m = 0;
    for (const auto& f : seq) m += f(y, x, ch);
    m /= double(seq.size());
    double v = 0;
    for (const auto& f : seq) v += (f(y, x, ch) - m) * (f(y, x, ch) - m);
    return v / double(seq.size());
  };
  double ref = 0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int ch = 0; ch < 3; ++ch) ref += std::abs(var_at(est, y, x, ch) - var_at(gt, y, x, ch));
  ref /= 48.0;
  CHECK(temporal_statistics_loss(est, gt) == doctest::Approx(ref).epsilon(1e-12));

  // invariant to adding the same constant frame offset to both sequences
  std::vector<Tensor<double>> est_off = est, gt_off = gt;
  for (auto& f : est_off) f.data += 0.2;
  for (auto& f : gt_off) f.data += 0.2;
  CHECK(temporal_statistics_loss(est_off, gt_off) ==
        doctest::Approx(temporal_statistics_loss(est, gt)).epsilon(1e-12));

  std::vector<Tensor<double>> one{est[0]};
  CHECK_THROWS_AS(temporal_statistics_loss(one, one), Error);
}

TEST_CASE("combined_loss: paper coefficients and error reporting") {
  LossWeights w;
  LossTerms<double> t;
  CHECK(combined_loss(w, t) == 0.0);

  t.pixel = 1.0;
  CHECK(combined_loss(w, t) == doctest::Approx(0.01));

  t.pixel = 0.0;
  t.temporal_static = 1.0;
  t.temporal_stats = 1.0;
  CHECK(combined_loss(w, t) == doctest::Approx(0.2));

  t.adversarial = 1.0;
  t.temporal_static = t.temporal_stats = 0.0;
  CHECK(combined_loss(w, t) == doctest::Approx(0.005));

  t.texture = 2.0;
  t.adversarial = 0.0;
  CHECK(combined_loss(w, t) == doctest::Approx(2.0));

  t.texture = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(combined_loss(w, t), "non-finite loss term: texture", Error);
}

TEST_CASE("loss gradients match central finite differences") {
  // sampled away from zero-difference points: inputs drawn from disjoint ranges
  Tensor<double> a = rnd(4, 4, 3, 40, 0.55, 0.95);
  Tensor<double> b = rnd(4, 4, 3, 41, 0.05, 0.45);
  CHECK(fd_check([](const std::vector<Var<double>>& v) { return l1_loss(v[0], v[1]); }, {a, b}) <
        1e-3);

  Tensor<double> d(1, 1, 1);
  d.data[0] = 0.37;
  CHECK(fd_check([](const std::vector<Var<double>>& v) { return adversarial_g_loss(v[0]); },
                 {d}) < 1e-6);
  Tensor<double> dr(1, 1, 1), df(1, 1, 1);
  dr.data[0] = 0.81;
  df.data[0] = 0.23;
  CHECK(fd_check(
            [](const std::vector<Var<double>>& v) { return adversarial_d_loss(v[0], v[1]); },
            {dr, df}) < 1e-6);

  auto fe = small_extractor();
  CHECK(fd_check(
            [&](const std::vector<Var<double>>& v) { return texture_loss(fe, v[0], v[1]); },
            {a, b}) < 1e-3);

  CHECK(fd_check([](const std::vector<Var<double>>& v) {
          return mean_all(static_mask(v[0], v[1], 3.0));
        },
                 {a, b}) < 1e-3);

  Tensor<double> mask = rnd(4, 4, 1, 42, 0.1, 0.9);
  CHECK(fd_check([&](const std::vector<Var<double>>& v) {
          return static_temporal_loss(v[0], v[1], Var<double>::constant(mask));
        },
                 {a, b}) < 1e-3);

  Tensor<double> e0 = rnd(3, 3, 3, 43, 0.0, 0.4), e1 = rnd(3, 3, 3, 44, 0.5, 1.0);
  Tensor<double> g0 = rnd(3, 3, 3, 45, 0.0, 0.4), g1 = rnd(3, 3, 3, 46, 0.5, 1.0);
  CHECK(fd_check([](const std::vector<Var<double>>& v) {
          return temporal_statistics_loss<double>({v[0], v[1]}, {v[2], v[3]});
        },
                 {e0, e1, g0, g1}) < 1e-3);
}

TEST_CASE("feature extractor: deterministic, frozen, archive round trip") {
  auto fe1 = small_extractor(99);
  auto fe2 = small_extractor(99);
  CHECK(vsrtest::max_abs_diff(fe1.weights[0], fe2.weights[0]) == 0.0);

  Tensor<double> x = rnd(8, 8, 3, 50);
  // weights are graph constants: no gradient can reach them
  auto taps = fe1.extract(Var<double>::param(x));
  auto loss = mean_all(square(taps.back()));
  backward(loss);  // must not throw; extractor holds plain tensors, not params

  namespace fs = std::filesystem;
  fs::path tmp = fs::temp_directory_path() / "vsr_fe_test.vsra";
  fe1.save(tmp.string());
  auto fe3 = FeatureExtractor<double>::load(fe1.cfg, tmp.string());
  // float32 storage: compare after the same round trip
  for (std::size_t i = 0; i < fe1.weights.size(); ++i) {
    Tensor<double> expect = fe1.weights[i].cast<float>().cast<double>();
    CHECK(vsrtest::max_abs_diff(fe3.weights[i], expect) == 0.0);
  }
  fs::remove(tmp);
}

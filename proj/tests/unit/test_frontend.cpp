#include <algorithm>
#include <cmath>
#include <complex>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "msar/dsp/features.hpp"
#include "msar/dsp/scenario.hpp"
#include "msar/dsp/stft.hpp"
#include "msar/error.hpp"
#include "msar/frontend/frontend.hpp"
#include "msar/numerics/graph.hpp"
#include "msar/numerics/ops.hpp"
#include "oracles.hpp"

using namespace msar::frontend;
using msar::dsp::StftParams;
using msar::numerics::Tensor;
namespace ops = msar::numerics;
namespace dsp = msar::dsp;

namespace {

using cd = std::complex<double>;
using cld = std::complex<long double>;

ComplexSpectrogram random_spec(std::size_t t_n, std::size_t c_n, const StftParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  ComplexSpectrogram x(t_n, c_n, p);
  for (auto& v : x.data()) v = cd(g(rng), g(rng));
  return x;
}

MaskSet random_masks(const ComplexSpectrogram& x, std::size_t sources, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MaskSet m(x.frames(), x.bins(), x.channels(), sources);
  for (std::size_t t = 0; t < x.frames(); ++t)
    for (std::size_t f = 0; f < x.bins(); ++f)
      for (std::size_t c = 0; c < x.channels(); ++c)
        for (std::size_t j = 0; j < sources; ++j) m.at(t, f, c, j) = u(rng);
  return m;
}

ComplexMatrix random_pd(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  ComplexMatrix a(n, n);
  for (auto& v : a.data()) v = cd(g(rng), g(rng));
  ComplexMatrix m = a * a.adjoint();
  for (std::size_t i = 0; i < n; ++i) m(i, i) += 0.1;
  return m;
}

PsdSet single_bin(std::vector<ComplexMatrix> phis) {
  PsdSet p;
  p.bins = 1;
  p.channels = phis.front().rows();
  for (auto& m : phis) p.phi.push_back({std::move(m)});
  return p;
}

StftParams tiny_stft() { return StftParams{16, 8, 16}; }

MaskNetConfig small_mask_config(std::size_t bins, std::size_t speakers) {
  MaskNetConfig cfg;
  cfg.bins = bins;
  cfg.speakers = speakers;
  cfg.d_att = 8;
  cfg.heads = 2;
  cfg.d_ff = 12;
  cfg.layers = 3;
  return cfg;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("estimate_psd: outer product, empirical covariance, direct-sum oracle") {
  const StftParams p = tiny_stft();
  SUBCASE("single frame with unit masks is x x^H") {
    auto x = random_spec(1, 3, p, 1);
    MaskSet m(1, x.bins(), 3, 2);
    for (std::size_t f = 0; f < x.bins(); ++f)
      for (std::size_t c = 0; c < 3; ++c) m.at(0, f, c, 0) = m.at(0, f, c, 1) = 1.0;
    auto psd = estimate_psd(x, m);
    for (std::size_t f = 0; f < x.bins(); ++f)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 3; ++k)
          CHECK(std::abs(psd.phi[1][f](i, k) - x.at(0, f, i) * std::conj(x.at(0, f, k))) == 0.0);
  }
  SUBCASE("random masks against an extended precision direct sum") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const std::size_t c_n = 2 + seed % 3;
      auto x = random_spec(7, c_n, p, 100 + seed);
      auto m = random_masks(x, 3, 200 + seed);
      auto psd = estimate_psd(x, m);
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t f = 0; f < x.bins(); ++f) {
          std::vector<cd> flat;
          long double wsum = 0;
          std::vector<cld> acc(c_n * c_n);
          for (std::size_t t = 0; t < x.frames(); ++t) {
            long double w = 0;
            for (std::size_t c = 0; c < c_n; ++c) w += m.at(t, f, c, j);
            w /= c_n;
            wsum += w;
            for (std::size_t i = 0; i < c_n; ++i)
              for (std::size_t k = 0; k < c_n; ++k)
                acc[i * c_n + k] += w * cld(x.at(t, f, i)) * std::conj(cld(x.at(t, f, k)));
          }
          for (std::size_t i = 0; i < c_n; ++i)
            for (std::size_t k = 0; k < c_n; ++k) {
              const cld ref = acc[i * c_n + k] / wsum;
              CHECK(std::abs(cld(psd.phi[j][f](i, k)) - ref) < 1e-12L);
            }
          CHECK(psd.phi[j][f].is_hermitian(1e-10));
          for (double ev : msar::testing::hermitian_eigenvalues(psd.phi[j][f].data(), c_n)) CHECK(ev >= -1e-8);
        }
    }
  }
  SUBCASE("all-zero mask is replaced by a loaded diagonal") {
    auto x = random_spec(5, 2, p, 7);
    MaskSet m(5, x.bins(), 2, 2);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t f = 0; f < x.bins(); ++f)
        for (std::size_t c = 0; c < 2; ++c) m.at(t, f, c, 1) = 1.0;
    auto psd = estimate_psd(x, m);
    for (std::size_t f = 0; f < x.bins(); ++f) {
      const double power = psd.phi[1][f].trace().real() / 2.0;
      CHECK(psd.phi[0][f](0, 1) == cd{});
      CHECK(psd.phi[0][f](1, 0) == cd{});
      CHECK(psd.phi[0][f](0, 0).real() == doctest::Approx(kMaskRescue * power).epsilon(1e-12));
      CHECK(psd.phi[0][f](1, 1) == psd.phi[0][f](0, 0));
    }
  }
  SUBCASE("shape mismatch") {
    auto x = random_spec(5, 2, p, 7);
    CHECK_THROWS_AS(estimate_psd(x, MaskSet(4, x.bins(), 2, 2)), msar::ShapeError);
  }
}

TEST_CASE("mvdr_filter: distortionless response toward a rank-one target") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c_n = 2 + trial % 3;
    std::vector<cd> d(c_n);
    for (auto& v : d) v = cd(g(rng), g(rng));
    const double sigma = 0.5 + uni(rng);
    ComplexMatrix phi(c_n, c_n);
    for (std::size_t i = 0; i < c_n; ++i)
      for (std::size_t k = 0; k < c_n; ++k) phi(i, k) = sigma * d[i] * std::conj(d[k]);
    ComplexMatrix n0 = random_pd(c_n, rng), n2 = random_pd(c_n, rng);
    std::vector<double> u(c_n);
    double s = 0.0;
    for (auto& v : u) s += (v = uni(rng));
    for (auto& v : u) v /= s;
    auto filters = mvdr_filter(single_bin({n0, phi, n2}), 1, u);
    const cd src(g(rng), g(rng));
    cd out{}, ref{};
    for (std::size_t c = 0; c < c_n; ++c) {
      out += std::conj(filters[0][c]) * src * d[c];
      ref += u[c] * src * d[c];
    }
    CHECK(std::abs(out - ref) < 1e-8 * std::max(1.0, std::abs(ref)));
  }
}

TEST_CASE("mvdr_filter: scalar, identity and degenerate cases") {
  std::mt19937_64 rng(5);
  SUBCASE("one channel gives unit gain") {
    for (int i = 0; i < 5; ++i) {
      ComplexMatrix a(1, 1), b(1, 1), c(1, 1);
      a(0, 0) = 0.1 + i;
      b(0, 0) = 3.0 / (i + 1);
      c(0, 0) = 0.5;
      auto g = mvdr_filter(single_bin({a, b, c}), 2, {1.0});
      CHECK(std::abs(g[0][0] - cd(1.0, 0.0)) < 1e-14);
    }
  }
  SUBCASE("identity target and interference return u / C") {
    for (std::size_t c_n = 1; c_n <= 4; ++c_n) {
      ComplexMatrix half = ComplexMatrix::identity(c_n);
      half *= 0.5;
      std::vector<double> u(c_n, 0.0);
      u[0] = 1.0;
      auto g = mvdr_filter(single_bin({half, ComplexMatrix::identity(c_n), half}), 1, u);
      for (std::size_t c = 0; c < c_n; ++c) CHECK(std::abs(g[0][c] - cd(u[c] / c_n, 0.0)) < 1e-14);
    }
  }
  SUBCASE("zero target passes the reference through") {
    ComplexMatrix zero(2, 2);
    auto g = mvdr_filter(single_bin({random_pd(2, rng), zero}), 1, {0.25, 0.75});
    CHECK(g[0][0] == cd(0.25, 0.0));
    CHECK(g[0][1] == cd(0.75, 0.0));
  }
  SUBCASE("bad arguments") {
    auto psd = single_bin({random_pd(2, rng), random_pd(2, rng)});
    CHECK_THROWS_AS(mvdr_filter(psd, 0, {1.0, 0.0}), msar::IndexError);
    CHECK_THROWS_AS(mvdr_filter(psd, 2, {1.0, 0.0}), msar::IndexError);
    CHECK_THROWS_AS(mvdr_filter(psd, 1, {1.0}), msar::ShapeError);
    ComplexMatrix zero(2, 2);
    CHECK_THROWS_AS(mvdr_filter(single_bin({zero, random_pd(2, rng)}), 1, {1.0, 0.0}), msar::SingularMatrixError);
  }
}

TEST_CASE("beamform: selector, zero filter and superposition") {
  const StftParams p = tiny_stft();
  auto x = random_spec(6, 3, p, 21);
  auto y = random_spec(6, 3, p, 22);
  std::vector<std::vector<cd>> sel(x.bins(), std::vector<cd>(3)), zero = sel, rnd = sel;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (std::size_t f = 0; f < x.bins(); ++f) {
    sel[f][2] = 1.0;
    for (auto& v : rnd[f]) v = cd(g(rng), g(rng));
  }
  auto s = beamform(x, sel);
  auto z = beamform(x, zero);
  CHECK(s.channels() == 1);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t f = 0; f < x.bins(); ++f) {
      CHECK(s.at(t, f, 0) == x.at(t, f, 2));
      CHECK(z.at(t, f, 0) == cd{});
    }
  const cd a(0.7, -1.3), b(-0.2, 0.4);
  ComplexSpectrogram xy(6, 3, p);
  for (std::size_t i = 0; i < xy.data().size(); ++i) xy.data()[i] = a * x.data()[i] + b * y.data()[i];
  auto lhs = beamform(xy, rnd);
  auto bx = beamform(x, rnd), by = beamform(y, rnd);
  for (std::size_t i = 0; i < lhs.data().size(); ++i)
    CHECK(std::abs(lhs.data()[i] - (a * bx.data()[i] + b * by.data()[i])) < 1e-13);
  CHECK_THROWS_AS(beamform(x, std::vector<std::vector<cd>>(x.bins(), std::vector<cd>(2))), msar::ShapeError);
}

TEST_CASE("select_reference: fixed and attention modes") {
  std::mt19937_64 rng(8);
  const std::size_t f_n = 5;
  auto psds_for = [&](std::size_t c_n, std::uint64_t seed) {
    std::mt19937_64 r(seed);
    PsdSet p;
    p.bins = f_n;
    p.channels = c_n;
    p.phi.resize(3);
    for (auto& src : p.phi)
      for (std::size_t f = 0; f < f_n; ++f) src.push_back(random_pd(c_n, r));
    return p;
  };
  auto scorer = ReferenceScorer::init(f_n, 6, rng);
  ReferenceConfig fixed, att;
  att.mode = ReferenceMode::kAttention;

  CHECK(select_reference(psds_for(1, 1), fixed) == std::vector<double>{1.0});
  CHECK(select_reference(psds_for(1, 1), att, &scorer) == std::vector<double>{1.0});
  CHECK(select_reference(psds_for(2, 1), fixed) == std::vector<double>{1.0, 0.0});
  fixed.channel = 2;
  CHECK_THROWS_AS(select_reference(psds_for(2, 1), fixed), msar::IndexError);

  auto p = psds_for(4, 9);
  auto u = select_reference(p, att, &scorer);
  double s = 0.0;
  for (double v : u) {
    CHECK(v >= 0.0);
    s += v;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  PsdSet q = p;
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t f = 0; f < f_n; ++f)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 4; ++k) q.phi[j][f](i, k) = p.phi[j][f](perm[i], perm[k]);
  auto uq = select_reference(q, att, &scorer);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(uq[i] - u[perm[i]]) < 1e-14);
}

TEST_CASE("mask_net: shape, range, window saturation, channel permutation") {
  const StftParams p = tiny_stft();
  std::mt19937_64 rng(4);
  auto cfg = small_mask_config(p.bins(), 2);
  auto net = MaskNetParams::init(cfg, rng);
  auto x = random_spec(23, 3, p, 31);
  MaskSet m = mask_net(x, net);
  CHECK(m.frames() == 23);
  CHECK(m.bins() == p.bins());
  CHECK(m.channels() == 3);
  CHECK(m.sources() == 3);
  for (double v : m.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  auto wide = net;
  wide.config.window = {1000, 1000};
  // Rows see every frame once T - 1 <= min(l, r).
  for (std::size_t t : {1, 7, 15}) {
    auto xt = random_spec(t, 2, p, 40 + t);
    CHECK(mask_net(xt, net).values() == mask_net(xt, wide).values());
  }

  const std::vector<std::size_t> perm{1, 2, 0};
  ComplexSpectrogram xp(23, 3, p);
  for (std::size_t t = 0; t < 23; ++t)
    for (std::size_t f = 0; f < p.bins(); ++f)
      for (std::size_t c = 0; c < 3; ++c) xp.at(t, f, c) = x.at(t, f, perm[c]);
  MaskSet mp = mask_net(xp, net);
  for (std::size_t t = 0; t < 23; ++t)
    for (std::size_t f = 0; f < p.bins(); ++f)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < 3; ++j) CHECK(mp.at(t, f, c, j) == m.at(t, f, perm[c], j));

  CHECK_THROWS_AS(mask_net(random_spec(4, 1, StftParams{}, 1), net), msar::ShapeError);
}

TEST_CASE("scale covariance of PSD, filter and output") {
  const StftParams p = tiny_stft();
  auto x = random_spec(9, 3, p, 77);
  auto m = random_masks(x, 3, 78);
  const double a = 3.7;
  ComplexSpectrogram xa = x;
  for (auto& v : xa.data()) v *= a;
  auto p1 = estimate_psd(x, m), p2 = estimate_psd(xa, m);
  const std::vector<double> u{0.2, 0.5, 0.3};
  for (std::size_t j = 1; j < 3; ++j) {
    for (std::size_t f = 0; f < x.bins(); ++f)
      for (std::size_t i = 0; i < 9; ++i)
        CHECK(std::abs(p2.phi[j][f].data()[i] - a * a * p1.phi[j][f].data()[i]) <= 1e-10 * a * a * p1.phi[j][f].max_abs());
    auto g1 = mvdr_filter(p1, j, u), g2 = mvdr_filter(p2, j, u);
    for (std::size_t f = 0; f < x.bins(); ++f)
      for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(g1[f][c] - g2[f][c]) <= 1e-10 * std::abs(g1[f][c]) + 1e-14);
    auto s1 = beamform(x, g1), s2 = beamform(xa, g2);
    for (std::size_t i = 0; i < s1.data().size(); ++i)
      CHECK(std::abs(s2.data()[i] - a * s1.data()[i]) <= 1e-10 * a * std::abs(s1.data()[i]) + 1e-12);
  }
}

TEST_CASE("oracle masks separate band-disjoint anechoic talkers") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    dsp::ScenarioConfig cfg;
    cfg.channels = 2;
    auto sc = dsp::make_scenario(cfg, seed);
    auto x = dsp::stft(sc.mixture);
    std::vector<ComplexSpectrogram> comps{dsp::stft(sc.noise)};
    for (const auto& im : sc.images) comps.push_back(dsp::stft(im));
    auto psds = estimate_psd(x, oracle_masks(comps));
    for (std::size_t j = 1; j <= 2; ++j) {
      auto y = dsp::istft(beamform(x, mvdr_filter(psds, j, {1.0, 0.0})));
      const std::size_t n = y.length();
      auto ref = sc.images[j - 1].channel(0).subspan(0, n);
      const double before = dsp::si_snr(sc.mixture.channel(0).subspan(0, n), ref);
      const double after = dsp::si_snr(y.channel(0), ref);
      MESSAGE("seed " << seed << " speaker " << j << ": " << before << " -> " << after << " dB");
      CHECK(after > before + 10.0);
    }
  }
}

TEST_CASE("frontend selector limit with oracle masks on one source") {
  dsp::ScenarioConfig cfg;
  cfg.speakers = 1;
  cfg.noise_snr_db = INFINITY;
  for (std::size_t c_n : {1, 2, 3}) {
    cfg.channels = c_n;
    auto sc = dsp::make_scenario(cfg, 5);
    auto x = dsp::stft(sc.mixture);
    FrontendConfig fc;
    fc.mask.speakers = 1;
    FrontendParams params;
    params.config = fc;
    std::vector<Tensor> masks{Tensor({x.frames(), x.bins()}), Tensor({x.frames(), x.bins()}, 1.0)};
    Tensor feats = beamformed_features(beamform_with_masks(x, masks, params).front(), params);
    const Tensor ref = dsp::log_mel(dsp::magnitude(x, 0), dsp::mel_filterbank());
    CHECK(feats.shape() == ref.shape());
    double mad = 0.0;
    for (std::size_t i = 0; i < feats.size(); ++i) mad += std::abs(feats[i] - ref[i]);
    mad /= feats.size();
    MESSAGE("C=" << c_n << " mean abs diff " << mad);
    CHECK(mad < 0.1);
    if (c_n == 1) CHECK(mad < 1e-9);
  }
}

TEST_CASE("frontend_features: shapes and no temporal subsampling") {
  std::mt19937_64 rng(12);
  FrontendConfig fc;
  fc.mask = small_mask_config(257, 2);
  fc.reference.mode = ReferenceMode::kAttention;
  auto params = FrontendParams::init(fc, rng);
  dsp::ScenarioConfig cfg;
  cfg.channels = 2;
  auto x = dsp::stft(dsp::make_scenario(cfg, 1).mixture);
  auto feats = frontend_features(x, params);
  REQUIRE(feats.size() == 2);
  for (const auto& f : feats) {
    CHECK(f.dim(0) == x.frames());
    CHECK(f.dim(1) == 80);
    for (double v : f.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("differentiable frontend ops pass finite-difference checks") {
  const StftParams p = tiny_stft();
  auto x = random_spec(6, 3, p, 50);
  const std::size_t f_n = p.bins();
  std::mt19937_64 rng(51);
  SUBCASE("psd_op") {
    Tensor mask = msar::testing::random_tensor({6, f_n}, 52);
    for (auto& v : mask.values()) v = 0.2 + 0.6 / (1.0 + std::exp(-v));
    Tensor w = msar::testing::random_tensor({f_n, 3, 3, 2}, 53);
    auto res = msar::testing::check_gradients([&] { return ops::sum(ops::mul(psd_op(mask, x), w)); }, {mask});
    CHECK(res.rel_error < 1e-5);
  }
  SUBCASE("mvdr_op") {
    Tensor phi({f_n, 3, 3, 2}), n({f_n, 3, 3, 2});
    for (std::size_t f = 0; f < f_n; ++f) {
      auto a = random_pd(3, rng), b = random_pd(3, rng);
      for (std::size_t i = 0; i < 9; ++i) {
        phi[(f * 9 + i) * 2] = a.data()[i].real();
        phi[(f * 9 + i) * 2 + 1] = a.data()[i].imag();
        n[(f * 9 + i) * 2] = b.data()[i].real();
        n[(f * 9 + i) * 2 + 1] = b.data()[i].imag();
      }
    }
    Tensor u({3}, std::vector<double>{0.2, 0.3, 0.5});
    Tensor w = msar::testing::random_tensor({f_n, 3, 2}, 54);
    auto res = msar::testing::check_gradients([&] { return ops::sum(ops::mul(mvdr_op(phi, n, u), w)); },
                                              {phi, n, u});
    CHECK(res.rel_error < 1e-5);
  }
  SUBCASE("beamform_op, complex_abs, psd_diagonal") {
    Tensor g = msar::testing::random_tensor({f_n, 3, 2}, 55);
    Tensor w = msar::testing::random_tensor({6, f_n}, 56);
    auto res = msar::testing::check_gradients(
        [&] { return ops::sum(ops::mul(complex_abs(beamform_op(g, x)), w)); }, {g});
    CHECK(res.rel_error < 1e-5);
    Tensor phi = msar::testing::random_tensor({f_n, 3, 3, 2}, 57);
    Tensor wd = msar::testing::random_tensor({3, f_n}, 58);
    auto res2 = msar::testing::check_gradients([&] { return ops::sum(ops::mul(psd_diagonal(phi), wd)); }, {phi});
    CHECK(res2.rel_error < 1e-8);
  }
}

TEST_CASE("composed frontend passes a finite-difference check on a 6-frame toy") {
  const StftParams p = tiny_stft();
  auto x = random_spec(6, 2, p, 60);
  std::mt19937_64 rng(61);
  FrontendConfig fc;
  fc.mask = small_mask_config(p.bins(), 2);
  fc.reference.mode = ReferenceMode::kAttention;
  fc.reference.hidden = 4;
  fc.n_mels = 4;
  auto params = FrontendParams::init(fc, rng);
  msar::numerics::ParamList pl;
  params.collect(pl, "");
  std::vector<Tensor> ts;
  for (const auto& item : pl.items()) ts.push_back(item.tensor);
  Tensor w1 = msar::testing::random_tensor({6, 4}, 62), w2 = msar::testing::random_tensor({6, 4}, 63);
  auto loss = [&] {
    auto feats = frontend_features(x, params);
    return ops::add(ops::sum(ops::mul(feats[0], w1)), ops::sum(ops::mul(feats[1], w2)));
  };
  auto res = msar::testing::check_gradients(loss, ts, 1e-6, 4, 9);
  MESSAGE("rel error " << res.rel_error << " over " << res.entries << " entries");
  CHECK(res.rel_error < 1e-5);
  CHECK(res.analytic_norm > 0.0);
}

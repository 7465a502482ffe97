#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "msar/attention/attention.hpp"
#include "msar/error.hpp"
#include "msar/numerics/graph.hpp"
#include "msar/numerics/ops.hpp"
#include "oracles.hpp"
#include "transformer_oracle.hpp"

using namespace msar::attention;
using msar::numerics::Mask;
using msar::numerics::Tensor;
using msar::testing::random_tensor;
namespace ops = msar::numerics;

namespace {

void randomize(const ParamList& params, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (const auto& item : params.items())
    for (auto& v : Tensor(item.tensor).values()) v = g(rng);
}

Tensor eye(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

double max_abs(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ProjectionSet identity_projection(std::size_t d, std::size_t heads) {
  ProjectionSet p;
  p.heads = heads;
  p.wq = eye(d);
  p.wk = eye(d);
  p.wv = eye(d);
  p.wo = eye(d);
  p.bq = p.bk = p.bv = p.bo = Tensor({d}, 0.0);
  return p;
}

AttentionConfig small_config() {
  AttentionConfig cfg;
  cfg.d_att = 8;
  cfg.heads = 2;
  cfg.d_ff = 12;
  return cfg;
}

}  // namespace

TEST_CASE("scaled_dot_attention: singleton keys, uniform weights and oracle") {
  Tensor q = random_tensor({3, 4}, 1), k1 = random_tensor({1, 4}, 2), v1 = random_tensor({1, 5}, 3);
  Tensor o = scaled_dot_attention(q, k1, v1);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(o.at(i, j) == v1.at(0, j));

  Tensor qz({2, 4}, 0.0), k = random_tensor({6, 4}, 4), v = random_tensor({6, 3}, 5);
  Tensor u = scaled_dot_attention(qz, k, v);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0;
    for (std::size_t r = 0; r < 6; ++r) m += v.at(r, j);
    CHECK(std::abs(u.at(0, j) - m / 6.0) < 1e-14);
  }

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor a = random_tensor({4, 8}, 10 + seed), b = random_tensor({4, 8}, 20 + seed), c = random_tensor({4, 8}, 30 + seed);
    Tensor r = scaled_dot_attention(a, b, c);
    auto ref = msar::testing::attention_oracle(a, b, c, nullptr);
    for (std::size_t i = 0; i < r.size(); ++i)
      CHECK(std::abs(r[i] - static_cast<double>(ref[i])) <= 1e-12 * std::max(1.0, std::abs(static_cast<double>(ref[i]))));
  }
}

TEST_CASE("attention weights are row-stochastic and permutation consistent") {
  Tensor q = random_tensor({7, 4}, 40), k = random_tensor({9, 4}, 41), v = random_tensor({9, 3}, 42);
  Mask m(7, 9, false);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 9; ++j) m.set(i, j, (i + j) % 3 != 0 || j == i);
  Tensor w = attention_weights(q, k, &m);
  for (std::size_t i = 0; i < 7; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += w.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  std::vector<std::size_t> perm{3, 8, 0, 5, 1, 7, 2, 6, 4};
  Tensor kp = ops::gather_rows(k, perm), vp = ops::gather_rows(v, perm);
  Mask mp(7, 9, false);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 9; ++j) mp.set(i, j, m(i, perm[j]));
  CHECK(max_abs(scaled_dot_attention(q, k, v, &m), scaled_dot_attention(q, kp, vp, &mp)) < 1e-14);
}

TEST_CASE("fully masked rows are rejected") {
  Tensor q = random_tensor({2, 4}, 1);
  Mask m(2, 2, true);
  m.set(1, 0, false);
  m.set(1, 1, false);
  CHECK_THROWS_AS(scaled_dot_attention(q, q, q, &m), msar::ContractError);
}

TEST_CASE("multi-head attention reductions and compositional oracle") {
  Tensor x = random_tensor({5, 6}, 50), y = random_tensor({7, 6}, 51);
  auto one = identity_projection(6, 1);
  CHECK(max_abs(multi_head_attention(x, y, y, one), scaled_dot_attention(x, y, y)) < 1e-15);

  auto zero = identity_projection(6, 3);
  zero.wo = Tensor({6, 6}, 0.0);
  Tensor z = multi_head_attention(x, y, y, zero);
  for (double v : z.values()) CHECK(v == 0.0);

  auto two = identity_projection(6, 2);
  Tensor both = multi_head_attention(x, y, y, two);
  for (std::size_t h = 0; h < 2; ++h) {
    Tensor part = scaled_dot_attention(ops::slice_cols(x, 3 * h, 3), ops::slice_cols(y, 3 * h, 3),
                                       ops::slice_cols(y, 3 * h, 3));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(both.at(i, 3 * h + j) - part.at(i, j)) < 1e-13);
  }
  CHECK_THROWS_AS(multi_head_attention(random_tensor({2, 5}, 1), y, y, two), msar::ShapeError);

  std::mt19937_64 rng(3);
  auto proj = ProjectionSet::init(6, 3, rng);
  ParamList pl;
  proj.collect(pl, "");
  randomize(pl, 9);
  auto ref = msar::testing::oracle_mha(msar::testing::to_matrix(x), msar::testing::to_matrix(y),
                                       msar::testing::to_matrix(y), proj, nullptr);
  CHECK(msar::testing::max_diff(multi_head_attention(x, y, y, proj), ref) < 1e-12);
}

TEST_CASE("band_mask patterns") {
  Mask id = band_mask(6, 0, 0);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(id(i, j) == (i == j));
  Mask full = band_mask(6, 5, 9);
  for (auto a : full.allowed) CHECK(a == 1);

  Mask m = band_mask(5, 1, 2);
  // enumerate t-l <= s <= t+r directly
  for (long t = 0; t < 5; ++t)
    for (long s = 0; s < 5; ++s) CHECK(m(t, s) == (s >= t - 1 && s <= t + 2));
  CHECK(m(0, 0));
  CHECK(m(0, 2));
  CHECK(!m(0, 3));
  CHECK(m(4, 3));
  CHECK(m(4, 4));
  CHECK(!m(4, 2));
}

TEST_CASE("sinusoidal positions") {
  Tensor pe = sinusoidal_positions(50, 16);
  for (std::size_t j = 0; j < 16; ++j) CHECK(pe.at(0, j) == (j % 2 == 0 ? 0.0 : 1.0));
  for (double v : pe.values()) CHECK(std::abs(v) <= 1.0);
  for (std::size_t t = 0; t < 50; ++t)
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(std::abs(pe.at(t, 2 * i) - std::sin(t / std::pow(10000.0, 2.0 * i / 16.0))) < 1e-14);
      CHECK(std::abs(pe.at(t, 2 * i + 1) - std::cos(t / std::pow(10000.0, 2.0 * i / 16.0))) < 1e-14);
    }
  CHECK_THROWS_AS(sinusoidal_positions(3, 5), msar::ConfigError);
}

TEST_CASE("encoder layer: residual identity, saturation and re-composition oracle") {
  std::mt19937_64 rng(7);
  auto cfg = small_config();
  auto p = EncoderLayerParams::init(cfg, rng);
  Tensor x = random_tensor({10, 8}, 60);

  auto idle = p;
  idle.attn.wo = Tensor({8, 8}, 0.0);
  idle.ff.w2 = Tensor({12, 8}, 0.0);
  CHECK(max_abs(encoder_layer(x, idle, std::nullopt), x) == 0.0);

  ParamList pl;
  p.collect(pl, "");
  randomize(pl, 61);
  CHECK(max_abs(encoder_layer(x, p, Window{10, 10}), encoder_layer(x, p, std::nullopt)) < 1e-12);

  auto ref = msar::testing::oracle_encoder_layer(msar::testing::to_matrix(x), p, nullptr);
  CHECK(msar::testing::max_diff(encoder_layer(x, p, std::nullopt), ref) < 1e-12);
  Mask band = band_mask(10, 2, 1);
  auto ref_band = msar::testing::oracle_encoder_layer(msar::testing::to_matrix(x), p, &band);
  CHECK(msar::testing::max_diff(encoder_layer(x, p, Window{2, 1}), ref_band) < 1e-12);
}

TEST_CASE("banded attention equals full attention once the window saturates") {
  std::mt19937_64 rng(8);
  auto p = EncoderLayerParams::init(small_config(), rng);
  ParamList pl;
  p.collect(pl, "");
  randomize(pl, 62);
  for (std::size_t t : {1, 2, 5, 17, 64}) {
    Tensor x = random_tensor({t, 8}, 70 + t);
    CHECK(max_abs(encoder_layer(x, p, Window{t - 1, t - 1}), encoder_layer(x, p, std::nullopt)) < 1e-12);
  }
}

TEST_CASE("decoder layer: single step, causality and re-composition oracle") {
  std::mt19937_64 rng(9);
  auto p = DecoderLayerParams::init(small_config(), rng);
  ParamList pl;
  p.collect(pl, "");
  randomize(pl, 63);
  Tensor mem = random_tensor({6, 8}, 80);

  Tensor y1 = random_tensor({1, 8}, 81);
  // with one query, self-attention returns the projected value of that query
  Tensor n1 = apply_layer_norm(y1, p.ln_self);
  Tensor self = ops::add_row(ops::matmul(ops::add_row(ops::matmul(n1, p.self_attn.wv), p.self_attn.bv), p.self_attn.wo),
                             p.self_attn.bo);
  Tensor h = ops::add(y1, self);
  h = ops::add(h, multi_head_attention(apply_layer_norm(h, p.ln_cross), mem, mem, p.cross_attn));
  h = ops::add(h, feed_forward(apply_layer_norm(h, p.ln_ff), p.ff));
  CHECK(max_abs(decoder_layer(y1, mem, p), h) < 1e-13);

  Tensor y = random_tensor({5, 8}, 82);
  Tensor base = decoder_layer(y, mem, p);
  for (std::size_t n = 0; n < 5; ++n) {
    Tensor pert = y.clone();
    for (std::size_t j = 0; j < 8; ++j) pert.at(n, j) += 0.7;
    Tensor out = decoder_layer(pert, mem, p);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < 8; ++j) CHECK(out.at(r, j) == base.at(r, j));
  }

  auto ref = msar::testing::oracle_decoder_layer(msar::testing::to_matrix(y), msar::testing::to_matrix(mem), p);
  CHECK(msar::testing::max_diff(base, ref) < 1e-12);
}

TEST_CASE("encoder and decoder layers pass finite-difference checks") {
  std::mt19937_64 rng(10);
  auto cfg = small_config();
  auto enc = EncoderLayerParams::init(cfg, rng);
  auto dec = DecoderLayerParams::init(cfg, rng);
  ParamList pl;
  enc.collect(pl, "enc.");
  dec.collect(pl, "dec.");
  randomize(pl, 64);
  Tensor x = random_tensor({6, 8}, 90).set_requires_grad();
  Tensor y = random_tensor({4, 8}, 91).set_requires_grad();
  Tensor w = random_tensor({4, 8}, 92);
  auto loss = [&]() {
    Tensor m = encoder_layer(x, enc, Window{1, 2});
    Tensor o = decoder_layer(y, m, dec);
    return ops::sum(ops::mul(ops::tanh(o), w));
  };
  std::vector<Tensor> params{x, y};
  for (const auto& item : pl.items()) params.push_back(item.tensor);
  auto res = msar::testing::check_gradients(loss, params, 1e-6, 6, 3);
  CHECK(res.rel_error < 1e-5);
}

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "msar/backend/model.hpp"
#include "msar/error.hpp"
#include "msar/numerics/graph.hpp"
#include "msar/numerics/ops.hpp"
#include "oracles.hpp"

using namespace msar::backend;
using msar::numerics::Tensor;
using msar::testing::random_tensor;
namespace ops = msar::numerics;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

BackendConfig small_config() {
  BackendConfig c;
  c.n_mels = 8;
  c.cnn_channels1 = 2;
  c.cnn_channels2 = 3;
  c.attention = {8, 2, 16, std::nullopt};
  c.sd_layers = 1;
  c.rec_layers = 1;
  c.dec_layers = 1;
  c.vocab_symbols = 3;
  return c;
}

void randomize(const ParamList& params, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (const auto& item : params.items())
    for (auto& v : Tensor(item.tensor).values()) v = g(rng);
}

Tensor random_log_probs(std::size_t l, std::size_t v, std::uint64_t seed) {
  return ops::log_softmax(random_tensor({l, v}, seed, 1.5));
}

std::vector<std::vector<double>> rows(const Tensor& z) {
  std::vector<std::vector<double>> out(z.dim(0), std::vector<double>(z.dim(1)));
  for (std::size_t t = 0; t < z.dim(0); ++t)
    for (std::size_t k = 0; k < z.dim(1); ++k) out[t][k] = z.at(t, k);
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("vocabulary layout and reference checks") {
  auto v = Vocabulary::letters();
  CHECK(v.size() == 12);
  CHECK(v.blank() == 0);
  CHECK(v.sos_eos() == 11);
  CHECK(v.id("a") == 1);
  CHECK(v.token(10) == "j");
  CHECK(v.symbols().size() == 10);
  CHECK(v.render({1, 2, 3}) == "a b c");
  CHECK_NOTHROW(v.check_reference({1, 10}));
  CHECK_THROWS_AS(v.check_reference({0}), msar::VocabularyError);
  CHECK_THROWS_AS(v.check_reference({11}), msar::VocabularyError);
  CHECK_THROWS_AS(v.check_reference({12}), msar::VocabularyError);
  CHECK_THROWS_AS(v.id("z"), msar::VocabularyError);
  CHECK_THROWS_AS(Vocabulary({"x", "y"}, 1, 1), msar::ConfigError);
}

TEST_CASE("cnn_embed: length arithmetic, zero input and widths") {
  CHECK(subsampled_length(8) == 2);
  CHECK(subsampled_length(4) == 1);
  CHECK(subsampled_length(5) == 2);
  CHECK(subsampled_length(61) == 16);
  std::mt19937_64 rng(1);
  auto cfg = small_config();
  auto p = BackendParams::init(cfg, rng);
  for (auto& v : p.cnn.proj_b.values()) v = 0.25;
  Tensor h = cnn_embed(Tensor({8, 8}), p);
  const Tensor pe = msar::attention::sinusoidal_positions(2, 8);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == doctest::Approx(0.25 * std::sqrt(8.0) + pe[i]).epsilon(1e-15));
  CHECK_THROWS_AS(cnn_embed(Tensor({3, 8}), p), msar::TooShortError);
  CHECK_THROWS_AS(cnn_embed(Tensor({8, 7}), p), msar::ShapeError);

  std::mt19937_64 sweep(2);
  for (int i = 0; i < 8; ++i) {
    auto c = small_config();
    c.n_mels = 4 + sweep() % 13;
    c.attention.d_att = 2 * (1 + sweep() % 5);
    c.attention.heads = 1;
    const std::size_t t = 4 + sweep() % 40;
    auto q = BackendParams::init(c, rng);
    Tensor o = cnn_embed(random_tensor({t, c.n_mels}, 10 + i), q);
    CHECK(o.dim(0) == subsampled_length(t));
    CHECK(o.dim(1) == c.attention.d_att);
  }
}

TEST_CASE("encode_single_channel: shapes, branch symmetry and isolation") {
  std::mt19937_64 rng(3);
  auto p = BackendParams::init(small_config(), rng);
  Tensor o = random_tensor({13, 8}, 4);
  auto g = encode_single_channel(o, p);
  REQUIRE(g.size() == 2);
  CHECK(g[0].shape() == g[1].shape());
  CHECK(g[0].dim(0) == subsampled_length(13));
  CHECK(max_abs_diff(g[0], g[1]) > 1e-6);

  ParamList b0, b1;
  p.sd[0][0].collect(b0, "");
  p.sd[1][0].collect(b1, "");
  auto saved = b1.items();
  std::vector<Tensor> backup;
  for (const auto& item : saved) backup.push_back(item.tensor.clone());
  for (std::size_t i = 0; i < b0.size(); ++i) {
    Tensor dst = b1.items()[i].tensor;
    std::copy(b0.items()[i].tensor.values().begin(), b0.items()[i].tensor.values().end(), dst.values().begin());
  }
  auto same = encode_single_channel(o, p);
  CHECK(same[0].values().size() == same[1].values().size());
  CHECK(std::equal(same[0].values().begin(), same[0].values().end(), same[1].values().begin()));
  for (std::size_t i = 0; i < backup.size(); ++i) {
    Tensor dst = b1.items()[i].tensor;
    std::copy(backup[i].values().begin(), backup[i].values().end(), dst.values().begin());
  }

  Tensor w = p.sd[0][0].ff.w1;
  w[3] += 0.5;
  auto moved = encode_single_channel(o, p);
  CHECK(max_abs_diff(moved[0], g[0]) > 1e-6);
  CHECK(max_abs_diff(moved[1], g[1]) == 0.0);

  auto one = small_config();
  one.speakers = 1;
  auto q = BackendParams::init(one, rng);
  CHECK_THROWS_AS(encode_single_channel(o, q), msar::ContractError);
}

TEST_CASE("encode_stream: determinism and equivalence with a branch-free single-channel encoder") {
  auto cfg = small_config();
  cfg.sd_layers = 0;
  cfg.rec_layers = 3;
  std::mt19937_64 rng(5);
  auto p = BackendParams::init(cfg, rng);
  CHECK(p.sd.empty());
  Tensor o = random_tensor({17, 8}, 6);
  Tensor a = encode_stream(o, p), b = encode_stream(o, p);
  CHECK(a.dim(0) == subsampled_length(17));
  CHECK(max_abs_diff(a, b) == 0.0);
  auto streams = encode_single_channel(o, p);
  for (const auto& s : streams) CHECK(max_abs_diff(s, a) == 0.0);
}

TEST_CASE("ctc_loss: closed forms, enumeration oracle and infeasible lengths") {
  const std::size_t blank = 0;
  SUBCASE("single frame") {
    Tensor z = random_log_probs(1, 3, 1);
    CHECK(ctc_loss(z, {2}, blank).item() == doctest::Approx(-z.at(0, 2)).epsilon(1e-14));
  }
  SUBCASE("two frames, one label") {
    Tensor z = random_log_probs(2, 3, 2);
    auto p = [&](std::size_t t, std::size_t k) { return std::exp(z.at(t, k)); };
    const double ref = -std::log(p(0, 1) * p(1, 1) + p(0, 1) * p(1, 0) + p(0, 0) * p(1, 1));
    CHECK(ctc_loss(z, {1}, blank).item() == doctest::Approx(ref).epsilon(1e-13));
  }
  SUBCASE("uniform posteriors") {
    Tensor z({4, 3}, std::log(1.0 / 3.0));
    const double ref = msar::testing::ctc_enumeration(rows(z), {1, 2}, blank);
    CHECK(std::abs(ctc_loss(z, {1, 2}, blank).item() - ref) < 1e-12);
  }
  SUBCASE("random cases against enumeration") {
    std::mt19937_64 rng(9);
    int checked = 0;
    for (std::size_t l = 1; l <= 6; ++l)
      for (std::size_t v = 2; v <= 4; ++v)
        for (std::size_t n = 0; n <= 3; ++n) {
          TokenSequence r(n);
          for (auto& t : r) t = 1 + rng() % (v - 1);
          Tensor z = random_log_probs(l, v, rng());
          const double ref = msar::testing::ctc_enumeration(rows(z), r, 0);
          const double got = ctc_loss(z, r, 0).item();
          if (std::isinf(ref)) {
            CHECK(std::isinf(got));
          } else {
            CHECK(std::abs(got - ref) <= 1e-10 * std::abs(ref) + 1e-14);
          }
          ++checked;
        }
    CHECK(checked == 72);
  }
  SUBCASE("too short is +inf with no gradient") {
    Tensor logits = random_tensor({2, 3}, 3).set_requires_grad();
    msar::numerics::DiffGraph graph;
    msar::numerics::GraphScope scope(graph);
    Tensor loss = ctc_loss(ops::log_softmax(logits), {1, 1}, 0);
    CHECK(std::isinf(loss.item()));
    CHECK(loss.item() > 0);
  }
  SUBCASE("gradient") {
    Tensor logits = random_tensor({7, 4}, 8);
    auto res = msar::testing::check_gradients([&] { return ctc_loss(ops::log_softmax(logits), {1, 3, 3}, 0); },
                                              {logits});
    CHECK(res.rel_error < 1e-7);
  }
  CHECK_THROWS_AS(ctc_loss(random_log_probs(3, 3, 1), {0}, 0), msar::VocabularyError);
}

TEST_CASE("pit_assign: fixed cases, brute force and tie-break") {
  CHECK(pit_assign({{3.0}}) == std::vector<std::size_t>{0});
  CHECK(pit_assign({{1, 10}, {10, 1}}) == std::vector<std::size_t>{0, 1});
  CHECK(pit_assign({{10, 1}, {1, 10}}) == std::vector<std::size_t>{1, 0});
  CHECK(pit_assign({{kInf, kInf}, {kInf, kInf}}) == std::vector<std::size_t>{0, 1});
  CHECK(pit_assign({{kInf, 2}, {1, kInf}}) == std::vector<std::size_t>{1, 0});
  std::mt19937_64 rng(17);
  for (std::size_t j : {2, 3}) {
    const auto perms = msar::testing::all_permutations(j);
    for (int seed = 0; seed < 100; ++seed) {
      std::vector<std::vector<double>> c(j, std::vector<double>(j));
      for (auto& row : c)
        for (auto& v : row) v = rng() % 7 == 0 ? kInf : static_cast<double>(rng() % 4);
      std::size_t best = 0;
      double best_cost = kInf;
      bool found = false;
      for (std::size_t i = 0; i < perms.size(); ++i) {
        double s = 0.0;
        for (std::size_t r = 0; r < j; ++r) s += c[r][perms[i][r]];
        if (!found || s < best_cost) {
          best = i;
          best_cost = s;
          found = true;
        }
      }
      CHECK(pit_assign(c) == perms[best]);
    }
  }
  CHECK_THROWS_AS(pit_assign(std::vector<std::vector<double>>(5, std::vector<double>(5, 1.0))), msar::UnsupportedError);
  CHECK_THROWS_AS(pit_assign({{1, 2}}), msar::ShapeError);
}

TEST_CASE("attention_ce_loss: uniform decoder, smoothing floor, incremental oracle") {
  std::mt19937_64 rng(21);
  auto cfg = small_config();
  cfg.vocab_symbols = 1;
  auto p = BackendParams::init(cfg, rng);
  Tensor g = random_tensor({3, 8}, 22);
  for (auto& v : p.out_w.values()) v = 0.0;
  CHECK(attention_ce_loss(g, {1, 1, 1}, p).item() == doctest::Approx(std::log(3.0)).epsilon(1e-14));

  auto q = BackendParams::init(small_config(), rng);
  ParamList pl;
  q.collect(pl, "");
  randomize(pl, 23, 0.8);
  const double eps = 0.1, v = 5.0;
  const double hi = 1.0 - eps + eps / v, lo = eps / v;
  const double floor = -hi * std::log(hi) - (v - 1.0) * lo * std::log(lo);
  for (std::uint64_t s = 0; s < 10; ++s) {
    TokenSequence r{1 + s % 3, 1 + (s / 3) % 3};
    CHECK(attention_ce_loss(random_tensor({4, 8}, 30 + s), r, q).item() >= floor - 1e-12);
  }

  const TokenSequence prefix{4, 1, 3, 2, 2};
  Tensor full = decoder_log_probs(g, prefix, q);
  for (std::size_t n = 1; n <= prefix.size(); ++n) {
    Tensor part = decoder_log_probs(g, TokenSequence(prefix.begin(), prefix.begin() + n), q);
    for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(part.at(n - 1, k) - full.at(n - 1, k)) < 1e-10);
  }
  CHECK_THROWS_AS(attention_ce_loss(g, {}, q), msar::ContractError);
}

TEST_CASE("joint_loss endpoints and interpolation") {
  std::vector<Tensor> ctc{Tensor::scalar(3.0), Tensor::scalar(5.0)};
  std::vector<Tensor> att{Tensor::scalar(1.0), Tensor::scalar(2.0)};
  CHECK(joint_loss(ctc, att, 1.0).item() == 8.0);
  CHECK(joint_loss(ctc, att, 0.0).item() == 3.0);
  CHECK(joint_loss(ctc, att, 0.2).item() == doctest::Approx(0.2 * 8.0 + 0.8 * 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(joint_loss(ctc, att, 1.5), msar::ConfigError);
  CHECK_THROWS_AS(joint_loss(ctc, att, -0.1), msar::ConfigError);
  std::vector<Tensor> ctc_inf{Tensor::scalar(kInf), Tensor::scalar(5.0)};
  CHECK(joint_loss(ctc_inf, att, 0.2).item() == doctest::Approx(0.2 * 5.0 + 0.8 * 3.0).epsilon(1e-15));
}

TEST_CASE("multi_speaker_loss: PIT symmetry and optimality of the CTC term") {
  std::mt19937_64 rng(31);
  auto p = BackendParams::init(small_config(), rng);
  ParamList pl;
  p.collect(pl, "");
  randomize(pl, 32, 0.5);
  for (std::uint64_t s = 0; s < 10; ++s) {
    std::vector<Tensor> enc{random_tensor({6, 8}, 100 + s), random_tensor({6, 8}, 200 + s)};
    std::vector<TokenSequence> refs{{1, 2}, {3, 3, 1}};
    auto a = multi_speaker_loss(enc, refs, p);
    auto b = multi_speaker_loss({enc[1], enc[0]}, {refs[1], refs[0]}, p);
    CHECK(a.joint.item() == doctest::Approx(b.joint.item()).epsilon(1e-13));
    const double chosen = a.ctc_matrix[0][a.perm[0]] + a.ctc_matrix[1][a.perm[1]];
    CHECK(chosen <= a.ctc_matrix[0][1 - a.perm[0]] + a.ctc_matrix[1][1 - a.perm[1]]);
    CHECK(a.ctc == doctest::Approx(chosen));
  }
}

TEST_CASE("decode: greedy oracle, termination and score accounting") {
  std::mt19937_64 rng(41);
  auto p = BackendParams::init(small_config(), rng);
  ParamList pl;
  p.collect(pl, "");
  randomize(pl, 42, 0.7);
  const std::size_t eos = 4;
  for (std::uint64_t s = 0; s < 8; ++s) {
    Tensor g = random_tensor({5, 8}, 300 + s);
    auto h = decode(g, p, 1, 6);
    TokenSequence prefix{eos}, greedy;
    double lp = 0.0;
    for (std::size_t step = 0; step < 6; ++step) {
      Tensor out = decoder_log_probs(g, prefix, p);
      std::size_t best = 1;
      for (std::size_t k = 1; k < 5; ++k)
        if (out.at(step, k) > out.at(step, best)) best = k;
      lp += out.at(step, best);
      greedy.push_back(best);
      prefix.push_back(best);
      if (best == eos) break;
    }
    CHECK(h.tokens == greedy);
    CHECK(h.log_prob == doctest::Approx(lp).epsilon(1e-12));
    CHECK(h.log_prob <= 0.0);
    CHECK(h.score == doctest::Approx(h.log_prob / h.tokens.size()));
    CHECK((h.tokens.back() == eos || h.tokens.size() == 6));
    CHECK(h.complete == (h.tokens.back() == eos));

    auto hb = decode(g, p, 4, 6);
    CHECK(!hb.tokens.empty());
    CHECK(hb.tokens.size() <= 6);
    CHECK((hb.tokens.back() == eos || hb.tokens.size() == 6));
    for (auto t : hb.tokens) CHECK(t != 0);
  }
}

TEST_CASE("token_error_rate") {
  CHECK(token_error_rate({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(token_error_rate({4, 5, 6}, {1, 2, 3}) == 1.0);
  CHECK(token_error_rate({1, 2, 3}, {1, 3}) == 0.5);
  CHECK(token_error_rate({}, {1, 3}) == 1.0);
  CHECK_THROWS_AS(token_error_rate({1}, {}), msar::ContractError);
  std::mt19937_64 rng(51);
  for (int i = 0; i < 200; ++i) {
    TokenSequence a(rng() % 7), b(1 + rng() % 7);
    for (auto& t : a) t = rng() % 4;
    for (auto& t : b) t = rng() % 4;
    CHECK(static_cast<double>(edit_distance(a, b)) == msar::testing::levenshtein_oracle(a, b));
  }
}

TEST_CASE("joint loss gradient on a two-utterance batch") {
  std::mt19937_64 rng(61);
  auto p = BackendParams::init(small_config(), rng);
  ParamList pl;
  p.collect(pl, "");
  randomize(pl, 62, 0.4);
  std::vector<Tensor> feats{random_tensor({12, 8}, 63), random_tensor({16, 8}, 64)};
  std::vector<std::vector<TokenSequence>> refs{{{1, 2}, {3}}, {{2, 2, 1}, {1, 3}}};
  std::vector<Tensor> ts;
  for (const auto& item : pl.items()) ts.push_back(item.tensor);
  auto loss = [&] {
    std::vector<Tensor> parts;
    for (std::size_t u = 0; u < 2; ++u) parts.push_back(multi_speaker_loss(encode_single_channel(feats[u], p), refs[u], p).joint);
    return ops::add(parts[0], parts[1]);
  };
  auto res = msar::testing::check_gradients(loss, ts, 1e-6, 3, 5);
  MESSAGE("rel error " << res.rel_error << " over " << res.entries << " entries");
  CHECK(res.rel_error < 1e-5);
}

#include <algorithm>
#include <cmath>
#include <random>

#include "acceptance.hpp"
#include "gradcheck.hpp"
#include "msar/attention/attention.hpp"
#include "msar/backend/losses.hpp"
#include "msar/frontend/frontend.hpp"
#include "msar/numerics/ops.hpp"
#include "msar/training/model.hpp"

namespace msar::acceptance {

using numerics::Mask;
using numerics::Tensor;
using testing::check_gradients;
using testing::random_tensor;
namespace ops = numerics;

namespace {

constexpr double kLimit = 1e-5;
constexpr dsp::StftParams kTinyStft{16, 8, 16};

std::vector<Tensor> tensors_of(const numerics::ParamList& pl) {
  std::vector<Tensor> out;
  for (const auto& item : pl.items()) out.push_back(item.tensor);
  return out;
}

void randomize(const numerics::ParamList& pl, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  for (const auto& item : pl.items())
    for (auto& v : Tensor(item.tensor).values()) v = g(rng);
}

dsp::ComplexSpectrogram random_spec(std::size_t frames, std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  dsp::ComplexSpectrogram x(frames, channels, kTinyStft);
  for (auto& v : x.data()) v = {g(rng), g(rng)};
  return x;
}

double primitives() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor a = random_tensor({3, 4}, 100 + seed), b = random_tensor({4, 5}, 200 + seed);
    Tensor c = random_tensor({5, 4}, 300 + seed), v = random_tensor({5}, 400 + seed);
    Tensor gain = random_tensor({5}, 500 + seed), bias = random_tensor({5}, 600 + seed);
    Tensor pos = random_tensor({3, 5}, 700 + seed);
    for (auto& e : pos.values()) e = std::abs(e) + 0.5;
    const std::vector<std::size_t> targets{1, 4, 0};
    auto loss = [&] {
      Tensor ab = ops::matmul(a, b);
      Tensor abt = ops::matmul_nt(ab, ops::transpose(c));
      Tensor t2 = ops::sigmoid(ops::mul_row(ops::tanh(ops::add_row(ab, v)), gain));
      Tensor ln = ops::layer_norm(ops::add(t2, ab), gain, bias, 1e-6);
      Tensor sm = ops::softmax(ln, 0);
      Tensor ce = ops::label_smoothed_nll(ops::log_softmax(ops::mul(ln, pos)), targets, 0.1);
      Tensor r = ops::relu(ops::sub(ab, ops::scale(pos, 0.3)));
      Tensor tr = ops::transpose(abt);
      Tensor cat = ops::concat_cols(std::vector<Tensor>{ops::slice_cols(tr, 0, 2), ops::slice_cols(tr, 1, 2)});
      Tensor rows = ops::concat_rows(std::vector<Tensor>{
          ops::slice_rows(ab, 1, 2), ops::gather_rows(ops::transpose(c), std::vector<std::size_t>{0, 0, 3})});
      Tensor e = ops::exp(ops::scale(ops::reshape(sm, {15}), 0.5));
      std::vector<Tensor> terms{ops::sum(ops::mul(sm, ln)), ce, ops::mean(ops::mul(ops::log(pos, 0.1), r)),
                                ops::sum(ops::mul(cat, cat)), ops::mean(rows), ops::sum(ops::add_scalar(e, 1.0))};
      const std::vector<double> w{1.0, 0.7, 1.3, 0.05, 2.0, 0.1};
      return ops::weighted_sum(terms, w);
    };
    worst = std::max(worst, check_gradients(loss, {a, b, c, v, gain, bias, pos}).rel_error);

    Tensor in = random_tensor({2, 5, 6}, 800 + seed), k = random_tensor({3, 2, 3, 3}, 900 + seed, 0.5);
    Tensor kb = random_tensor({3}, 1000 + seed), scores = random_tensor({4, 4}, 1100 + seed);
    Mask mask(4, 4, false);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) mask.set(i, j, j + 1 >= i && j <= i + 1);
    auto loss2 = [&] {
      std::mt19937_64 drop_rng(seed);
      Tensor f = ops::flatten_channels(ops::relu(ops::conv2d(in, k, seed % 2 ? 2 : 1, kb)));
      Tensor d = ops::dropout(f, 0.3, drop_rng);
      return ops::add(ops::mean(ops::mul(d, f)), ops::sum(ops::mul(ops::masked_softmax(scores, mask), scores)));
    };
    worst = std::max(worst, check_gradients(loss2, {in, k, kb, scores}).rel_error);
  }
  return worst;
}

double attention_layers() {
  double worst = 0.0;
  std::mt19937_64 rng(21);
  attention::AttentionConfig cfg{8, 2, 12, attention::Window{2, 1}};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto enc = attention::EncoderLayerParams::init(cfg, rng);
    auto dec = attention::DecoderLayerParams::init(cfg, rng);
    numerics::ParamList pl;
    enc.collect(pl, "enc.");
    dec.collect(pl, "dec.");
    randomize(pl, 30 + seed);
    Tensor x = random_tensor({6, 8}, 40 + seed), y = random_tensor({4, 8}, 50 + seed);
    Tensor w1 = random_tensor({6, 8}, 60 + seed), w2 = random_tensor({4, 8}, 70 + seed);
    auto loss = [&] {
      Tensor h = attention::encoder_layer(x, enc, cfg.window);
      Tensor o = attention::decoder_layer(y, h, dec);
      return ops::add(ops::sum(ops::mul(h, w1)), ops::sum(ops::mul(o, w2)));
    };
    auto params = tensors_of(pl);
    params.push_back(x);
    params.push_back(y);
    worst = std::max(worst, check_gradients(loss, params, 1e-6, 6, seed).rel_error);
  }
  return worst;
}

double ctc() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor logits = random_tensor({7 + seed, 4}, 80 + seed);
    const backend::TokenSequence ref{1, 3, 3};
    worst = std::max(worst, check_gradients([&] { return backend::ctc_loss(ops::log_softmax(logits), ref, 0); },
                                            {logits})
                                .rel_error);
  }
  return worst;
}

double frontend_ops() {
  double worst = 0.0;
  const auto x = random_spec(6, 3, 90);
  const std::size_t f_n = kTinyStft.bins();
  Tensor mask = random_tensor({6, f_n}, 91);
  for (auto& v : mask.values()) v = 0.2 + 0.6 / (1.0 + std::exp(-v));
  Tensor w = random_tensor({f_n, 3, 3, 2}, 92);
  worst = std::max(worst, check_gradients([&] { return ops::sum(ops::mul(frontend::psd_op(mask, x), w)); }, {mask})
                              .rel_error);

  // Hermitian positive definite target and interference built from the mask
  // path itself, then perturbed through the raw tensors.
  Tensor m2 = random_tensor({6, f_n}, 93);
  for (auto& v : m2.values()) v = 0.2 + 0.6 / (1.0 + std::exp(-v));
  Tensor phi = frontend::psd_op(mask, x), noise = frontend::psd_op(m2, x);
  Tensor phi_leaf(phi.shape(), std::vector<double>(phi.values().begin(), phi.values().end()));
  Tensor noise_leaf(noise.shape(), std::vector<double>(noise.values().begin(), noise.values().end()));
  Tensor u({3}, std::vector<double>{0.2, 0.3, 0.5});
  Tensor wg = random_tensor({f_n, 3, 2}, 94);
  worst = std::max(worst, check_gradients([&] { return ops::sum(ops::mul(frontend::mvdr_op(phi_leaf, noise_leaf, u), wg)); },
                                          {phi_leaf, noise_leaf, u})
                              .rel_error);

  Tensor g = random_tensor({f_n, 3, 2}, 95);
  Tensor ws = random_tensor({6, f_n}, 96);
  worst = std::max(worst, check_gradients([&] {
                            return ops::sum(ops::mul(frontend::complex_abs(frontend::beamform_op(g, x)), ws));
                          },
                                          {g})
                              .rel_error);
  Tensor wd = random_tensor({3, f_n}, 97);
  worst = std::max(
      worst, check_gradients([&] { return ops::sum(ops::mul(frontend::psd_diagonal(phi_leaf), wd)); }, {phi_leaf})
                 .rel_error);

  std::mt19937_64 rng(98);
  frontend::ReferenceConfig rc;
  rc.mode = frontend::ReferenceMode::kAttention;
  rc.hidden = 4;
  auto scorer = frontend::ReferenceScorer::init(f_n, 4, rng);
  numerics::ParamList pl;
  scorer.collect(pl, "");
  randomize(pl, 99);
  auto params = tensors_of(pl);
  params.push_back(phi_leaf);
  params.push_back(noise_leaf);
  Tensor wr = random_tensor({3}, 100);
  worst = std::max(worst, check_gradients([&] {
                            return ops::sum(ops::mul(frontend::reference_op({phi_leaf, noise_leaf}, rc, scorer), wr));
                          },
                                          params)
                              .rel_error);
  return worst;
}

training::ModelConfig tiny_model(bool multichannel) {
  training::ModelConfig c;
  auto& b = c.backend;
  b.n_mels = 4;
  b.cnn_channels1 = 2;
  b.cnn_channels2 = 2;
  b.attention = {4, 1, 8, std::nullopt};
  b.sd_layers = multichannel ? 0 : 1;
  b.rec_layers = 1;
  b.dec_layers = 1;
  b.vocab_symbols = 3;
  if (multichannel) {
    frontend::FrontendConfig f;
    f.mask = {kTinyStft.bins(), 2, 4, 1, 8, 1, {2, 2}};
    f.n_mels = 4;
    f.reference.mode = frontend::ReferenceMode::kAttention;
    f.reference.hidden = 3;
    c.frontend = f;
  }
  return c;
}

double composed(bool multichannel) {
  auto model = training::Model::init(tiny_model(multichannel), 7);
  const std::size_t channels = multichannel ? 2 : 1;
  std::vector<training::Utterance> data;
  std::mt19937_64 rng(multichannel ? 110 : 120);
  std::normal_distribution<double> g;
  for (std::size_t i = 0; i < 2; ++i) {
    training::Utterance u;
    u.id = "g" + std::to_string(i);
    u.mixture = random_spec(22 + i, channels, rng());
    for (std::size_t j = 0; j < 2; ++j) {
      u.references.push_back(random_spec(22 + i, 1, rng()));
      u.refs.push_back({1 + j, 1 + (i + j) % 3});
    }
    data.push_back(std::move(u));
  }
  training::fit_statistics(model, data);
  if (!multichannel) training::attach_features(model, data);
  const auto params = tensors_of(model.parameters());
  auto loss = [&] {
    return ops::add(training::utterance_loss(model, data[0]).joint, training::utterance_loss(model, data[1]).joint);
  };
  return check_gradients(loss, params, 1e-6, 2, 11).rel_error;
}

}  // namespace

Outcome gradient_suite(const Context&) {
  struct Group {
    const char* name;
    double (*run)();
  };
  const Group groups[] = {{"primitives", primitives},
                          {"attention layers", attention_layers},
                          {"ctc", ctc},
                          {"frontend ops", frontend_ops},
                          {"single-channel model", [] { return composed(false); }},
                          {"frontend+backend model", [] { return composed(true); }}};
  bool ok = true;
  std::string detail;
  for (const auto& grp : groups) {
    const double e = grp.run();
    ok = ok && e < kLimit;
    detail += format("%s%s %.2g", detail.empty() ? "" : ", ", grp.name, e);
  }
  return {ok, "max rel err per group (limit 1e-5): " + detail};
}

}  // namespace msar::acceptance

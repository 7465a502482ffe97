#include "msar/frontend/frontend.hpp"

#include <cmath>
#include <string>

#include "msar/error.hpp"
#include "msar/numerics/graph.hpp"
#include "msar/numerics/ops.hpp"

namespace msar::frontend {

namespace ops = msar::numerics;

void MaskNetConfig::validate() const {
  if (bins == 0) throw ConfigError("mask net: bins must be positive");
  if (speakers == 0) throw ConfigError("mask net: need at least one speaker");
  if (layers == 0) throw ConfigError("mask net: need at least one layer");
  attention::AttentionConfig{d_att, heads, d_ff, window}.validate();
}

MaskNetParams MaskNetParams::init(const MaskNetConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  MaskNetParams p;
  p.config = cfg;
  p.w_in = numerics::xavier_uniform(cfg.bins, cfg.d_att, rng);
  p.b_in = numerics::constant_param({cfg.d_att}, 0.0);
  const attention::AttentionConfig att{cfg.d_att, cfg.heads, cfg.d_ff, cfg.window};
  for (std::size_t l = 0; l < cfg.layers; ++l) p.layers.push_back(attention::EncoderLayerParams::init(att, rng));
  p.ln_out = attention::LayerNormParams::init(cfg.d_att);
  p.w_out = numerics::xavier_uniform(cfg.d_att, cfg.bins * (cfg.speakers + 1), rng);
  p.b_out = numerics::constant_param({cfg.bins * (cfg.speakers + 1)}, 0.0);
  return p;
}

void MaskNetParams::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + "w_in", w_in);
  out.add(prefix + "b_in", b_in);
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(out, prefix + "layer" + std::to_string(l) + ".");
  ln_out.collect(out, prefix + "ln_out.");
  out.add(prefix + "w_out", w_out);
  out.add(prefix + "b_out", b_out);
}

Tensor mask_net_input(const ComplexSpectrogram& x, std::size_t channel) {
  Tensor in({x.frames(), x.bins()});
  for (std::size_t t = 0; t < x.frames(); ++t)
    for (std::size_t f = 0; f < x.bins(); ++f) in.at(t, f) = std::log(std::abs(x.at(t, f, channel)) + 1e-10);
  return in;
}

std::vector<Tensor> mask_net_outputs(const ComplexSpectrogram& x, const MaskNetParams& p, const Dropout& drop) {
  const auto& cfg = p.config;
  if (x.channels() == 0) throw ContractError("mask_net: no channels");
  if (x.bins() != cfg.bins) {
    throw ShapeError("mask_net: spectrogram has " + std::to_string(x.bins()) + " bins, network expects " +
                     std::to_string(cfg.bins));
  }
  const Tensor pos = attention::sinusoidal_positions(x.frames(), cfg.d_att);
  std::vector<Tensor> outs;
  outs.reserve(x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    Tensor in = mask_net_input(x, c);
    if (!p.input_stats.empty()) in = dsp::apply_gmvn(in, p.input_stats);
    Tensor h = ops::add(ops::add_row(ops::matmul(in, p.w_in), p.b_in), pos);
    for (const auto& layer : p.layers) h = attention::encoder_layer(h, layer, cfg.window, drop);
    h = attention::apply_layer_norm(h, p.ln_out);
    outs.push_back(ops::sigmoid(ops::add_row(ops::matmul(h, p.w_out), p.b_out)));
  }
  return outs;
}

std::vector<Tensor> channel_mean_masks(const std::vector<Tensor>& outputs, std::size_t bins, std::size_t sources) {
  if (outputs.empty()) throw ContractError("channel_mean_masks: no channels");
  const double inv = 1.0 / static_cast<double>(outputs.size());
  std::vector<Tensor> masks;
  masks.reserve(sources);
  for (std::size_t j = 0; j < sources; ++j) {
    Tensor acc = ops::slice_cols(outputs.front(), j * bins, bins);
    for (std::size_t c = 1; c < outputs.size(); ++c) acc = ops::add(acc, ops::slice_cols(outputs[c], j * bins, bins));
    masks.push_back(outputs.size() == 1 ? acc : ops::scale(acc, inv));
  }
  return masks;
}

MaskSet mask_net(const ComplexSpectrogram& x, const MaskNetParams& p) {
  numerics::NoGradScope no_grad;
  const auto outs = mask_net_outputs(x, p);
  const std::size_t sources = p.config.speakers + 1, f_n = x.bins();
  MaskSet m(x.frames(), f_n, x.channels(), sources);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t t = 0; t < x.frames(); ++t)
      for (std::size_t j = 0; j < sources; ++j)
        for (std::size_t f = 0; f < f_n; ++f) m.at(t, f, c, j) = outs[c].at(t, j * f_n + f);
  return m;
}

ReferenceScorer ReferenceScorer::init(std::size_t bins, std::size_t hidden, std::mt19937_64& rng) {
  return {numerics::xavier_uniform(bins, hidden, rng), numerics::constant_param({hidden}, 0.0),
          numerics::xavier_uniform(hidden, 1, rng)};
}

void ReferenceScorer::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + "w1", w1);
  out.add(prefix + "b1", b1);
  out.add(prefix + "w2", w2);
}

Tensor reference_op(const std::vector<Tensor>& speaker_psds, const ReferenceConfig& cfg, const ReferenceScorer& scorer) {
  if (speaker_psds.empty()) throw ContractError("select_reference: no speaker PSDs");
  const std::size_t c_n = speaker_psds.front().dim(1);
  if (c_n == 0) throw ContractError("select_reference: no channels");
  if (cfg.mode == ReferenceMode::kFixed) {
    if (cfg.channel >= c_n) {
      throw IndexError("select_reference: channel " + std::to_string(cfg.channel) + " out of range for " +
                       std::to_string(c_n) + " channels");
    }
    Tensor u({c_n});
    u[cfg.channel] = 1.0;
    return u;
  }
  if (!scorer.w1.defined()) throw ConfigError("select_reference: attention mode needs a scorer");
  Tensor diag = frontend::psd_diagonal(speaker_psds.front());
  for (std::size_t j = 1; j < speaker_psds.size(); ++j) diag = ops::add(diag, frontend::psd_diagonal(speaker_psds[j]));
  if (speaker_psds.size() > 1) diag = ops::scale(diag, 1.0 / static_cast<double>(speaker_psds.size()));
  const Tensor h = ops::tanh(ops::add_row(ops::matmul(ops::log(diag, 1e-10), scorer.w1), scorer.b1));
  const Tensor scores = ops::matmul(h, scorer.w2);  // [C x 1]
  return ops::reshape(ops::softmax(scores, 0), {c_n});
}

namespace {

Tensor psd_tensor(const PsdSet& psds, std::size_t j) {
  const std::size_t c_n = psds.channels;
  Tensor t({psds.bins, c_n, c_n, 2});
  for (std::size_t f = 0; f < psds.bins; ++f)
    for (std::size_t i = 0; i < c_n * c_n; ++i) {
      t[(f * c_n * c_n + i) * 2] = psds.phi[j][f].data()[i].real();
      t[(f * c_n * c_n + i) * 2 + 1] = psds.phi[j][f].data()[i].imag();
    }
  return t;
}

}  // namespace

std::vector<double> select_reference(const PsdSet& psds, const ReferenceConfig& cfg, const ReferenceScorer* scorer) {
  numerics::NoGradScope no_grad;
  if (psds.sources() < 2) throw ContractError("select_reference: need noise plus at least one speaker");
  std::vector<Tensor> speakers;
  if (cfg.mode == ReferenceMode::kAttention)
    for (std::size_t j = 1; j < psds.sources(); ++j) speakers.push_back(psd_tensor(psds, j));
  else
    speakers.push_back(Tensor({1, psds.channels, psds.channels, 2}));
  static const ReferenceScorer kNone;
  const Tensor u = reference_op(speakers, cfg, scorer ? *scorer : kNone);
  return {u.values().begin(), u.values().end()};
}

FrontendParams FrontendParams::init(const FrontendConfig& cfg, std::mt19937_64& rng) {
  FrontendParams p;
  p.config = cfg;
  p.mask = MaskNetParams::init(cfg.mask, rng);
  if (cfg.reference.mode == ReferenceMode::kAttention)
    p.scorer = ReferenceScorer::init(cfg.mask.bins, cfg.reference.hidden, rng);
  return p;
}

void FrontendParams::collect(ParamList& out, const std::string& prefix) const {
  mask.collect(out, prefix + "mask.");
  if (config.reference.mode == ReferenceMode::kAttention) scorer.collect(out, prefix + "ref.");
}

std::vector<Tensor> beamform_with_masks(const ComplexSpectrogram& x, const std::vector<Tensor>& masks,
                                        const FrontendParams& p) {
  if (masks.size() < 2) throw ContractError("beamform_with_masks: need noise plus at least one speaker mask");
  std::vector<Tensor> phi;
  phi.reserve(masks.size());
  for (const auto& m : masks) phi.push_back(psd_op(m, x));
  const std::vector<Tensor> speakers(phi.begin() + 1, phi.end());
  const Tensor u = reference_op(speakers, p.config.reference, p.scorer);
  std::vector<Tensor> out;
  for (std::size_t j = 1; j < phi.size(); ++j) {
    Tensor n;
    for (std::size_t i = 0; i < phi.size(); ++i) {
      if (i == j) continue;
      n = n.defined() ? ops::add(n, phi[i]) : phi[i];
    }
    out.push_back(beamform_op(mvdr_op(phi[j], n, u), x));
  }
  return out;
}

Tensor beamformed_features(const Tensor& s, const FrontendParams& p) {
  const Tensor fb = dsp::mel_filterbank(p.config.n_mels, (s.dim(1) - 1) * 2);
  Tensor lm = dsp::log_mel(complex_abs(s), fb);
  return p.feature_stats.empty() ? lm : dsp::apply_gmvn(lm, p.feature_stats);
}

std::vector<Tensor> frontend_features(const ComplexSpectrogram& x, const FrontendParams& p, const Dropout& drop) {
  const auto outs = mask_net_outputs(x, p.mask, drop);
  const auto masks = channel_mean_masks(outs, x.bins(), p.config.mask.speakers + 1);
  std::vector<Tensor> feats;
  for (const auto& s : beamform_with_masks(x, masks, p)) feats.push_back(beamformed_features(s, p));
  return feats;
}

}  // namespace msar::frontend

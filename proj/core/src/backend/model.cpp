#include "msar/backend/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "msar/error.hpp"
#include "msar/numerics/graph.hpp"
#include "msar/numerics/ops.hpp"

namespace msar::backend {

namespace ops = msar::numerics;

void BackendConfig::validate() const {
  attention.validate();
  if (n_mels < 4) throw ConfigError("backend: n_mels must be at least 4");
  if (cnn_channels1 == 0 || cnn_channels2 == 0) throw ConfigError("backend: CNN channel counts must be positive");
  if (speakers == 0 || speakers > kMaxPitSpeakers)
    throw ConfigError("backend: speakers must be in 1.." + std::to_string(kMaxPitSpeakers));
  if (rec_layers == 0 || dec_layers == 0) throw ConfigError("backend: recognition and decoder stacks need layers");
  if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw ConfigError("backend: ctc_weight must lie in [0, 1]");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("backend: label_smoothing must lie in [0, 1)");
  vocabulary();
}

namespace {

double embed_scale(std::size_t d) { return std::sqrt(static_cast<double>(d)); }

Tensor conv_kernels(std::size_t cout, std::size_t cin, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(9 * (cin + cout)));
  return numerics::uniform_param({cout, cin, 3, 3}, bound, rng);
}

Tensor run_stack(Tensor h, const std::vector<attention::EncoderLayerParams>& layers,
                 const std::optional<attention::Window>& window, const Dropout& drop) {
  for (const auto& layer : layers) h = attention::encoder_layer(h, layer, window, drop);
  return h;
}

}  // namespace

BackendParams BackendParams::init(const BackendConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  BackendParams p;
  p.config = cfg;
  const std::size_t d = cfg.d_att();
  const std::size_t mel2 = (((cfg.n_mels + 1) / 2) + 1) / 2;
  p.cnn.k1 = conv_kernels(cfg.cnn_channels1, 1, rng);
  p.cnn.b1 = numerics::constant_param({cfg.cnn_channels1}, 0.0);
  p.cnn.k2 = conv_kernels(cfg.cnn_channels2, cfg.cnn_channels1, rng);
  p.cnn.b2 = numerics::constant_param({cfg.cnn_channels2}, 0.0);
  p.cnn.proj_w = numerics::xavier_uniform(cfg.cnn_channels2 * mel2, d, rng);
  p.cnn.proj_b = numerics::constant_param({d}, 0.0);

  const std::size_t branches = cfg.sd_layers == 0 ? 0 : (cfg.share_sd ? 1 : cfg.speakers);
  p.sd.resize(branches);
  for (auto& branch : p.sd)
    for (std::size_t l = 0; l < cfg.sd_layers; ++l) branch.push_back(attention::EncoderLayerParams::init(cfg.attention, rng));
  for (std::size_t l = 0; l < cfg.rec_layers; ++l) p.rec.push_back(attention::EncoderLayerParams::init(cfg.attention, rng));
  p.enc_ln = attention::LayerNormParams::init(d);

  const std::size_t v = cfg.vocabulary().size();
  p.ctc_w = numerics::xavier_uniform(d, v, rng);
  p.ctc_b = numerics::constant_param({v}, 0.0);
  p.embed = numerics::uniform_param({v, d}, std::sqrt(3.0 / static_cast<double>(d)), rng);
  for (std::size_t l = 0; l < cfg.dec_layers; ++l) p.dec.push_back(attention::DecoderLayerParams::init(cfg.attention, rng));
  p.dec_ln = attention::LayerNormParams::init(d);
  p.out_w = numerics::xavier_uniform(d, v, rng);
  p.out_b = numerics::constant_param({v}, 0.0);
  return p;
}

void BackendParams::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + "cnn.k1", cnn.k1);
  out.add(prefix + "cnn.b1", cnn.b1);
  out.add(prefix + "cnn.k2", cnn.k2);
  out.add(prefix + "cnn.b2", cnn.b2);
  out.add(prefix + "cnn.proj_w", cnn.proj_w);
  out.add(prefix + "cnn.proj_b", cnn.proj_b);
  for (std::size_t b = 0; b < sd.size(); ++b)
    for (std::size_t l = 0; l < sd[b].size(); ++l)
      sd[b][l].collect(out, prefix + "sd" + std::to_string(b) + ".layer" + std::to_string(l) + ".");
  for (std::size_t l = 0; l < rec.size(); ++l) rec[l].collect(out, prefix + "rec.layer" + std::to_string(l) + ".");
  enc_ln.collect(out, prefix + "enc_ln.");
  out.add(prefix + "ctc.w", ctc_w);
  out.add(prefix + "ctc.b", ctc_b);
  out.add(prefix + "dec.embed", embed);
  for (std::size_t l = 0; l < dec.size(); ++l) dec[l].collect(out, prefix + "dec.layer" + std::to_string(l) + ".");
  dec_ln.collect(out, prefix + "dec_ln.");
  out.add(prefix + "dec.out_w", out_w);
  out.add(prefix + "dec.out_b", out_b);
}

const std::vector<attention::EncoderLayerParams>& BackendParams::sd_branch(std::size_t j) const {
  if (sd.empty()) throw ContractError("backend: no speaker-differentiating branches configured");
  if (config.share_sd) return sd.front();
  if (j >= sd.size()) throw IndexError("backend: no SD branch " + std::to_string(j));
  return sd[j];
}

std::size_t subsampled_length(std::size_t frames) { return (((frames + 1) / 2) + 1) / 2; }

Tensor cnn_embed(const Tensor& o, const BackendParams& p) {
  const auto& cfg = p.config;
  if (o.rank() != 2 || o.dim(1) != cfg.n_mels) {
    throw ShapeError("cnn_embed: expected [T x " + std::to_string(cfg.n_mels) + "] features, got " +
                     numerics::shape_string(o.shape()));
  }
  if (o.dim(0) < 4) throw TooShortError("cnn_embed: need at least 4 frames, got " + std::to_string(o.dim(0)));
  Tensor h = ops::reshape(o, {1, o.dim(0), o.dim(1)});
  h = ops::relu(ops::conv2d(h, p.cnn.k1, 2, p.cnn.b1));
  h = ops::relu(ops::conv2d(h, p.cnn.k2, 2, p.cnn.b2));
  Tensor x = ops::add_row(ops::matmul(ops::flatten_channels(h), p.cnn.proj_w), p.cnn.proj_b);
  const std::size_t d = cfg.d_att();
  return ops::add(ops::scale(x, embed_scale(d)), attention::sinusoidal_positions(x.dim(0), d));
}

std::vector<Tensor> encode_single_channel(const Tensor& o, const BackendParams& p, const Dropout& drop) {
  const auto& cfg = p.config;
  if (cfg.speakers < 2) throw ContractError("encode_single_channel: needs J >= 2");
  const Tensor h = cnn_embed(o, p);
  const auto& window = cfg.attention.window;
  std::vector<Tensor> out;
  for (std::size_t j = 0; j < cfg.speakers; ++j) {
    Tensor hj = cfg.sd_layers == 0 ? h : run_stack(h, p.sd_branch(j), window, drop);
    out.push_back(attention::apply_layer_norm(run_stack(hj, p.rec, window, drop), p.enc_ln));
  }
  return out;
}

Tensor encode_stream(const Tensor& o, const BackendParams& p, const Dropout& drop) {
  return attention::apply_layer_norm(run_stack(cnn_embed(o, p), p.rec, p.config.attention.window, drop), p.enc_ln);
}

Tensor ctc_log_probs(const Tensor& g, const BackendParams& p) {
  return ops::log_softmax(ops::add_row(ops::matmul(g, p.ctc_w), p.ctc_b));
}

Tensor decoder_log_probs(const Tensor& g, const TokenSequence& prefix, const BackendParams& p, const Dropout& drop) {
  if (prefix.empty()) throw ContractError("decoder: empty prefix");
  const std::size_t d = p.config.d_att();
  Tensor y = ops::add(ops::scale(ops::gather_rows(p.embed, prefix), embed_scale(d)),
                      attention::sinusoidal_positions(prefix.size(), d));
  for (const auto& layer : p.dec) y = attention::decoder_layer(y, g, layer, drop);
  y = attention::apply_layer_norm(y, p.dec_ln);
  return ops::log_softmax(ops::add_row(ops::matmul(y, p.out_w), p.out_b));
}

Tensor attention_ce_loss(const Tensor& g, const TokenSequence& r, const BackendParams& p, const Dropout& drop) {
  if (r.empty()) throw ContractError("attention_ce_loss: empty reference");
  const std::size_t eos = p.config.vocabulary().sos_eos();
  TokenSequence in{eos}, target(r);
  in.insert(in.end(), r.begin(), r.end());
  target.push_back(eos);
  return ops::label_smoothed_nll(decoder_log_probs(g, in, p, drop), target, p.config.label_smoothing);
}

LossBreakdown multi_speaker_loss(const std::vector<Tensor>& encoded, const std::vector<TokenSequence>& refs,
                                 const BackendParams& p, const Dropout& drop) {
  const std::size_t j_n = encoded.size();
  if (refs.size() != j_n) throw ContractError("multi_speaker_loss: stream and reference counts differ");
  const std::size_t blank = p.config.vocabulary().blank();
  LossBreakdown out;
  std::vector<std::vector<Tensor>> ctc(j_n);
  out.ctc_matrix.assign(j_n, std::vector<double>(j_n));
  for (std::size_t j = 0; j < j_n; ++j) {
    const Tensor z = ctc_log_probs(encoded[j], p);
    for (std::size_t k = 0; k < j_n; ++k) {
      ctc[j].push_back(ctc_loss(z, refs[k], blank));
      out.ctc_matrix[j][k] = ctc[j][k].item();
    }
  }
  out.perm = pit_assign(out.ctc_matrix);
  std::vector<Tensor> ctc_sel, att_sel;
  for (std::size_t j = 0; j < j_n; ++j) {
    ctc_sel.push_back(ctc[j][out.perm[j]]);
    att_sel.push_back(attention_ce_loss(encoded[j], refs[out.perm[j]], p, drop));
    out.ctc += ctc_sel.back().item();
    out.att += att_sel.back().item();
  }
  out.joint = joint_loss(ctc_sel, att_sel, p.config.ctc_weight);
  return out;
}

TokenSequence Hypothesis::symbols(std::size_t eos) const {
  TokenSequence s;
  for (auto t : tokens)
    if (t != eos) s.push_back(t);
  return s;
}

Hypothesis decode(const Tensor& g, const BackendParams& p, std::size_t beam, std::size_t max_len) {
  if (beam == 0) throw ConfigError("decode: beam must be positive");
  if (max_len == 0) throw ConfigError("decode: max_len must be positive");
  numerics::NoGradScope no_grad;
  const auto vocab = p.config.vocabulary();
  const std::size_t eos = vocab.sos_eos(), blank = vocab.blank(), v_n = vocab.size();

  struct Partial {
    TokenSequence prefix;  // starts with sos
    double log_prob;
  };
  std::vector<Partial> active{{{eos}, 0.0}};
  std::vector<Hypothesis> finished;
  auto normalised = [](double lp, std::size_t n) { return lp / static_cast<double>(std::max<std::size_t>(n, 1)); };

  for (std::size_t step = 0; step < max_len && !active.empty(); ++step) {
    std::vector<Partial> candidates;
    for (const auto& h : active) {
      const Tensor lp = decoder_log_probs(g, h.prefix, p);
      const std::size_t row = h.prefix.size() - 1;
      std::vector<std::size_t> ids;
      for (std::size_t k = 0; k < v_n; ++k)
        if (k != blank) ids.push_back(k);
      std::partial_sort(ids.begin(), ids.begin() + std::min(beam, ids.size()), ids.end(), [&](std::size_t a, std::size_t b) {
        const double la = lp.at(row, a), lb = lp.at(row, b);
        return la != lb ? la > lb : a < b;
      });
      ids.resize(std::min(beam, ids.size()));
      for (auto k : ids) {
        Partial c{h.prefix, h.log_prob + lp.at(row, k)};
        c.prefix.push_back(k);
        candidates.push_back(std::move(c));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Partial& a, const Partial& b) { return a.log_prob > b.log_prob; });
    active.clear();
    for (auto& c : candidates) {
      if (active.size() >= beam) break;
      if (c.prefix.back() == eos) {
        Hypothesis h;
        h.tokens.assign(c.prefix.begin() + 1, c.prefix.end());
        h.log_prob = c.log_prob;
        h.score = normalised(c.log_prob, h.tokens.size());
        h.complete = true;
        finished.push_back(std::move(h));
        if (beam == 1) break;
      } else {
        active.push_back(std::move(c));
      }
    }
    if (finished.size() >= beam) break;
  }

  if (finished.empty()) {
    Hypothesis h;
    const auto& best = active.front();
    h.tokens.assign(best.prefix.begin() + 1, best.prefix.end());
    h.log_prob = best.log_prob;
    h.score = normalised(best.log_prob, h.tokens.size());
    return h;
  }
  return *std::max_element(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.score < b.score;
  });
}

}  // namespace msar::backend

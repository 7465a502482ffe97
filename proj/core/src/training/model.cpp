#include "msar/training/model.hpp"

#include <algorithm>

#include "../common/json_fields.hpp"
#include "msar/dsp/synth.hpp"
#include "msar/error.hpp"
#include "msar/numerics/graph.hpp"

namespace msar::training {
namespace {

using detail::field;
using detail::json;

json window_json(const std::optional<attention::Window>& w) {
  if (!w) return nullptr;
  return json::array({w->left, w->right});
}

std::optional<attention::Window> parse_window(const json& j, const char* key, std::optional<attention::Window> fallback,
                                              const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (it->is_null()) return std::nullopt;
  if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number_unsigned() || !(*it)[1].is_number_unsigned())
    throw ConfigError(where + "." + key + ": expected [left, right] or null");
  return attention::Window{(*it)[0].get<std::size_t>(), (*it)[1].get<std::size_t>()};
}

const char* reference_name(frontend::ReferenceMode m) {
  return m == frontend::ReferenceMode::kAttention ? "attention" : "fixed";
}

}  // namespace

void ModelConfig::validate() const {
  backend.validate();
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  if (!frontend) {
    if (backend.speakers < 2) throw ConfigError("model: the single-channel model needs at least two speakers");
    if (backend.sd_layers == 0) throw ConfigError("model: the single-channel model needs speaker-differentiating layers");
    return;
  }
  frontend->mask.validate();
  if (frontend->mask.speakers != backend.speakers)
    throw ConfigError("model: frontend and backend speaker counts differ");
  if (frontend->n_mels != backend.n_mels) throw ConfigError("model: frontend and backend n_mels differ");
  if (backend.sd_layers != 0)
    throw ConfigError("model: with a frontend the backend is single-path; set backend.sd_layers to 0");
}

std::string model_config_json(const ModelConfig& cfg) {
  const auto& b = cfg.backend;
  json j;
  j["vocab"] = b.vocab_symbols;
  j["speakers"] = b.speakers;
  j["n_mels"] = b.n_mels;
  j["dropout"] = cfg.dropout;
  j["backend"] = {{"d_att", b.attention.d_att},
                  {"heads", b.attention.heads},
                  {"d_ff", b.attention.d_ff},
                  {"window", window_json(b.attention.window)},
                  {"cnn_channels", json::array({b.cnn_channels1, b.cnn_channels2})},
                  {"sd_layers", b.sd_layers},
                  {"rec_layers", b.rec_layers},
                  {"dec_layers", b.dec_layers},
                  {"share_sd", b.share_sd},
                  {"ctc_weight", b.ctc_weight},
                  {"label_smoothing", b.label_smoothing}};
  if (cfg.frontend) {
    const auto& f = *cfg.frontend;
    j["frontend"] = {{"bins", f.mask.bins},
                     {"d_att", f.mask.d_att},
                     {"heads", f.mask.heads},
                     {"d_ff", f.mask.d_ff},
                     {"layers", f.mask.layers},
                     {"window", window_json(f.mask.window)},
                     {"reference", reference_name(f.reference.mode)},
                     {"reference_channel", f.reference.channel},
                     {"reference_hidden", f.reference.hidden}};
  } else {
    j["frontend"] = nullptr;
  }
  return j.dump();
}

ModelConfig parse_model_config(const std::string& json_text) {
  const json j = detail::parse_json(json_text, "model");
  const std::string where = "model";
  detail::reject_unknown(j, {"vocab", "speakers", "n_mels", "dropout", "backend", "frontend"}, where);
  ModelConfig cfg;
  auto& b = cfg.backend;
  b.vocab_symbols = field(j, "vocab", b.vocab_symbols, where);
  b.speakers = field(j, "speakers", b.speakers, where);
  b.n_mels = field(j, "n_mels", b.n_mels, where);
  cfg.dropout = field(j, "dropout", cfg.dropout, where);

  if (auto it = j.find("backend"); it != j.end() && !it->is_null()) {
    const std::string w = "model.backend";
    detail::reject_unknown(*it, {"d_att", "heads", "d_ff", "window", "cnn_channels", "sd_layers", "rec_layers",
                                 "dec_layers", "share_sd", "ctc_weight", "label_smoothing"},
                           w);
    b.attention.d_att = field(*it, "d_att", b.attention.d_att, w);
    b.attention.heads = field(*it, "heads", b.attention.heads, w);
    b.attention.d_ff = field(*it, "d_ff", b.attention.d_ff, w);
    b.attention.window = parse_window(*it, "window", b.attention.window, w);
    if (auto c = it->find("cnn_channels"); c != it->end()) {
      if (!c->is_array() || c->size() != 2 || !(*c)[0].is_number_unsigned() || !(*c)[1].is_number_unsigned())
        throw ConfigError(w + ".cnn_channels: expected two non-negative integers");
      b.cnn_channels1 = (*c)[0].get<std::size_t>();
      b.cnn_channels2 = (*c)[1].get<std::size_t>();
    }
    b.sd_layers = field(*it, "sd_layers", b.sd_layers, w);
    b.rec_layers = field(*it, "rec_layers", b.rec_layers, w);
    b.dec_layers = field(*it, "dec_layers", b.dec_layers, w);
    b.share_sd = field(*it, "share_sd", b.share_sd, w);
    b.ctc_weight = field(*it, "ctc_weight", b.ctc_weight, w);
    b.label_smoothing = field(*it, "label_smoothing", b.label_smoothing, w);
  }

  if (auto it = j.find("frontend"); it != j.end() && !it->is_null()) {
    const std::string w = "model.frontend";
    detail::reject_unknown(*it, {"bins", "d_att", "heads", "d_ff", "layers", "window", "reference", "reference_channel",
                                 "reference_hidden"},
                           w);
    frontend::FrontendConfig f;
    f.mask.speakers = b.speakers;
    f.n_mels = b.n_mels;
    f.mask.bins = field(*it, "bins", f.mask.bins, w);
    f.mask.d_att = field(*it, "d_att", f.mask.d_att, w);
    f.mask.heads = field(*it, "heads", f.mask.heads, w);
    f.mask.d_ff = field(*it, "d_ff", f.mask.d_ff, w);
    f.mask.layers = field(*it, "layers", f.mask.layers, w);
    auto win = parse_window(*it, "window", f.mask.window, w);
    if (!win) throw ConfigError(w + ".window: the mask net is always time-restricted");
    f.mask.window = *win;
    const std::string mode = field(*it, "reference", std::string("fixed"), w);
    if (mode == "fixed") {
      f.reference.mode = frontend::ReferenceMode::kFixed;
    } else if (mode == "attention") {
      f.reference.mode = frontend::ReferenceMode::kAttention;
    } else {
      throw ConfigError(w + ".reference: expected 'fixed' or 'attention'");
    }
    f.reference.channel = field(*it, "reference_channel", f.reference.channel, w);
    f.reference.hidden = field(*it, "reference_hidden", f.reference.hidden, w);
    cfg.frontend = f;
  }
  cfg.validate();
  return cfg;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_digest(const ModelConfig& cfg) {
  const std::string text = model_config_json(cfg);
  return fnv1a64({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.config = cfg;
  auto rng = dsp::seeded_rng({seed, 0x6d6f64656cULL});
  m.backend = backend::BackendParams::init(cfg.backend, rng);
  if (cfg.frontend) m.frontend = frontend::FrontendParams::init(*cfg.frontend, rng);
  return m;
}

ParamList Model::parameters() const {
  ParamList out;
  backend.collect(out, "backend.");
  if (frontend) frontend->collect(out, "frontend.");
  return out;
}

std::vector<bool> Model::backend_mask() const {
  std::vector<bool> mask;
  const ParamList params = parameters();
  for (const auto& item : params.items()) mask.push_back(item.name.rfind("backend.", 0) == 0);
  return mask;
}

void Model::set_feature_stats(dsp::GlobalStats stats) {
  feature_stats = std::move(stats);
  if (frontend) frontend->feature_stats = feature_stats;
}

std::vector<std::pair<std::string, std::vector<double>*>> Model::buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out{{"feature_stats.mean", &feature_stats.mean},
                                                                {"feature_stats.stddev", &feature_stats.stddev}};
  if (frontend) {
    out.emplace_back("frontend.mask.input_stats.mean", &frontend->mask.input_stats.mean);
    out.emplace_back("frontend.mask.input_stats.stddev", &frontend->mask.input_stats.stddev);
  }
  return out;
}

Tensor raw_features(const dsp::ComplexSpectrogram& s, std::size_t n_mels) {
  const Tensor fb = dsp::mel_filterbank(n_mels, s.params().nfft);
  return dsp::log_mel(dsp::magnitude(s, 0), fb);
}

void fit_statistics(Model& model, std::span<const Utterance> data) {
  if (data.empty()) throw DataError("fit_statistics: empty dataset");
  numerics::NoGradScope no_grad;
  const std::size_t n_mels = model.config.backend.n_mels;
  std::vector<Tensor> feats;
  if (model.frontend) {
    std::vector<Tensor> inputs;
    for (const auto& u : data) {
      if (u.references.empty()) throw DataError("fit_statistics: utterance " + u.id + " has no clean references");
      for (const auto& r : u.references) feats.push_back(raw_features(r, n_mels));
      for (std::size_t c = 0; c < u.mixture.channels(); ++c) inputs.push_back(frontend::mask_net_input(u.mixture, c));
    }
    model.frontend->mask.input_stats = dsp::compute_global_stats(inputs);
  } else {
    for (const auto& u : data) feats.push_back(raw_features(u.mixture, n_mels));
  }
  model.set_feature_stats(dsp::compute_global_stats(feats));
}

void attach_features(const Model& model, std::span<Utterance> data) {
  if (model.frontend) return;
  numerics::NoGradScope no_grad;
  for (auto& u : data) {
    if (u.features.defined()) continue;
    u.features = dsp::apply_gmvn(raw_features(u.mixture, model.config.backend.n_mels), model.feature_stats);
  }
}

std::vector<Utterance> single_speaker_examples(const Model& model, std::span<const Utterance> data) {
  if (model.feature_stats.empty()) throw ContractError("single_speaker_examples: feature statistics not fitted");
  numerics::NoGradScope no_grad;
  std::vector<Utterance> out;
  for (const auto& u : data) {
    if (u.references.size() != u.refs.size())
      throw DataError("single_speaker_examples: utterance " + u.id + " lacks clean references");
    for (std::size_t j = 0; j < u.refs.size(); ++j) {
      Utterance s;
      s.id = u.id + "/" + std::to_string(j);
      s.refs = {u.refs[j]};
      s.features = dsp::apply_gmvn(raw_features(u.references[j], model.config.backend.n_mels), model.feature_stats);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Tensor> encode(const Model& model, const Utterance& utt, const backend::Dropout& drop) {
  if (utt.refs.size() == 1) {
    if (!utt.features.defined()) throw ContractError("encode: single-speaker utterance " + utt.id + " has no features");
    return {backend::encode_stream(utt.features, model.backend, drop)};
  }
  if (model.frontend) {
    std::vector<Tensor> out;
    for (const auto& f : frontend::frontend_features(utt.mixture, *model.frontend, drop))
      out.push_back(backend::encode_stream(f, model.backend, drop));
    return out;
  }
  if (!utt.features.defined()) throw ContractError("encode: features of " + utt.id + " not attached");
  return backend::encode_single_channel(utt.features, model.backend, drop);
}

backend::LossBreakdown utterance_loss(const Model& model, const Utterance& utt, const backend::Dropout& drop) {
  return backend::multi_speaker_loss(encode(model, utt, drop), utt.refs, model.backend, drop);
}

std::vector<backend::Hypothesis> recognize(const Model& model, const Utterance& utt, std::size_t beam,
                                           std::size_t max_len) {
  numerics::NoGradScope no_grad;
  std::vector<backend::Hypothesis> out;
  for (const auto& g : encode(model, utt)) out.push_back(backend::decode(g, model.backend, beam, max_len));
  return out;
}

std::size_t UtteranceScore::total_errors() const {
  std::size_t n = 0;
  for (auto e : errors) n += e;
  return n;
}

std::size_t UtteranceScore::total_ref_tokens() const {
  std::size_t n = 0;
  for (auto e : ref_tokens) n += e;
  return n;
}

UtteranceScore score_hypotheses(const std::vector<TokenSequence>& hyps, const std::vector<TokenSequence>& refs) {
  if (hyps.size() != refs.size()) throw ContractError("score_hypotheses: hypothesis and reference counts differ");
  std::vector<std::vector<double>> cost(hyps.size(), std::vector<double>(refs.size()));
  for (std::size_t j = 0; j < hyps.size(); ++j)
    for (std::size_t k = 0; k < refs.size(); ++k) cost[j][k] = static_cast<double>(backend::edit_distance(refs[k], hyps[j]));
  UtteranceScore s;
  s.perm = backend::pit_assign(cost);
  for (std::size_t j = 0; j < hyps.size(); ++j) {
    s.errors.push_back(static_cast<std::size_t>(cost[j][s.perm[j]]));
    s.ref_tokens.push_back(refs[s.perm[j]].size());
  }
  return s;
}

}  // namespace msar::training

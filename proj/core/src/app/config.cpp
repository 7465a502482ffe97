#include "msar/app/config.hpp"

#include <fstream>
#include <sstream>

#include "../common/json_fields.hpp"
#include "msar/error.hpp"

namespace msar::app {
namespace {

using detail::field;
using detail::json;

const char* wpe_use_name(WpeUse u) {
  switch (u) {
    case WpeUse::kOn:
      return "on";
    case WpeUse::kMulti:
      return "multi";
    default:
      return "off";
  }
}

void parse_data(const json& j, DataConfig& d) {
  const std::string w = "data";
  detail::reject_unknown(j, {"num_utterances", "heldout_utterances", "speakers", "channels", "vocab", "min_tokens",
                             "max_tokens", "room", "t60", "tail_gain", "max_delay", "noise_snr_db", "seed"},
                         w);
  auto& s = d.scenario;
  d.num_utterances = field(j, "num_utterances", d.num_utterances, w);
  d.heldout_utterances = field(j, "heldout_utterances", d.heldout_utterances, w);
  s.speakers = field(j, "speakers", s.speakers, w);
  s.channels = field(j, "channels", s.channels, w);
  s.vocab = field(j, "vocab", s.vocab, w);
  s.min_tokens = field(j, "min_tokens", s.min_tokens, w);
  s.max_tokens = field(j, "max_tokens", s.max_tokens, w);
  const std::string room = field(j, "room", std::string("anechoic"), w);
  if (room == "anechoic") {
    s.mode = dsp::RoomMode::kAnechoic;
  } else if (room == "reverberant") {
    s.mode = dsp::RoomMode::kReverberant;
  } else {
    throw ConfigError("data.room: expected 'anechoic' or 'reverberant'");
  }
  if (auto it = j.find("t60"); it != j.end()) {
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number())
      throw ConfigError("data.t60: expected [min, max] in seconds");
    s.t60_min = (*it)[0].get<double>();
    s.t60_max = (*it)[1].get<double>();
  }
  s.tail_gain = field(j, "tail_gain", s.tail_gain, w);
  s.max_delay = field(j, "max_delay", s.max_delay, w);
  s.noise_snr_db = field(j, "noise_snr_db", s.noise_snr_db, w);
  d.seed = field(j, "seed", d.seed, w);
}

void parse_train(const json& j, ExperimentConfig& c) {
  const std::string w = "train";
  detail::reject_unknown(j, {"epochs", "batch_size", "warmup", "lr_scale", "freeze_backend_epochs", "clip_norm", "seed",
                             "pretrain_epochs", "model_seed"},
                         w);
  auto& t = c.train;
  t.epochs = field(j, "epochs", t.epochs, w);
  t.batch_size = field(j, "batch_size", t.batch_size, w);
  t.warmup = field(j, "warmup", t.warmup, w);
  t.lr_scale = field(j, "lr_scale", t.lr_scale, w);
  t.freeze_backend_epochs = field(j, "freeze_backend_epochs", t.freeze_backend_epochs, w);
  t.clip_norm = field(j, "clip_norm", t.clip_norm, w);
  t.seed = field(j, "seed", t.seed, w);
  c.pretrain_epochs = field(j, "pretrain_epochs", c.pretrain_epochs, w);
  c.model_seed = field(j, "model_seed", c.model_seed, w);
}

void parse_eval(const json& j, training::EvalOptions& e) {
  detail::reject_unknown(j, {"beam", "max_len"}, "eval");
  e.beam = field(j, "beam", e.beam, "eval");
  e.max_len = field(j, "max_len", e.max_len, "eval");
}

void parse_wpe(const json& j, WpeConfig& c) {
  const std::string w = "wpe";
  detail::reject_unknown(j, {"train", "taps", "delay", "iterations"}, w);
  const std::string use = field(j, "train", std::string("off"), w);
  if (use == "off") {
    c.train = WpeUse::kOff;
  } else if (use == "on") {
    c.train = WpeUse::kOn;
  } else if (use == "multi") {
    c.train = WpeUse::kMulti;
  } else {
    throw ConfigError("wpe.train: expected 'off', 'on' or 'multi'");
  }
  c.params.taps = field(j, "taps", c.params.taps, w);
  c.params.delay = field(j, "delay", c.params.delay, w);
  c.params.iterations = field(j, "iterations", c.params.iterations, w);
}

}  // namespace

void ExperimentConfig::validate() const {
  data.scenario.validate();
  if (data.num_utterances == 0) throw ConfigError("data.num_utterances must be positive");
  model.validate();
  train.validate();
  if (model.backend.speakers != data.scenario.speakers)
    throw ConfigError("model.speakers must equal data.speakers");
  if (model.backend.vocab_symbols != data.scenario.vocab) throw ConfigError("model.vocab must equal data.vocab");
  if (model.multichannel() && data.scenario.channels < 2)
    throw UnsupportedError("a model with a frontend needs multi-channel data (data.channels >= 2)");
  if (eval.beam == 0 || eval.max_len == 0) throw ConfigError("eval.beam and eval.max_len must be positive");
  if (wpe.params.taps == 0 || wpe.params.delay == 0 || wpe.params.iterations == 0)
    throw ConfigError("wpe: taps, delay and iterations must be positive");
}

ExperimentConfig parse_experiment(const std::string& json_text) {
  const json j = detail::parse_json(json_text, "config");
  detail::reject_unknown(j, {"data", "model", "train", "eval", "wpe"}, "config");
  ExperimentConfig c;
  if (auto it = j.find("data"); it != j.end()) parse_data(*it, c.data);
  if (auto it = j.find("model"); it != j.end()) {
    json m = *it;
    detail::require_object(m, "model");
    // The model section inherits the data dimensions unless it names them.
    if (!m.contains("speakers")) m["speakers"] = c.data.scenario.speakers;
    if (!m.contains("vocab")) m["vocab"] = c.data.scenario.vocab;
    c.model = training::parse_model_config(m.dump());
  } else {
    json m = {{"speakers", c.data.scenario.speakers}, {"vocab", c.data.scenario.vocab}};
    c.model = training::parse_model_config(m.dump());
  }
  if (auto it = j.find("train"); it != j.end()) parse_train(*it, c);
  if (auto it = j.find("eval"); it != j.end()) parse_eval(*it, c.eval);
  if (auto it = j.find("wpe"); it != j.end()) parse_wpe(*it, c.wpe);
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_experiment(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string experiment_json(const ExperimentConfig& c) {
  const auto& s = c.data.scenario;
  json j;
  j["data"] = {{"num_utterances", c.data.num_utterances},
               {"heldout_utterances", c.data.heldout_utterances},
               {"speakers", s.speakers},
               {"channels", s.channels},
               {"vocab", s.vocab},
               {"min_tokens", s.min_tokens},
               {"max_tokens", s.max_tokens},
               {"room", s.mode == dsp::RoomMode::kReverberant ? "reverberant" : "anechoic"},
               {"t60", json::array({s.t60_min, s.t60_max})},
               {"tail_gain", s.tail_gain},
               {"max_delay", s.max_delay},
               {"noise_snr_db", s.noise_snr_db},
               {"seed", c.data.seed}};
  j["model"] = json::parse(training::model_config_json(c.model));
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"warmup", c.train.warmup},
                {"lr_scale", c.train.lr_scale},
                {"freeze_backend_epochs", c.train.freeze_backend_epochs},
                {"clip_norm", c.train.clip_norm},
                {"seed", c.train.seed},
                {"pretrain_epochs", c.pretrain_epochs},
                {"model_seed", c.model_seed}};
  j["eval"] = {{"beam", c.eval.beam}, {"max_len", c.eval.max_len}};
  j["wpe"] = {{"train", wpe_use_name(c.wpe.train)},
              {"taps", c.wpe.params.taps},
              {"delay", c.wpe.params.delay},
              {"iterations", c.wpe.params.iterations}};
  return j.dump(2);
}

}  // namespace msar::app

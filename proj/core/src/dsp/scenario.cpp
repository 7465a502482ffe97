#include "msar/dsp/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msar/error.hpp"

namespace msar::dsp {

void ScenarioConfig::validate() const {
  if (speakers == 0 || speakers > kMaxSpeakers)
    throw ConfigError("scenario: speakers must be in 1.." + std::to_string(kMaxSpeakers));
  if (channels == 0) throw ConfigError("scenario: channels must be positive");
  if (vocab == 0 || vocab > 10) throw ConfigError("scenario: vocab must be in 1..10");
  if (min_tokens == 0 || max_tokens < min_tokens) throw ConfigError("scenario: invalid token count range");
  if (mode == RoomMode::kReverberant && !(t60_min > 0.0 && t60_max >= t60_min))
    throw ConfigError("scenario: invalid t60 range");
  if (tail_gain < 0.0) throw ConfigError("scenario: tail_gain must be non-negative");
}

SpeakerProfile voice(std::size_t index, std::size_t vocab) {
  struct Band {
    double f0, step, decay;
  };
  static constexpr Band kBands[kMaxSpeakers] = {{200.0, 30.0, 0.6}, {1900.0, 75.0, 0.5}, {700.0, 50.0, 0.55}};
  if (index >= kMaxSpeakers) throw ConfigError("voice: no voice " + std::to_string(index));
  SpeakerProfile p;
  p.f0 = kBands[index].f0;
  p.harmonic_decay = kBands[index].decay;
  for (std::size_t k = 0; k < vocab; ++k) p.offsets.push_back(kBands[index].step * static_cast<double>(k));
  return p;
}

Scenario make_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = seeded_rng({seed, 0x7363656eULL});
  std::uniform_int_distribution<std::size_t> n_tokens(cfg.min_tokens, cfg.max_tokens);
  std::uniform_int_distribution<std::size_t> token(0, cfg.vocab - 1);
  std::uniform_int_distribution<std::size_t> delay(0, cfg.max_delay);
  std::uniform_real_distribution<double> decay(0.7, 1.0);
  std::uniform_real_distribution<double> t60(cfg.t60_min, cfg.t60_max);

  Scenario sc;
  sc.room.mode = cfg.mode;
  sc.room.tail_gain = cfg.tail_gain;
  sc.room.t60 = cfg.mode == RoomMode::kReverberant ? t60(rng) : cfg.t60_min;
  sc.room.seed = rng();
  std::vector<Waveform> dry;
  for (std::size_t j = 0; j < cfg.speakers; ++j) {
    std::vector<std::size_t> toks(n_tokens(rng));
    for (auto& t : toks) t = token(rng);
    SpeakerProfile p = voice(j, cfg.vocab);
    p.seed = rng();
    dry.push_back(synth_utterance(toks, p));
    sc.tokens.push_back(std::move(toks));
    std::vector<std::size_t> d(cfg.channels);
    std::vector<double> g(cfg.channels);
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      d[c] = delay(rng);
      g[c] = decay(rng);
    }
    sc.room.delays.push_back(std::move(d));
    sc.room.decays.push_back(std::move(g));
  }
  std::size_t length = 0;
  for (std::size_t j = 0; j < cfg.speakers; ++j) {
    sc.images.push_back(spatialize(dry[j], sc.room, j));
    length = std::max(length, sc.images.back().length());
  }
  for (auto& im : sc.images) im = im.resized(length);
  sc.mixture = mix(sc.images, cfg.noise_snr_db, rng(), &sc.noise);
  return sc;
}

}  // namespace msar::dsp

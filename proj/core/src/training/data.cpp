#include "msar/training/data.hpp"

#include "msar/dsp/synth.hpp"

namespace msar::training {

TokenSequence to_vocabulary(const std::vector<std::size_t>& tokens) {
  TokenSequence out;
  out.reserve(tokens.size());
  for (auto t : tokens) out.push_back(t + 1);
  return out;
}

Utterance make_utterance(std::string id, const dsp::Scenario& sc, const dsp::StftParams& stft) {
  Utterance u;
  u.id = std::move(id);
  u.mixture = dsp::stft(sc.mixture, stft);
  for (const auto& im : sc.images) u.references.push_back(dsp::stft(im.select_channel(0), stft));
  for (const auto& t : sc.tokens) u.refs.push_back(to_vocabulary(t));
  return u;
}

std::uint64_t utterance_seed(std::uint64_t corpus_seed, std::size_t index) {
  return dsp::seeded_rng({corpus_seed, index, 0x75747472ULL})();
}

std::vector<Utterance> synthetic_corpus(const dsp::ScenarioConfig& cfg, std::size_t count, std::uint64_t seed,
                                        const dsp::StftParams& stft) {
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(make_utterance("utt" + std::to_string(i), dsp::make_scenario(cfg, utterance_seed(seed, i)), stft));
  return out;
}

}  // namespace msar::training

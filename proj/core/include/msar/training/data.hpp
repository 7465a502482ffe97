#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "msar/dsp/scenario.hpp"
#include "msar/training/model.hpp"

namespace msar::training {

// Scenario token k becomes vocabulary id k + 1 (id 0 is the blank).
TokenSequence to_vocabulary(const std::vector<std::size_t>& tokens);

// Mixture STFT, channel-0 STFT of every clean speaker image and references.
Utterance make_utterance(std::string id, const dsp::Scenario& sc, const dsp::StftParams& stft = {});

// Per-utterance scenario seed of item `index` of a corpus.
std::uint64_t utterance_seed(std::uint64_t corpus_seed, std::size_t index);

std::vector<Utterance> synthetic_corpus(const dsp::ScenarioConfig& cfg, std::size_t count, std::uint64_t seed,
                                        const dsp::StftParams& stft = {});

}  // namespace msar::training

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msar/backend/model.hpp"
#include "msar/dsp/features.hpp"
#include "msar/dsp/stft.hpp"
#include "msar/frontend/frontend.hpp"

namespace msar::training {

using backend::TokenSequence;
using numerics::ParamList;
using numerics::Tensor;

// A single-channel model runs the speaker-differentiating encoder on the
// log-mel features of channel 0; a multi-channel model (frontend set) runs
// the mask net and MVDR beamformer, then one single-path encoder per stream.
struct ModelConfig {
  backend::BackendConfig backend;
  std::optional<frontend::FrontendConfig> frontend;
  double dropout = 0.0;

  bool multichannel() const { return frontend.has_value(); }
  void validate() const;
};

// Canonical JSON text (sorted keys) and its parser. The parser fills missing
// keys with defaults and rejects unknown ones.
std::string model_config_json(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& json_text);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t config_digest(const ModelConfig& cfg);

struct Model {
  ModelConfig config;
  backend::BackendParams backend;
  std::optional<frontend::FrontendParams> frontend;
  // GMVN of the backend input features; shared with the frontend output.
  dsp::GlobalStats feature_stats;

  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  // "backend.*" followed by "frontend.*".
  ParamList parameters() const;
  // Parallel to parameters(): true for entries under "backend.".
  std::vector<bool> backend_mask() const;

  void set_feature_stats(dsp::GlobalStats stats);
  // Non-trainable statistics carried by checkpoints, by name.
  std::vector<std::pair<std::string, std::vector<double>*>> buffers();
};

struct Utterance {
  std::string id;
  dsp::ComplexSpectrogram mixture;                 // C channels
  std::vector<dsp::ComplexSpectrogram> references; // clean per-speaker images, channel 0
  std::vector<TokenSequence> refs;                 // one per speaker
  Tensor features;                                 // backend input for single-channel models
};

// Log-mel features of channel 0 without normalisation.
Tensor raw_features(const dsp::ComplexSpectrogram& s, std::size_t n_mels);

// Fits GMVN statistics (and the mask-net input statistics of multi-channel
// models) on `data`. Single-channel models normalise mixture features;
// multi-channel models normalise clean reference features, the target the
// beamformer output is meant to approach.
void fit_statistics(Model& model, std::span<const Utterance> data);

// Fills Utterance::features for single-channel models.
void attach_features(const Model& model, std::span<Utterance> data);

// One single-speaker utterance per clean reference, for backend pretraining.
std::vector<Utterance> single_speaker_examples(const Model& model, std::span<const Utterance> data);

// Encoder streams of one utterance. Utterances with a single reference take
// the single-path encoder on their features.
std::vector<Tensor> encode(const Model& model, const Utterance& utt, const backend::Dropout& drop = {});

backend::LossBreakdown utterance_loss(const Model& model, const Utterance& utt, const backend::Dropout& drop = {});

std::vector<backend::Hypothesis> recognize(const Model& model, const Utterance& utt, std::size_t beam,
                                           std::size_t max_len);

struct UtteranceScore {
  std::vector<std::size_t> perm;       // hypothesis j is scored against refs[perm[j]]
  std::vector<std::size_t> errors;     // per hypothesis
  std::vector<std::size_t> ref_tokens; // per hypothesis, length of its assigned reference
  std::size_t total_errors() const;
  std::size_t total_ref_tokens() const;
};

// Best-permutation edit distances between decoded symbol sequences and
// references.
UtteranceScore score_hypotheses(const std::vector<TokenSequence>& hyps, const std::vector<TokenSequence>& refs);

}  // namespace msar::training

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "msar/attention/attention.hpp"
#include "msar/dsp/features.hpp"
#include "msar/frontend/beamformer.hpp"

namespace msar::frontend {

using attention::Dropout;
using numerics::ParamList;

struct MaskNetConfig {
  std::size_t bins = 257;
  std::size_t speakers = 2;
  std::size_t d_att = 256;
  std::size_t heads = 4;
  std::size_t d_ff = 768;
  std::size_t layers = 3;
  attention::Window window;

  void validate() const;
};

// Monaural masking network shared by all channels. input_stats normalises the
// log-magnitude input and is a fixed buffer, not a trainable parameter.
struct MaskNetParams {
  MaskNetConfig config;
  Tensor w_in, b_in;
  std::vector<attention::EncoderLayerParams> layers;
  attention::LayerNormParams ln_out;
  Tensor w_out, b_out;
  dsp::GlobalStats input_stats;

  static MaskNetParams init(const MaskNetConfig& cfg, std::mt19937_64& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

// log(|x_c| + 1e-10) for channel c, [T x F].
Tensor mask_net_input(const ComplexSpectrogram& x, std::size_t channel);

// Sigmoid mask outputs per channel, each [T x F(J+1)] with column j*F + f.
std::vector<Tensor> mask_net_outputs(const ComplexSpectrogram& x, const MaskNetParams& p, const Dropout& drop = {});

// Channel-averaged masks per source j = 0..J, each [T x F].
std::vector<Tensor> channel_mean_masks(const std::vector<Tensor>& outputs, std::size_t bins, std::size_t sources);

MaskSet mask_net(const ComplexSpectrogram& x, const MaskNetParams& p);

enum class ReferenceMode { kFixed, kAttention };

struct ReferenceConfig {
  ReferenceMode mode = ReferenceMode::kFixed;
  std::size_t channel = 0;
  std::size_t hidden = 32;
};

// Two-layer channel scorer: tanh(log(diag) W1 + b1) w2, softmax over channels.
struct ReferenceScorer {
  Tensor w1, b1, w2;

  static ReferenceScorer init(std::size_t bins, std::size_t hidden, std::mt19937_64& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

// u [C] from the speaker PSDs (sources 1..J, each [F x C x C x 2]).
Tensor reference_op(const std::vector<Tensor>& speaker_psds, const ReferenceConfig& cfg, const ReferenceScorer& scorer);

std::vector<double> select_reference(const PsdSet& psds, const ReferenceConfig& cfg,
                                     const ReferenceScorer* scorer = nullptr);

struct FrontendConfig {
  MaskNetConfig mask;
  ReferenceConfig reference;
  std::size_t n_mels = dsp::kMelBands;
};

struct FrontendParams {
  FrontendConfig config;
  MaskNetParams mask;
  ReferenceScorer scorer;       // unused in fixed mode
  dsp::GlobalStats feature_stats;  // GMVN of the output features; identity when empty

  static FrontendParams init(const FrontendConfig& cfg, std::mt19937_64& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

// Beamformed spectra, [T x F x 2] per speaker, from channel-averaged masks
// (sources 0..J, each [T x F]).
std::vector<Tensor> beamform_with_masks(const ComplexSpectrogram& x, const std::vector<Tensor>& masks,
                                        const FrontendParams& p);

// Log-mel features [T x n_mels] of beamformed spectra.
Tensor beamformed_features(const Tensor& s, const FrontendParams& p);

// mask_net -> PSD -> reference -> MVDR -> beamform -> log-mel GMVN; one
// [T x n_mels] tensor per speaker.
std::vector<Tensor> frontend_features(const ComplexSpectrogram& x, const FrontendParams& p, const Dropout& drop = {});

}  // namespace msar::frontend

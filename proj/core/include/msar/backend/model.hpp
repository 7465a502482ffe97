#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "msar/attention/attention.hpp"
#include "msar/backend/losses.hpp"
#include "msar/backend/vocabulary.hpp"

namespace msar::backend {

using attention::Dropout;
using numerics::ParamList;

struct BackendConfig {
  std::size_t n_mels = 80;
  std::size_t cnn_channels1 = 64;
  std::size_t cnn_channels2 = 128;
  attention::AttentionConfig attention{256, 4, 2048, std::nullopt};
  std::size_t speakers = 2;
  std::size_t sd_layers = 4;   // per speaker branch; 0 for the single-path encoder
  std::size_t rec_layers = 8;
  std::size_t dec_layers = 6;
  bool share_sd = false;
  double ctc_weight = 0.2;  // lambda
  double label_smoothing = 0.1;
  std::size_t vocab_symbols = 10;

  Vocabulary vocabulary() const { return Vocabulary::letters(vocab_symbols); }
  std::size_t d_att() const { return attention.d_att; }
  void validate() const;
};

struct CnnParams {
  Tensor k1, b1, k2, b2, proj_w, proj_b;
};

struct BackendParams {
  BackendConfig config;
  CnnParams cnn;
  std::vector<std::vector<attention::EncoderLayerParams>> sd;  // [branch][layer]
  std::vector<attention::EncoderLayerParams> rec;
  attention::LayerNormParams enc_ln;
  Tensor ctc_w, ctc_b;
  Tensor embed;  // [V x d]
  std::vector<attention::DecoderLayerParams> dec;
  attention::LayerNormParams dec_ln;
  Tensor out_w, out_b;

  static BackendParams init(const BackendConfig& cfg, std::mt19937_64& rng);
  void collect(ParamList& out, const std::string& prefix) const;
  // SD branch used for speaker j.
  const std::vector<attention::EncoderLayerParams>& sd_branch(std::size_t j) const;
};

// Output length of the two stride-2 blocks: ceil(ceil(T/2)/2).
std::size_t subsampled_length(std::size_t frames);

// Two 3x3 stride-2 conv + ReLU blocks over the time x mel plane, a linear
// projection of the flattened maps to d_att, and positional encoding.
Tensor cnn_embed(const Tensor& o, const BackendParams& p);

// Encoder_Mix -> J speaker-differentiating branches -> shared recognition
// stack -> final layer norm.
std::vector<Tensor> encode_single_channel(const Tensor& o, const BackendParams& p, const Dropout& drop = {});

// cnn_embed -> recognition stack -> final layer norm (no separation).
Tensor encode_stream(const Tensor& o, const BackendParams& p, const Dropout& drop = {});

// Frame log-posteriors log_softmax(G W + b), [L x V].
Tensor ctc_log_probs(const Tensor& g, const BackendParams& p);

// Decoder log-probabilities [n x V] for the teacher-forced prefix (starting
// with sos); row i predicts the token after prefix[0..i].
Tensor decoder_log_probs(const Tensor& g, const TokenSequence& prefix, const BackendParams& p,
                         const Dropout& drop = {});

// Teacher-forced label-smoothed cross-entropy against r + [eos], averaged over
// steps.
Tensor attention_ce_loss(const Tensor& g, const TokenSequence& r, const BackendParams& p, const Dropout& drop = {});

struct LossBreakdown {
  Tensor joint;
  double ctc = 0.0;  // summed over streams under the chosen permutation
  double att = 0.0;
  std::vector<std::size_t> perm;  // stream j is scored against refs[perm[j]]
  std::vector<std::vector<double>> ctc_matrix;
};

// PIT on the CTC losses of every (stream, reference) pair, then the joint loss
// under the selected assignment.
LossBreakdown multi_speaker_loss(const std::vector<Tensor>& encoded, const std::vector<TokenSequence>& refs,
                                 const BackendParams& p, const Dropout& drop = {});

struct Hypothesis {
  TokenSequence tokens;  // ends with eos when complete
  double log_prob = 0.0;
  double score = 0.0;    // log_prob / tokens.size()
  bool complete = false;

  TokenSequence symbols(std::size_t eos) const;
};

// Length-normalised beam search; beam = 1 is greedy. The blank is never
// emitted.
Hypothesis decode(const Tensor& g, const BackendParams& p, std::size_t beam = 4, std::size_t max_len = 16);

}  // namespace msar::backend

#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>

#include "msar/numerics/params.hpp"
#include "msar/numerics/tensor.hpp"

namespace msar::attention {

using numerics::Mask;
using numerics::ParamList;
using numerics::Tensor;

// Left/right context of time-restricted attention, in frames.
struct Window {
  std::size_t left = 14;
  std::size_t right = 15;
};

struct AttentionConfig {
  std::size_t d_att = 256;
  std::size_t heads = 4;
  std::size_t d_ff = 2048;
  std::optional<Window> window;  // unrestricted when empty

  std::size_t head_width() const { return d_att / heads; }
  void validate() const;
};

// Row t permits columns max(0, t-l) .. min(T-1, t+r).
Mask band_mask(std::size_t t, std::size_t left, std::size_t right);
// Row n permits columns 0..n.
Mask causal_mask(std::size_t n);

// Row-stochastic attention weights softmax(Q K^T / sqrt(d)) restricted to mask.
Tensor attention_weights(const Tensor& q, const Tensor& k, const Mask* mask = nullptr);
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Mask* mask = nullptr);

// Projections of one multi-head attention block. Head h reads columns
// [h*dk, (h+1)*dk) of the projected queries, keys and values.
struct ProjectionSet {
  std::size_t heads = 1;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  static ProjectionSet init(std::size_t d_att, std::size_t heads, std::mt19937_64& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ProjectionSet& proj,
                            const Mask* mask = nullptr);

// Interleaved sin/cos positional encoding: (t, 2i) = sin(t / 10000^(2i/d)),
// (t, 2i+1) = cos(t / 10000^(2i/d)).
Tensor sinusoidal_positions(std::size_t t, std::size_t d);

struct LayerNormParams {
  Tensor gain, bias;
  static LayerNormParams init(std::size_t d);
  void collect(ParamList& out, const std::string& prefix) const;
};

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p);

struct FeedForward {
  Tensor w1, b1, w2, b2;
  static FeedForward init(std::size_t d, std::size_t d_ff, std::mt19937_64& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

Tensor feed_forward(const Tensor& x, const FeedForward& p);

// Residual dropout applied to each sublayer output; inactive when p == 0 or
// rng is null.
struct Dropout {
  double p = 0.0;
  std::mt19937_64* rng = nullptr;
  Tensor operator()(const Tensor& x) const;
};

struct EncoderLayerParams {
  LayerNormParams ln_attn;
  ProjectionSet attn;
  LayerNormParams ln_ff;
  FeedForward ff;

  static EncoderLayerParams init(const AttentionConfig& cfg, std::mt19937_64& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

// x + MHA(LN(x)) followed by + FF(LN(.)). A window restricts self-attention
// to a band around each frame.
Tensor encoder_layer(const Tensor& x, const EncoderLayerParams& p, const std::optional<Window>& window,
                     const Dropout& drop = {});

struct DecoderLayerParams {
  LayerNormParams ln_self;
  ProjectionSet self_attn;
  LayerNormParams ln_cross;
  ProjectionSet cross_attn;
  LayerNormParams ln_ff;
  FeedForward ff;

  static DecoderLayerParams init(const AttentionConfig& cfg, std::mt19937_64& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

// Causal self-attention, cross-attention over memory, feed-forward; each
// sublayer pre-normalised with a residual connection.
Tensor decoder_layer(const Tensor& y, const Tensor& memory, const DecoderLayerParams& p, const Dropout& drop = {});

}  // namespace msar::attention

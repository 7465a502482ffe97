#include "msar/attention/attention.hpp"

#include <cmath>
#include <vector>

#include "msar/error.hpp"
#include "msar/numerics/ops.hpp"

namespace msar::attention {

namespace ops = msar::numerics;

void AttentionConfig::validate() const {
  if (d_att == 0 || heads == 0 || d_ff == 0) throw ConfigError("attention: widths must be positive");
  if (d_att % heads != 0) {
    throw ConfigError("attention: d_att " + std::to_string(d_att) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
}

Mask band_mask(std::size_t t, std::size_t left, std::size_t right) {
  Mask m(t, t, false);
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t lo = i >= left ? i - left : 0;
    const std::size_t hi = std::min(t - 1, i + right);
    for (std::size_t j = lo; j <= hi; ++j) m.set(i, j, true);
  }
  return m;
}

Mask causal_mask(std::size_t n) {
  Mask m(n, n, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
  return m;
}

Tensor attention_weights(const Tensor& q, const Tensor& k, const Mask* mask) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
    throw ShapeError("attention: query " + numerics::shape_string(q.shape()) + " and key " +
                     numerics::shape_string(k.shape()) + " widths differ");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor scores = ops::scale(ops::matmul_nt(q, k), scale);
  if (mask == nullptr) return ops::softmax(scores, 1);
  if (mask->rows != q.dim(0) || mask->cols != k.dim(0)) throw ShapeError("attention: mask shape mismatch");
  return ops::masked_softmax(scores, *mask);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Mask* mask) {
  if (v.rank() != 2 || v.dim(0) != k.dim(0)) throw ShapeError("attention: keys and values disagree in length");
  return ops::matmul(attention_weights(q, k, mask), v);
}

ProjectionSet ProjectionSet::init(std::size_t d_att, std::size_t heads, std::mt19937_64& rng) {
  ProjectionSet p;
  p.heads = heads;
  p.wq = numerics::xavier_uniform(d_att, d_att, rng);
  p.wk = numerics::xavier_uniform(d_att, d_att, rng);
  p.wv = numerics::xavier_uniform(d_att, d_att, rng);
  p.wo = numerics::xavier_uniform(d_att, d_att, rng);
  p.bq = numerics::constant_param({d_att}, 0.0);
  p.bk = numerics::constant_param({d_att}, 0.0);
  p.bv = numerics::constant_param({d_att}, 0.0);
  p.bo = numerics::constant_param({d_att}, 0.0);
  return p;
}

void ProjectionSet::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + "wq", wq);
  out.add(prefix + "bq", bq);
  out.add(prefix + "wk", wk);
  out.add(prefix + "bk", bk);
  out.add(prefix + "wv", wv);
  out.add(prefix + "bv", bv);
  out.add(prefix + "wo", wo);
  out.add(prefix + "bo", bo);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ProjectionSet& proj,
                            const Mask* mask) {
  const std::size_t d = proj.wq.dim(0);
  for (const Tensor* x : {&q, &k, &v}) {
    if (x->rank() != 2 || x->dim(1) != d) {
      throw ShapeError("multi_head_attention: input " + numerics::shape_string(x->shape()) +
                       " does not match projection width " + std::to_string(d));
    }
  }
  if (proj.heads == 0 || proj.wq.dim(1) % proj.heads != 0) throw ShapeError("multi_head_attention: bad head split");
  const std::size_t dk = proj.wq.dim(1) / proj.heads;
  Tensor qp = ops::add_row(ops::matmul(q, proj.wq), proj.bq);
  Tensor kp = ops::add_row(ops::matmul(k, proj.wk), proj.bk);
  Tensor vp = ops::add_row(ops::matmul(v, proj.wv), proj.bv);
  std::vector<Tensor> heads;
  heads.reserve(proj.heads);
  for (std::size_t h = 0; h < proj.heads; ++h) {
    heads.push_back(scaled_dot_attention(ops::slice_cols(qp, h * dk, dk), ops::slice_cols(kp, h * dk, dk),
                                         ops::slice_cols(vp, h * dk, dk), mask));
  }
  Tensor cat = proj.heads == 1 ? heads.front() : ops::concat_cols(heads);
  return ops::add_row(ops::matmul(cat, proj.wo), proj.bo);
}

Tensor sinusoidal_positions(std::size_t t, std::size_t d) {
  if (d % 2 != 0) throw ConfigError("sinusoidal_positions: width must be even");
  Tensor pe({t, d});
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double inv = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    for (std::size_t pos = 0; pos < t; ++pos) {
      pe.at(pos, 2 * i) = std::sin(static_cast<double>(pos) * inv);
      pe.at(pos, 2 * i + 1) = std::cos(static_cast<double>(pos) * inv);
    }
  }
  return pe;
}

LayerNormParams LayerNormParams::init(std::size_t d) {
  return {numerics::constant_param({d}, 1.0), numerics::constant_param({d}, 0.0)};
}

void LayerNormParams::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + "gain", gain);
  out.add(prefix + "bias", bias);
}

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p) { return ops::layer_norm(x, p.gain, p.bias, 1e-12); }

FeedForward FeedForward::init(std::size_t d, std::size_t d_ff, std::mt19937_64& rng) {
  return {numerics::xavier_uniform(d, d_ff, rng), numerics::constant_param({d_ff}, 0.0),
          numerics::xavier_uniform(d_ff, d, rng), numerics::constant_param({d}, 0.0)};
}

void FeedForward::collect(ParamList& out, const std::string& prefix) const {
  out.add(prefix + "w1", w1);
  out.add(prefix + "b1", b1);
  out.add(prefix + "w2", w2);
  out.add(prefix + "b2", b2);
}

Tensor feed_forward(const Tensor& x, const FeedForward& p) {
  Tensor h = ops::relu(ops::add_row(ops::matmul(x, p.w1), p.b1));
  return ops::add_row(ops::matmul(h, p.w2), p.b2);
}

Tensor Dropout::operator()(const Tensor& x) const {
  if (p <= 0.0 || rng == nullptr) return x;
  return ops::dropout(x, p, *rng);
}

EncoderLayerParams EncoderLayerParams::init(const AttentionConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  EncoderLayerParams p;
  p.ln_attn = LayerNormParams::init(cfg.d_att);
  p.attn = ProjectionSet::init(cfg.d_att, cfg.heads, rng);
  p.ln_ff = LayerNormParams::init(cfg.d_att);
  p.ff = FeedForward::init(cfg.d_att, cfg.d_ff, rng);
  return p;
}

void EncoderLayerParams::collect(ParamList& out, const std::string& prefix) const {
  ln_attn.collect(out, prefix + "ln_attn.");
  attn.collect(out, prefix + "attn.");
  ln_ff.collect(out, prefix + "ln_ff.");
  ff.collect(out, prefix + "ff.");
}

Tensor encoder_layer(const Tensor& x, const EncoderLayerParams& p, const std::optional<Window>& window,
                     const Dropout& drop) {
  std::optional<Mask> mask;
  if (window) mask = band_mask(x.dim(0), window->left, window->right);
  Tensor n1 = apply_layer_norm(x, p.ln_attn);
  Tensor h = ops::add(x, drop(multi_head_attention(n1, n1, n1, p.attn, mask ? &*mask : nullptr)));
  return ops::add(h, drop(feed_forward(apply_layer_norm(h, p.ln_ff), p.ff)));
}

DecoderLayerParams DecoderLayerParams::init(const AttentionConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  DecoderLayerParams p;
  p.ln_self = LayerNormParams::init(cfg.d_att);
  p.self_attn = ProjectionSet::init(cfg.d_att, cfg.heads, rng);
  p.ln_cross = LayerNormParams::init(cfg.d_att);
  p.cross_attn = ProjectionSet::init(cfg.d_att, cfg.heads, rng);
  p.ln_ff = LayerNormParams::init(cfg.d_att);
  p.ff = FeedForward::init(cfg.d_att, cfg.d_ff, rng);
  return p;
}

void DecoderLayerParams::collect(ParamList& out, const std::string& prefix) const {
  ln_self.collect(out, prefix + "ln_self.");
  self_attn.collect(out, prefix + "self_attn.");
  ln_cross.collect(out, prefix + "ln_cross.");
  cross_attn.collect(out, prefix + "cross_attn.");
  ln_ff.collect(out, prefix + "ln_ff.");
  ff.collect(out, prefix + "ff.");
}

Tensor decoder_layer(const Tensor& y, const Tensor& memory, const DecoderLayerParams& p, const Dropout& drop) {
  const Mask causal = causal_mask(y.dim(0));
  Tensor n1 = apply_layer_norm(y, p.ln_self);
  Tensor h = ops::add(y, drop(multi_head_attention(n1, n1, n1, p.self_attn, &causal)));
  Tensor n2 = apply_layer_norm(h, p.ln_cross);
  h = ops::add(h, drop(multi_head_attention(n2, memory, memory, p.cross_attn)));
  return ops::add(h, drop(feed_forward(apply_layer_norm(h, p.ln_ff), p.ff)));
}

}  // namespace msar::attention

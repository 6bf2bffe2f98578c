#pragma once

#include <cmath>
#include <vector>

#include "projsdpa/attention/multi_head.hpp"
#include "projsdpa/model/config.hpp"
#include "projsdpa/model/params.hpp"

namespace projsdpa::model {

// ---------------------------------------------------------------------------
// Positional encoding
// ---------------------------------------------------------------------------

/// Sinusoidal table: entry (pos, 2i) = sin(pos / 10000^(2i/d)) and
/// (pos, 2i+1) = cos of the same angle.
inline Tensor positional_encoding(std::size_t max_len, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0)
    throw ConfigError("positional_encoding: d_model must be even and positive");
  Tensor pe = Tensor::matrix(max_len, d_model);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Sublayer pieces
// ---------------------------------------------------------------------------

struct FeedForwardCache {
  Tensor input;
  Tensor hidden;  // post-ReLU
};

inline Tensor feed_forward(const Tensor& x, const FeedForwardParams& p,
                           FeedForwardCache* cache) {
  Tensor h = matmul(x, p.w1.value);
  add_row_bias(h, p.b1.value);
  h = relu(h);
  Tensor y = matmul(h, p.w2.value);
  add_row_bias(y, p.b2.value);
  if (cache) {
    cache->input = x;
    cache->hidden = std::move(h);
  }
  return y;
}

inline Tensor feed_forward_backward(const FeedForwardCache& cache,
                                    FeedForwardParams& p, const Tensor& dy) {
  axpy(p.w2.grad, matmul_tn(cache.hidden, dy));
  axpy(p.b2.grad, column_sums(dy));
  Tensor dh = relu_backward(cache.hidden, matmul_nt(dy, p.w2.value));
  axpy(p.w1.grad, matmul_tn(cache.input, dh));
  axpy(p.b1.grad, column_sums(dh));
  return matmul_nt(dh, p.w1.value);
}

inline Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p,
                               double eps, LayerNormCache* cache) {
  auto r = layer_norm_rows_with_cache(x, p.gain.value, p.bias.value, eps);
  if (cache) *cache = std::move(r.cache);
  return std::move(r.y);
}

inline Tensor layer_norm_backward(const LayerNormCache& cache,
                                  LayerNormParams& p, const Tensor& dy) {
  auto g = layer_norm_rows_backward(cache, p.gain.value, dy);
  axpy(p.gain.grad, g.dgain);
  axpy(p.bias.grad, g.dbias);
  return std::move(g.dx);
}

// ---------------------------------------------------------------------------
// Encoder block: x + SelfAttn(LN(x)), then + FFN(LN(.))
// ---------------------------------------------------------------------------

struct EncoderBlockCache {
  LayerNormCache ln_attn;
  attention::MultiHeadCache self_attn;
  LayerNormCache ln_ff;
  FeedForwardCache ff;
};

struct EncoderBlockResult {
  Tensor y;
  std::vector<attention::AttentionTrace> traces;
};

inline EncoderBlockResult encoder_block(const Tensor& x,
                                        const EncoderLayerParams& p,
                                        const ModelConfig& cfg,
                                        EncoderBlockCache* cache = nullptr) {
  const Tensor a_in = apply_layer_norm(x, p.ln_attn, cfg.layer_norm_eps,
                                       cache ? &cache->ln_attn : nullptr);
  auto attn = attention::multi_head_attention(a_in, a_in, p.self_attn,
                                              cfg.encoder_self_attention());
  Tensor h = add(x, attn.y);
  const Tensor f_in = apply_layer_norm(h, p.ln_ff, cfg.layer_norm_eps,
                                       cache ? &cache->ln_ff : nullptr);
  axpy(h, feed_forward(f_in, p.ff, cache ? &cache->ff : nullptr));
  if (cache) cache->self_attn = std::move(attn.cache);
  return {std::move(h), std::move(attn.traces)};
}

inline Tensor encoder_block_backward(const EncoderBlockCache& cache,
                                     EncoderLayerParams& p, const Tensor& dy) {
  // dy flows to h through the residual and through FFN(LN(h)).
  Tensor dh = dy;
  axpy(dh, layer_norm_backward(cache.ln_ff, p.ln_ff,
                               feed_forward_backward(cache.ff, p.ff, dy)));
  auto ga = attention::multi_head_attention_backward(cache.self_attn,
                                                     p.self_attn, dh);
  axpy(ga.dx_q, ga.dx_kv);
  Tensor dx = dh;
  axpy(dx, layer_norm_backward(cache.ln_attn, p.ln_attn, ga.dx_q));
  return dx;
}

// ---------------------------------------------------------------------------
// Decoder block: causal self-attention, cross-attention, FFN; pre-norm
// residuals throughout.
// ---------------------------------------------------------------------------

struct DecoderBlockCache {
  LayerNormCache ln_self;
  attention::MultiHeadCache self_attn;
  LayerNormCache ln_cross;
  attention::MultiHeadCache cross_attn;
  LayerNormCache ln_ff;
  FeedForwardCache ff;
};

struct DecoderBlockResult {
  Tensor y;
  std::vector<attention::AttentionTrace> self_traces;
  std::vector<attention::AttentionTrace> cross_traces;
};

inline DecoderBlockResult decoder_block(const Tensor& y, const Tensor& memory,
                                        const DecoderLayerParams& p,
                                        const ModelConfig& cfg,
                                        DecoderBlockCache* cache = nullptr) {
  const Tensor s_in = apply_layer_norm(y, p.ln_self, cfg.layer_norm_eps,
                                       cache ? &cache->ln_self : nullptr);
  auto self = attention::multi_head_attention(s_in, s_in, p.self_attn,
                                              cfg.decoder_self_attention());
  Tensor h1 = add(y, self.y);
  const Tensor c_in = apply_layer_norm(h1, p.ln_cross, cfg.layer_norm_eps,
                                       cache ? &cache->ln_cross : nullptr);
  auto cross = attention::multi_head_attention(c_in, memory, p.cross_attn,
                                               cfg.cross_attention());
  Tensor h2 = add(h1, cross.y);
  const Tensor f_in = apply_layer_norm(h2, p.ln_ff, cfg.layer_norm_eps,
                                       cache ? &cache->ln_ff : nullptr);
  axpy(h2, feed_forward(f_in, p.ff, cache ? &cache->ff : nullptr));
  if (cache) {
    cache->self_attn = std::move(self.cache);
    cache->cross_attn = std::move(cross.cache);
  }
  return {std::move(h2), std::move(self.traces), std::move(cross.traces)};
}

struct DecoderBlockGrads {
  Tensor dy;
  Tensor dmemory;
};

inline DecoderBlockGrads decoder_block_backward(const DecoderBlockCache& cache,
                                                DecoderLayerParams& p,
                                                const Tensor& dout) {
  Tensor dh2 = dout;
  axpy(dh2, layer_norm_backward(cache.ln_ff, p.ln_ff,
                                feed_forward_backward(cache.ff, p.ff, dout)));
  auto gc = attention::multi_head_attention_backward(cache.cross_attn,
                                                     p.cross_attn, dh2);
  Tensor dh1 = dh2;
  axpy(dh1, layer_norm_backward(cache.ln_cross, p.ln_cross, gc.dx_q));
  auto gs = attention::multi_head_attention_backward(cache.self_attn,
                                                     p.self_attn, dh1);
  axpy(gs.dx_q, gs.dx_kv);
  Tensor dy = dh1;
  axpy(dy, layer_norm_backward(cache.ln_self, p.ln_self, gs.dx_q));
  return {std::move(dy), std::move(gc.dx_kv)};
}

}  // namespace projsdpa::model

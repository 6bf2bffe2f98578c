#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "projsdpa/attention/multi_head.hpp"
#include "projsdpa/model/config.hpp"
#include "projsdpa/numerics/rng.hpp"

namespace projsdpa::model {

struct LayerNormParams {
  Parameter gain;
  Parameter bias;

  static LayerNormParams init(std::size_t n) {
    return {Parameter(Tensor({n}, 1.0)), Parameter(Tensor({n}, 0.0))};
  }

  template <typename Fn>
  void for_each(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".gain", gain);
    fn(prefix + ".bias", bias);
  }
};

struct FeedForwardParams {
  Parameter w1, b1, w2, b2;

  static FeedForwardParams init(std::size_t d_model, std::size_t ff_dim,
                                Rng& rng) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(d_model + ff_dim));
    FeedForwardParams p;
    p.w1 = Parameter(rng_uniform(rng, {d_model, ff_dim}, -limit, limit));
    p.b1 = Parameter(Tensor({ff_dim}));
    p.w2 = Parameter(rng_uniform(rng, {ff_dim, d_model}, -limit, limit));
    p.b2 = Parameter(Tensor({d_model}));
    return p;
  }

  template <typename Fn>
  void for_each(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
  }
};

struct EncoderLayerParams {
  LayerNormParams ln_attn;
  attention::AttentionParams self_attn;
  LayerNormParams ln_ff;
  FeedForwardParams ff;

  template <typename Fn>
  void for_each(const std::string& prefix, Fn&& fn) {
    ln_attn.for_each(prefix + ".ln_attn", fn);
    self_attn.for_each(prefix + ".self_attn", fn);
    ln_ff.for_each(prefix + ".ln_ff", fn);
    ff.for_each(prefix + ".ff", fn);
  }
};

struct DecoderLayerParams {
  LayerNormParams ln_self;
  attention::AttentionParams self_attn;
  LayerNormParams ln_cross;
  attention::AttentionParams cross_attn;
  LayerNormParams ln_ff;
  FeedForwardParams ff;

  template <typename Fn>
  void for_each(const std::string& prefix, Fn&& fn) {
    ln_self.for_each(prefix + ".ln_self", fn);
    self_attn.for_each(prefix + ".self_attn", fn);
    ln_cross.for_each(prefix + ".ln_cross", fn);
    cross_attn.for_each(prefix + ".cross_attn", fn);
    ln_ff.for_each(prefix + ".ln_ff", fn);
    ff.for_each(prefix + ".ff", fn);
  }
};

/// Every learned tensor of the encoder-decoder model.
struct TransformerParams {
  Parameter src_embed;  // src_vocab x d_model
  Parameter tgt_embed;  // tgt_vocab x d_model
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  LayerNormParams encoder_norm;
  LayerNormParams decoder_norm;
  Parameter out_w;  // d_model x tgt_vocab
  Parameter out_b;  // tgt_vocab

  /// Scaled-uniform initialization, fully determined by config.seed.
  static TransformerParams init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t d = cfg.d_model;
    auto uniform = [&](std::size_t fan_in, std::size_t fan_out) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      return Parameter(rng_uniform(rng, {fan_in, fan_out}, -limit, limit));
    };
    TransformerParams p;
    p.src_embed = uniform(cfg.src_vocab, d);
    p.tgt_embed = uniform(cfg.tgt_vocab, d);
    for (std::size_t l = 0; l < cfg.num_encoder_layers; ++l) {
      EncoderLayerParams e;
      e.ln_attn = LayerNormParams::init(d);
      e.self_attn = attention::AttentionParams::init(d, cfg.encoder_self_attention(), rng);
      e.ln_ff = LayerNormParams::init(d);
      e.ff = FeedForwardParams::init(d, cfg.ff_dim, rng);
      p.encoder.push_back(std::move(e));
    }
    for (std::size_t l = 0; l < cfg.num_decoder_layers; ++l) {
      DecoderLayerParams dl;
      dl.ln_self = LayerNormParams::init(d);
      dl.self_attn = attention::AttentionParams::init(d, cfg.decoder_self_attention(), rng);
      dl.ln_cross = LayerNormParams::init(d);
      dl.cross_attn = attention::AttentionParams::init(d, cfg.cross_attention(), rng);
      dl.ln_ff = LayerNormParams::init(d);
      dl.ff = FeedForwardParams::init(d, cfg.ff_dim, rng);
      p.decoder.push_back(std::move(dl));
    }
    p.encoder_norm = LayerNormParams::init(d);
    p.decoder_norm = LayerNormParams::init(d);
    p.out_w = uniform(d, cfg.tgt_vocab);
    p.out_b = Parameter(Tensor({cfg.tgt_vocab}));
    return p;
  }

  /// Visits (name, Parameter&) in a fixed order; the order defines the
  /// checkpoint layout.
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(std::string("src_embed"), src_embed);
    fn(std::string("tgt_embed"), tgt_embed);
    for (std::size_t l = 0; l < encoder.size(); ++l)
      encoder[l].for_each("encoder." + std::to_string(l), fn);
    for (std::size_t l = 0; l < decoder.size(); ++l)
      decoder[l].for_each("decoder." + std::to_string(l), fn);
    encoder_norm.for_each("encoder_norm", fn);
    decoder_norm.for_each("decoder_norm", fn);
    fn(std::string("out_w"), out_w);
    fn(std::string("out_b"), out_b);
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<TransformerParams*>(this)->for_each(
        [&](const std::string& name, Parameter& p) {
          fn(name, static_cast<const Parameter&>(p));
        });
  }

  void zero_grads() {
    for_each([](const std::string&, Parameter& p) { p.zero_grad(); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Parameter& p) { n += p.value.size(); });
    return n;
  }
};

/// Closed-form parameter count. With d = d_model, f = ff_dim, V_s/V_t the
/// vocabularies and a = 4d^2 (standard: W_q, W_k, W_v, W_out) or 3d^2
/// (projection: no W_v):
///   embeddings      d (V_s + V_t)
///   encoder layer   a + 2*2d + (2df + f + d)
///   decoder layer   2a + 3*2d + (2df + f + d)
///   final norms     2*2d
///   output map      d V_t + V_t
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.ff_dim;
  const std::size_t a =
      (c.variant == attention::Variant::Standard ? 4 : 3) * d * d;
  const std::size_t ffn = 2 * d * f + f + d;
  return d * (c.src_vocab + c.tgt_vocab) +
         c.num_encoder_layers * (a + 4 * d + ffn) +
         c.num_decoder_layers * (2 * a + 6 * d + ffn) + 4 * d +
         d * c.tgt_vocab + c.tgt_vocab;
}

}  // namespace projsdpa::model

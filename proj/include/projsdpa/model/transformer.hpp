#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "projsdpa/model/blocks.hpp"

namespace projsdpa::model {

using TokenSpan = std::span<const TokenId>;

namespace detail {

inline void check_ids(TokenSpan ids, std::size_t vocab, std::size_t max_len,
                      const char* what) {
  if (ids.empty()) throw DataError(std::string(what) + ": empty sequence");
  if (ids.size() > max_len) {
    throw DataError(std::string(what) + ": length " + std::to_string(ids.size()) +
                    " exceeds max_len " + std::to_string(max_len));
  }
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DataError(std::string(what) + ": token id " + std::to_string(id) +
                      " outside vocabulary of size " + std::to_string(vocab));
    }
  }
}

inline Tensor embed(TokenSpan ids, const Parameter& table, const Tensor& pe) {
  const std::size_t d = table.value.cols();
  Tensor x = Tensor::matrix(ids.size(), d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    auto e = table.value.row(static_cast<std::size_t>(ids[t]));
    auto p = pe.row(t);
    auto r = x.row(t);
    for (std::size_t m = 0; m < d; ++m) r[m] = e[m] + p[m];
  }
  return x;
}

inline void embed_backward(TokenSpan ids, Parameter& table, const Tensor& dx) {
  for (std::size_t t = 0; t < ids.size(); ++t) {
    auto g = table.grad.row(static_cast<std::size_t>(ids[t]));
    auto d = dx.row(t);
    for (std::size_t m = 0; m < g.size(); ++m) g[m] += d[m];
  }
}

}  // namespace detail

/// Saved state of one forward pass, consumed by backward().
struct ForwardCache {
  std::vector<TokenId> src_ids;
  std::vector<TokenId> tgt_ids;
  std::vector<EncoderBlockCache> encoder;
  LayerNormCache encoder_norm;
  std::vector<DecoderBlockCache> decoder;
  LayerNormCache decoder_norm;
  Tensor decoder_out;  // final normalized decoder states
};

/// Encoder-decoder transformer. Holds the configuration and the fixed
/// positional table; parameters are passed explicitly so callers control
/// ownership and gradient accumulation.
class Transformer {
 public:
  explicit Transformer(ModelConfig cfg)
      : cfg_(std::move(cfg)),
        pe_((cfg_.validate(), positional_encoding(cfg_.max_len, cfg_.d_model))) {}

  const ModelConfig& config() const { return cfg_; }

  /// Encoder output after the final layer norm.
  Tensor encode(TokenSpan src_ids, const TransformerParams& p,
                ForwardCache* cache = nullptr) const {
    detail::check_ids(src_ids, cfg_.src_vocab, cfg_.max_len, "source");
    Tensor x = detail::embed(src_ids, p.src_embed, pe_);
    if (cache) cache->encoder.resize(p.encoder.size());
    for (std::size_t l = 0; l < p.encoder.size(); ++l)
      x = encoder_block(x, p.encoder[l], cfg_, cache ? &cache->encoder[l] : nullptr).y;
    return apply_layer_norm(x, p.encoder_norm, cfg_.layer_norm_eps,
                            cache ? &cache->encoder_norm : nullptr);
  }

  /// Pre-softmax logits [T x tgt_vocab] given encoder memory.
  Tensor decode(TokenSpan tgt_ids, const Tensor& memory,
                const TransformerParams& p, ForwardCache* cache = nullptr) const {
    detail::check_ids(tgt_ids, cfg_.tgt_vocab, cfg_.max_len, "target");
    Tensor y = detail::embed(tgt_ids, p.tgt_embed, pe_);
    if (cache) cache->decoder.resize(p.decoder.size());
    for (std::size_t l = 0; l < p.decoder.size(); ++l)
      y = decoder_block(y, memory, p.decoder[l], cfg_,
                        cache ? &cache->decoder[l] : nullptr).y;
    Tensor out = apply_layer_norm(y, p.decoder_norm, cfg_.layer_norm_eps,
                                  cache ? &cache->decoder_norm : nullptr);
    Tensor logits = matmul(out, p.out_w.value);
    add_row_bias(logits, p.out_b.value);
    if (cache) cache->decoder_out = std::move(out);
    return logits;
  }

  /// embed + positions -> encoder stack -> decoder stack -> output map.
  Tensor forward(TokenSpan src_ids, TokenSpan tgt_ids,
                 const TransformerParams& p, ForwardCache* cache = nullptr) const {
    if (cache) {
      cache->src_ids.assign(src_ids.begin(), src_ids.end());
      cache->tgt_ids.assign(tgt_ids.begin(), tgt_ids.end());
    }
    const Tensor memory = encode(src_ids, p, cache);
    return decode(tgt_ids, memory, p, cache);
  }

  /// Accumulates d(loss)/d(param) into every Parameter::grad given
  /// d(loss)/d(logits).
  void backward(const ForwardCache& cache, TransformerParams& p,
                const Tensor& dlogits) const {
    if (cache.decoder.size() != p.decoder.size() ||
        cache.encoder.size() != p.encoder.size() || cache.decoder_out.empty()) {
      throw std::logic_error("Transformer::backward: missing saved state");
    }
    axpy(p.out_w.grad, matmul_tn(cache.decoder_out, dlogits));
    axpy(p.out_b.grad, column_sums(dlogits));
    Tensor dy = layer_norm_backward(cache.decoder_norm, p.decoder_norm,
                                    matmul_nt(dlogits, p.out_w.value));
    Tensor dmemory;
    for (std::size_t l = p.decoder.size(); l-- > 0;) {
      auto g = decoder_block_backward(cache.decoder[l], p.decoder[l], dy);
      dy = std::move(g.dy);
      if (dmemory.empty()) {
        dmemory = std::move(g.dmemory);
      } else {
        axpy(dmemory, g.dmemory);
      }
    }
    detail::embed_backward(cache.tgt_ids, p.tgt_embed, dy);
    if (dmemory.empty()) return;  // no decoder layers: encoder is unused
    Tensor dx = layer_norm_backward(cache.encoder_norm, p.encoder_norm, dmemory);
    for (std::size_t l = p.encoder.size(); l-- > 0;)
      dx = encoder_block_backward(cache.encoder[l], p.encoder[l], dx);
    detail::embed_backward(cache.src_ids, p.src_embed, dx);
  }

  /// Greedy decoding from the start token. Stops on the end token, after
  /// max_steps generated tokens, or when the decoder input would exceed
  /// max_len. The returned ids exclude start and end markers.
  std::vector<TokenId> greedy_decode(TokenSpan src_ids, const TransformerParams& p,
                                     std::size_t max_steps) const {
    const Tensor memory = encode(src_ids, p);
    std::vector<TokenId> tgt{kStartId};
    std::vector<TokenId> out;
    while (out.size() < max_steps) {
      const Tensor logits = decode(tgt, memory, p);
      auto last = logits.row(logits.rows() - 1);
      const auto next = static_cast<TokenId>(
          std::max_element(last.begin(), last.end()) - last.begin());
      if (next == kEndId) break;
      out.push_back(next);
      if (tgt.size() == cfg_.max_len) break;
      tgt.push_back(next);
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  Tensor pe_;
};

/// One-shot forward pass; builds the positional table on every call.
inline Tensor forward(TokenSpan src_ids, TokenSpan tgt_ids,
                      const TransformerParams& p, const ModelConfig& cfg) {
  return Transformer(cfg).forward(src_ids, tgt_ids, p);
}

inline std::vector<TokenId> greedy_decode(TokenSpan src_ids,
                                          const TransformerParams& p,
                                          const ModelConfig& cfg,
                                          std::size_t max_steps) {
  return Transformer(cfg).greedy_decode(src_ids, p, max_steps);
}

}  // namespace projsdpa::model

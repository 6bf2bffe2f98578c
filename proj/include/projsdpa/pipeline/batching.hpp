#pragma once

#include <vector>

#include "projsdpa/pipeline/corpus.hpp"
#include "projsdpa/pipeline/vocab.hpp"

namespace projsdpa::pipeline {

/// One example padded to max_len. tgt_out is tgt_in shifted left by one.
struct EncodedPair {
  std::vector<TokenId> src;
  std::vector<TokenId> tgt_in;   // start, tokens..., pad...
  std::vector<TokenId> tgt_out;  // tokens..., end, pad...

  friend bool operator==(const EncodedPair&, const EncodedPair&) = default;
};

inline EncodedPair encode_pair(const SentencePair& pair, const Vocabulary& src_vocab,
                               const Vocabulary& tgt_vocab, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max_len must be >= 1");
  EncodedPair e;
  e.src = src_vocab.encode(pair.source);
  e.src.resize(max_len, model::kPadId);

  const auto tgt = tgt_vocab.encode(pair.target);
  e.tgt_in.push_back(model::kStartId);
  e.tgt_in.insert(e.tgt_in.end(), tgt.begin(), tgt.end());
  e.tgt_out.assign(tgt.begin(), tgt.end());
  e.tgt_out.push_back(model::kEndId);
  e.tgt_in.resize(max_len, model::kPadId);
  e.tgt_out.resize(max_len, model::kPadId);
  return e;
}

inline std::vector<EncodedPair> encode_pairs(std::span<const SentencePair> pairs,
                                             const Vocabulary& src_vocab,
                                             const Vocabulary& tgt_vocab,
                                             std::size_t max_len) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p, src_vocab, tgt_vocab, max_len));
  return out;
}

/// Row-major [B x L] id matrices.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t length = 0;
  std::vector<TokenId> src_ids;
  std::vector<TokenId> tgt_in_ids;
  std::vector<TokenId> tgt_out_ids;

  std::span<const TokenId> src(std::size_t b) const {
    return {src_ids.data() + b * length, length};
  }
  std::span<const TokenId> tgt_in(std::size_t b) const {
    return {tgt_in_ids.data() + b * length, length};
  }
  std::span<const TokenId> tgt_out(std::size_t b) const {
    return {tgt_out_ids.data() + b * length, length};
  }
};

/// Groups examples (visited in `order`) into batches of at most batch_size.
inline std::vector<Batch> make_batches(std::span<const EncodedPair> data,
                                       std::span<const std::size_t> order,
                                       std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    b.batch_size = std::min(batch_size, order.size() - start);
    b.length = data[order[start]].src.size();
    for (std::size_t i = start; i < start + b.batch_size; ++i) {
      const auto& e = data[order[i]];
      if (e.src.size() != b.length || e.tgt_in.size() != b.length || e.tgt_out.size() != b.length)
        throw DataError("make_batches: examples must share one padded length");
      b.src_ids.insert(b.src_ids.end(), e.src.begin(), e.src.end());
      b.tgt_in_ids.insert(b.tgt_in_ids.end(), e.tgt_in.begin(), e.tgt_in.end());
      b.tgt_out_ids.insert(b.tgt_out_ids.end(), e.tgt_out.begin(), e.tgt_out.end());
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace projsdpa::pipeline

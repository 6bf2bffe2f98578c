#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "projsdpa/model/config.hpp"
#include "projsdpa/numerics/errors.hpp"

namespace projsdpa::pipeline {

using model::TokenId;

namespace detail {

inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;
}

}  // namespace detail

/// Lowercases, strips punctuation (keeping apostrophes between word
/// characters) and splits on whitespace. ASCII and the Latin-1 range of UTF-8
/// are case-folded; inverted Spanish marks and guillemets count as punctuation.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == 0xC2 && i + 1 < text.size()) {
      const auto n = static_cast<unsigned char>(text[i + 1]);
      if (n == 0xBF || n == 0xA1 || n == 0xAB || n == 0xBB) {  // ¿ ¡ « »
        clean += ' ';
        ++i;
        continue;
      }
    }
    if (c == 0xC3 && i + 1 < text.size()) {
      auto n = static_cast<unsigned char>(text[i + 1]);
      if (n >= 0x80 && n <= 0x9E && n != 0x97) n += 0x20;  // À..Þ -> à..þ
      clean += static_cast<char>(c);
      clean += static_cast<char>(n);
      ++i;
      continue;
    }
    if (c < 0x80 && std::isupper(c)) {
      clean += static_cast<char>(std::tolower(c));
    } else if (c == '\'') {
      const bool inner = i > 0 && i + 1 < text.size() &&
                         detail::is_word_byte(static_cast<unsigned char>(text[i - 1])) &&
                         detail::is_word_byte(static_cast<unsigned char>(text[i + 1]));
      clean += inner ? '\'' : ' ';
    } else if (c < 0x80 && std::ispunct(c)) {
      clean += ' ';
    } else {
      clean += static_cast<char>(c);
    }
  }
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < clean.size()) {
    while (i < clean.size() && std::isspace(static_cast<unsigned char>(clean[i]))) ++i;
    std::size_t j = i;
    while (j < clean.size() && !std::isspace(static_cast<unsigned char>(clean[j]))) ++j;
    if (j > i) tokens.emplace_back(clean.substr(i, j - i));
    i = j;
  }
  return tokens;
}

/// Token <-> id map. Ids 0..3 are pad, start, end and unknown.
class Vocabulary {
 public:
  Vocabulary() : id_to_token_{"<pad>", "<start>", "<end>", "<unk>"} {}

  std::size_t size() const { return id_to_token_.size(); }

  TokenId id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? model::kUnkId : it->second;
  }

  const std::string& token(TokenId id) const {
    return id_to_token_.at(static_cast<std::size_t>(id));
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& t : tokenize(text)) ids.push_back(id(t));
    return ids;
  }

  /// Space-joined tokens with reserved ids dropped.
  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id < static_cast<TokenId>(model::kNumReserved)) continue;
      if (!out.empty()) out += ' ';
      out += token(id);
    }
    return out;
  }

  nlohmann::json to_json() const {
    return std::vector<std::string>(id_to_token_.begin() + model::kNumReserved,
                                    id_to_token_.end());
  }

  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& t : tokens) {
      if (v.token_to_id_.contains(t))
        throw DataError("duplicate vocabulary token '" + t + "'");
      v.token_to_id_.emplace(t, static_cast<TokenId>(v.id_to_token_.size()));
      v.id_to_token_.push_back(t);
    }
    return v;
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    return from_tokens(j.get<std::vector<std::string>>());
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Keeps the (cap - 4) most frequent tokens, ties broken lexicographically.
inline Vocabulary build_vocab(std::span<const std::string> texts, std::size_t cap) {
  if (cap < 5) throw ConfigError("vocabulary cap must be >= 5");
  if (texts.empty()) throw DataError("cannot build a vocabulary from no text");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts)
    for (auto& t : tokenize(text)) ++counts[std::move(t)];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), cap - model::kNumReserved);
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocabulary::from_tokens(tokens);
}

}  // namespace projsdpa::pipeline

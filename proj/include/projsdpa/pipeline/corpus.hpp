#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "projsdpa/numerics/errors.hpp"
#include "projsdpa/numerics/rng.hpp"

namespace projsdpa::pipeline {

struct SentencePair {
  std::string source;
  std::string target;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
  friend auto operator<=>(const SentencePair&, const SentencePair&) = default;
};

struct CorpusLoad {
  std::vector<SentencePair> pairs;
  std::size_t skipped = 0;  // lines without exactly one tab
};

/// Parses "source<TAB>target" lines. A trailing CR is dropped; lines that do
/// not contain exactly one tab are skipped and counted.
inline CorpusLoad parse_parallel_corpus(std::istream& in) {
  CorpusLoad out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      ++out.skipped;
      continue;
    }
    out.pairs.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

inline CorpusLoad load_parallel_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus " + path.string());
  CorpusLoad out = parse_parallel_corpus(in);
  if (out.pairs.empty())
    throw DataError("corpus " + path.string() + " has no valid pairs");
  return out;
}

struct DatasetSplit {
  std::vector<SentencePair> train;
  std::vector<SentencePair> validation;
  std::vector<SentencePair> test;
};

/// Seeded shuffle, then contiguous train/validation/test slices. Slice sizes
/// are round(f * n) for train and validation; test takes the remainder.
inline DatasetSplit split_dataset(std::vector<SentencePair> pairs,
                                  const std::array<double, 3>& fractions,
                                  std::uint64_t seed) {
  for (double f : fractions)
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  Rng rng(seed);
  shuffle(pairs, rng);
  const auto n = static_cast<double>(pairs.size());
  const auto n_train = std::min(pairs.size(), static_cast<std::size_t>(std::llround(fractions[0] * n)));
  const auto n_val = std::min(pairs.size() - n_train,
                              static_cast<std::size_t>(std::llround(fractions[1] * n)));
  DatasetSplit s;
  s.train.assign(pairs.begin(), pairs.begin() + n_train);
  s.validation.assign(pairs.begin() + n_train, pairs.begin() + n_train + n_val);
  s.test.assign(pairs.begin() + n_train + n_val, pairs.end());
  return s;
}

/// Token name for copy-task symbol i: "a".."z", then "s26", "s27", ...
inline std::string copy_symbol(std::size_t i) {
  if (i < 26) return std::string(1, static_cast<char>('a' + i));
  return "s" + std::to_string(i);
}

/// Synthetic identity-translation pairs over vocab_size - 4 symbols (the four
/// reserved ids are never generated).
inline std::vector<SentencePair> make_copy_task(std::size_t vocab_size,
                                                std::size_t seq_len,
                                                std::size_t n,
                                                std::uint64_t seed) {
  if (vocab_size < 5) throw ConfigError("copy task needs vocab_size >= 5");
  const std::size_t symbols = vocab_size - 4;
  Rng rng(seed);
  std::vector<SentencePair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    for (std::size_t t = 0; t < seq_len; ++t) {
      if (t) s += ' ';
      s += copy_symbol(rng.below(symbols));
    }
    pairs.push_back({s, s});
  }
  return pairs;
}

}  // namespace projsdpa::pipeline

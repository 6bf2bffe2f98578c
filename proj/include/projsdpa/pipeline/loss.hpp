#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <span>

#include "projsdpa/model/config.hpp"
#include "projsdpa/numerics/ops.hpp"

namespace projsdpa::pipeline {

using model::TokenId;

struct LossResult {
  double loss = 0.0;        // mean nats per non-pad position
  Tensor grad;              // d(loss)/d(logits), same shape as logits
  std::size_t counted = 0;  // non-pad positions
};

namespace detail {

// Rows of `logits` viewed as a flat [N x V] list, whatever the rank.
inline std::size_t vocab_width(const Tensor& logits) { return logits.shape().back(); }

inline void check_targets(const Tensor& logits, std::span<const TokenId> targets) {
  if (logits.rank() < 2 || logits.size() / vocab_width(logits) != targets.size()) {
    throw ShapeError("loss: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const auto v = static_cast<TokenId>(vocab_width(logits));
  for (TokenId t : targets)
    if (t < 0 || t >= v) throw DataError("loss: target id " + std::to_string(t) + " >= vocab");
}

}  // namespace detail

/// Mean negative log-softmax over positions whose target is not `pad_id`.
/// Accepts [L x V] or [B x L x V] logits with targets flattened in the same order.
inline LossResult cross_entropy_loss(const Tensor& logits, std::span<const TokenId> targets,
                                     TokenId pad_id = model::kPadId) {
  detail::check_targets(logits, targets);
  const std::size_t v = detail::vocab_width(logits);
  LossResult r;
  r.grad = Tensor(logits.shape());
  for (TokenId t : targets) r.counted += t != pad_id;
  if (r.counted == 0) throw DataError("cross_entropy_loss: every position is padding");
  const double inv = 1.0 / static_cast<double>(r.counted);
  double total = 0.0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    if (targets[n] == pad_id) continue;
    const double* row = logits.raw() + n * v;
    double* g = r.grad.raw() + n * v;
    const double mx = *std::max_element(row, row + v);
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    const double log_z = mx + std::log(sum);
    total += log_z - row[targets[n]];
    for (std::size_t j = 0; j < v; ++j) g[j] = std::exp(row[j] - log_z) * inv;
    g[targets[n]] -= inv;
  }
  r.loss = total * inv;
  return r;
}

/// Fraction of non-pad positions whose argmax matches the target. Returns 0
/// (with a warning on stderr) when there are no such positions.
inline double token_accuracy(const Tensor& logits, std::span<const TokenId> targets,
                             TokenId pad_id = model::kPadId) {
  detail::check_targets(logits, targets);
  const std::size_t v = detail::vocab_width(logits);
  std::size_t hits = 0, counted = 0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    if (targets[n] == pad_id) continue;
    ++counted;
    const double* row = logits.raw() + n * v;
    hits += static_cast<std::size_t>(std::max_element(row, row + v) - row) ==
            static_cast<std::size_t>(targets[n]);
  }
  if (counted == 0) {
    std::clog << "warning: token_accuracy over zero non-pad positions\n";
    return 0.0;
  }
  return static_cast<double>(hits) / static_cast<double>(counted);
}

}  // namespace projsdpa::pipeline

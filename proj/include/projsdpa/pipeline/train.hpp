#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "projsdpa/model/transformer.hpp"
#include "projsdpa/pipeline/adam.hpp"
#include "projsdpa/pipeline/batching.hpp"
#include "projsdpa/pipeline/loss.hpp"

namespace projsdpa::pipeline {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  AdamHyper adam;
  std::uint64_t seed = 0;
  std::array<double, 3> split{0.7, 0.15, 0.15};
  std::size_t max_steps = 0;  // 0 = no limit

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(adam.lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
      throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(adam.eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    double sum = 0.0;
    for (double f : split) {
      if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  }
};

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;      // nats per non-pad token
  double accuracy = 0.0;  // fraction of non-pad tokens
  double seconds = 0.0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t tokens = 0;
};

namespace detail {

struct Accumulator {
  double loss_sum = 0.0;
  double hits = 0.0;
  std::size_t tokens = 0;

  void add(const Tensor& logits, std::span<const TokenId> targets) {
    const auto r = cross_entropy_loss(logits, targets);
    loss_sum += r.loss * static_cast<double>(r.counted);
    hits += token_accuracy(logits, targets) * static_cast<double>(r.counted);
    tokens += r.counted;
  }

  EvalResult result() const {
    if (tokens == 0) return {};
    const auto n = static_cast<double>(tokens);
    return {loss_sum / n, hits / n, tokens};
  }
};

inline std::vector<Parameter*> parameter_list(model::TransformerParams& p) {
  std::vector<Parameter*> out;
  p.for_each([&](const std::string&, Parameter& x) { out.push_back(&x); });
  return out;
}

}  // namespace detail

/// Teacher-forced loss and token accuracy over a whole dataset.
inline EvalResult evaluate(const model::Transformer& model,
                           const model::TransformerParams& params,
                           std::span<const EncodedPair> data) {
  detail::Accumulator acc;
  for (const auto& e : data) acc.add(model.forward(e.src, e.tgt_in, params), e.tgt_out);
  return acc.result();
}

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  std::size_t steps = 0;
};

/// Mini-batch Adam training with seeded per-epoch shuffling. Records one
/// "train" row per epoch (running average over the epoch's batches) and one
/// "val" row when validation data is present.
inline TrainResult train(const model::Transformer& model, model::TransformerParams& params,
                         std::span<const EncodedPair> train_data,
                         std::span<const EncodedPair> val_data, const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (train_data.empty()) throw DataError("training set is empty");
  using Clock = std::chrono::steady_clock;
  auto seconds_since = [](Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };

  Rng rng(cfg.seed);
  Adam optimizer(cfg.adam);
  const auto plist = detail::parameter_list(params);
  const std::size_t vocab = model.config().tgt_vocab;
  TrainResult result;
  std::vector<std::size_t> order(train_data.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    detail::Accumulator acc;
    bool stop = false;
    for (const auto& batch : make_batches(train_data, order, cfg.batch_size)) {
      const std::size_t len = batch.length;
      std::vector<model::ForwardCache> caches(batch.batch_size);
      Tensor logits({batch.batch_size, len, vocab});
      for (std::size_t b = 0; b < batch.batch_size; ++b) {
        const Tensor l = model.forward(batch.src(b), batch.tgt_in(b), params, &caches[b]);
        std::copy(l.data().begin(), l.data().end(), logits.raw() + b * len * vocab);
      }
      const auto loss = cross_entropy_loss(logits, batch.tgt_out_ids);
      if (!std::isfinite(loss.loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      acc.loss_sum += loss.loss * static_cast<double>(loss.counted);
      acc.hits += token_accuracy(logits, batch.tgt_out_ids) * static_cast<double>(loss.counted);
      acc.tokens += loss.counted;

      params.zero_grads();
      for (std::size_t b = 0; b < batch.batch_size; ++b)
        model.backward(caches[b], params, loss.grad.slice(b));
      optimizer.step(plist);
      ++result.steps;
      if (cfg.max_steps && result.steps >= cfg.max_steps) {
        stop = true;
        break;
      }
    }
    const auto tr = acc.result();
    result.metrics.push_back({epoch, "train", tr.loss, tr.accuracy, seconds_since(t0)});
    if (log) {
      *log << "epoch " << epoch << " train loss " << tr.loss << " acc " << tr.accuracy;
    }
    if (!val_data.empty()) {
      const auto t1 = Clock::now();
      const auto va = evaluate(model, params, val_data);
      if (!std::isfinite(va.loss)) throw NumericError("non-finite validation loss");
      result.metrics.push_back({epoch, "val", va.loss, va.accuracy, seconds_since(t1)});
      if (log) *log << " | val loss " << va.loss << " acc " << va.accuracy;
    }
    if (log) *log << '\n' << std::flush;
    if (stop) break;
  }
  return result;
}

/// %.6g formatting used for every float in tabular output.
inline std::string format_g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Metrics CSV: `# hardware: ...` comment, then header
/// `epoch,split,loss,accuracy,seconds` and one row per record. With
/// wall_clock false the seconds column is written as 0, which makes repeated
/// runs byte-identical.
inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& records,
                              const std::string& hardware, bool wall_clock = true) {
  out << "# hardware: " << hardware << '\n';
  out << "epoch,split,loss,accuracy,seconds\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << r.split << ',' << format_g6(r.loss) << ','
        << format_g6(r.accuracy) << ',' << format_g6(wall_clock ? r.seconds : 0.0) << '\n';
  }
}

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<MetricsRecord>& records,
                              const std::string& hardware, bool wall_clock = true) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write metrics " + path.string());
  write_metrics_csv(out, records, hardware, wall_clock);
}

}  // namespace projsdpa::pipeline

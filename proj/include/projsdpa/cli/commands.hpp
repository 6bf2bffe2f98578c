#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "projsdpa/cli/run_config.hpp"
#include "projsdpa/model/checkpoint.hpp"
#include "projsdpa/pipeline/diagnostics.hpp"
#include "projsdpa/pipeline/gradient_audit.hpp"
#include "projsdpa/pipeline/hardware.hpp"
#include "projsdpa/pipeline/train.hpp"

namespace projsdpa::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitVerification = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

inline constexpr double kEquivalenceTolerance = 1e-9;
inline constexpr double kGradcheckTolerance = 1e-3;

// ---------------------------------------------------------------------------
// equiv-check
// ---------------------------------------------------------------------------

struct EquivOptions {
  std::size_t trials = 1000;
  std::size_t max_t = 32;
  std::size_t max_d = 16;
  std::uint64_t seed = 0;
  double sigma2 = 1.0;
  double scale = 1.0;
};

struct EquivReport {
  double max_residual = 0.0;
  std::size_t worst_t = 0, worst_d = 0;
};

/// Random instances with T in [1, max_t] and d in [1, max_d]; standard-normal
/// q and k rows (normalized inside equivalence_residual).
inline EquivReport equivalence_sweep(const EquivOptions& o) {
  if (o.trials == 0 || o.max_t == 0 || o.max_d == 0)
    throw ConfigError("equiv-check: trials, max-t and max-d must be >= 1");
  Rng rng(o.seed);
  EquivReport r;
  for (std::size_t i = 0; i < o.trials; ++i) {
    const std::size_t t = 1 + rng.below(o.max_t), d = 1 + rng.below(o.max_d);
    const Tensor q = rng_normal(rng, {t, d}, 0.0, 1.0);
    const Tensor k = rng_normal(rng, {t, d}, 0.0, 1.0);
    const double res = attention::equivalence_residual(q, k, o.sigma2, o.scale);
    if (!(res <= r.max_residual)) r = {res, t, d};
  }
  return r;
}

inline int cmd_equiv_check(const EquivOptions& o, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = equivalence_sweep(o);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = r.max_residual < kEquivalenceTolerance;
  out << "trials=" << o.trials << " max_t=" << o.max_t << " max_d=" << o.max_d
      << " seed=" << o.seed << " sigma2=" << pipeline::format_g6(o.sigma2)
      << " scale=" << pipeline::format_g6(o.scale) << '\n';
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", r.max_residual);
  out << "max_residual=" << buf << " (T=" << r.worst_t << ", d=" << r.worst_d << ")"
      << " threshold=1e-09 seconds=" << pipeline::format_g6(secs) << '\n';
  out << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? kExitOk : kExitVerification;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

/// Gradient audit of both attention variants at the config's model shape,
/// with vocab_cap as the vocabulary size. inject_grad_fault perturbs one
/// gradient tensor by 1% after backprop (mutation control).
inline std::vector<pipeline::GradientAudit> run_gradcheck(const RunConfig& rc) {
  std::vector<pipeline::GradientAudit> reports;
  pipeline::GradientTamper tamper;
  if (rc.inject_grad_fault) {
    tamper = [](model::TransformerParams& p) {
      auto& g = p.out_w.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.01;
    };
  }
  for (auto v : {attention::Variant::Standard, attention::Variant::Projection}) {
    auto cfg = rc.model;
    cfg.variant = v;
    cfg.src_vocab = cfg.tgt_vocab = rc.vocab_cap;
    reports.push_back(pipeline::audit_gradients(cfg, rc.seed(), 1e-5, tamper));
  }
  return reports;
}

inline int cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  const auto reports = run_gradcheck(rc);
  auto sci = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return std::string(buf);
  };
  bool ok = true;
  for (const auto& r : reports) {
    out << "# " << attention::to_string(r.variant) << " max_rel_error=" << sci(r.max_rel_error)
        << " threshold=1e-03 " << (r.passed(kGradcheckTolerance) ? "PASS" : "FAIL") << '\n';
    ok = ok && r.passed(kGradcheckTolerance);
  }
  out << "variant,parameter,entries,rel_error\n";
  for (const auto& r : reports)
    for (const auto& p : r.parameters)
      out << attention::to_string(r.variant) << ',' << p.name << ',' << p.entries << ','
          << sci(p.rel_error) << '\n';
  return ok ? kExitOk : kExitVerification;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArtifacts {
  double final_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::filesystem::path metrics, timing, checkpoint;
};

inline std::vector<pipeline::SentencePair> load_pairs(const RunConfig& rc,
                                                      const std::string& data_path,
                                                      std::ostream& out) {
  if (rc.task == Task::Copy)
    return pipeline::make_copy_task(rc.copy_vocab, rc.copy_len, rc.copy_pairs, rc.seed());
  if (data_path.empty()) throw ConfigError("train: --data is required for task \"corpus\"");
  auto load = pipeline::load_parallel_corpus(data_path);
  if (load.skipped) out << "skipped " << load.skipped << " malformed corpus lines\n";
  if (rc.corpus_limit && load.pairs.size() > rc.corpus_limit) load.pairs.resize(rc.corpus_limit);
  return std::move(load.pairs);
}

inline TrainArtifacts run_training(const RunConfig& rc, const std::string& data_path,
                                   const std::filesystem::path& out_dir, std::ostream& out) {
  rc.validate();
  const auto pairs = load_pairs(rc, data_path, out);
  const auto split = pipeline::split_dataset(pairs, rc.train.split, rc.seed());
  if (split.train.empty()) throw DataError("train: training split is empty");

  std::vector<std::string> src_text, tgt_text;
  for (const auto& p : split.train) {
    src_text.push_back(p.source);
    tgt_text.push_back(p.target);
  }
  const std::size_t cap = rc.task == Task::Copy ? rc.copy_vocab : rc.vocab_cap;
  const auto src_vocab = pipeline::build_vocab(src_text, cap);
  const auto tgt_vocab = pipeline::build_vocab(tgt_text, cap);

  auto mc = rc.model;
  mc.src_vocab = src_vocab.size();
  mc.tgt_vocab = tgt_vocab.size();
  mc.validate();
  const auto len = mc.max_len;
  const auto train = pipeline::encode_pairs(split.train, src_vocab, tgt_vocab, len);
  const auto val = pipeline::encode_pairs(split.validation, src_vocab, tgt_vocab, len);
  const auto test = pipeline::encode_pairs(split.test, src_vocab, tgt_vocab, len);
  out << "pairs train=" << train.size() << " val=" << val.size() << " test=" << test.size()
      << " vocab src=" << mc.src_vocab << " tgt=" << mc.tgt_vocab
      << " variant=" << attention::to_string(mc.variant) << '\n';

  const model::Transformer net(mc);
  auto params = model::TransformerParams::init(mc);
  const auto result = pipeline::train(net, params, train, val, rc.train, &out);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string());
  TrainArtifacts a;
  a.metrics = out_dir / "metrics.csv";
  a.timing = out_dir / "timing.csv";
  a.checkpoint = out_dir / "checkpoint.bin";
  const auto hw = pipeline::hardware_description();
  pipeline::write_metrics_csv(a.metrics, result.metrics, hw, rc.metrics_wall_clock);
  pipeline::write_metrics_csv(a.timing, result.metrics, hw, true);

  nlohmann::json meta{{"src_vocab", src_vocab.to_json()},
                      {"tgt_vocab", tgt_vocab.to_json()},
                      {"run_config", to_json(rc)},
                      {"steps", result.steps}};
  model::save_checkpoint(a.checkpoint, mc, params, meta);

  const auto& data_for_val = val.empty() ? train : val;
  a.final_val_accuracy = pipeline::evaluate(net, params, data_for_val).accuracy;
  if (!test.empty()) a.test_accuracy = pipeline::evaluate(net, params, test).accuracy;
  if (val.empty()) out << "validation split is empty; reporting training accuracy\n";
  if (len >= 2) {
    out << "encoder_effective_rank="
        << pipeline::format_g6(pipeline::encoder_effective_rank(net, params, data_for_val[0].src))
        << '\n';
  }
  out << "steps=" << result.steps << '\n';
  if (!test.empty()) out << "test_accuracy=" << pipeline::format_g6(a.test_accuracy) << '\n';
  out << "final_val_accuracy=" << pipeline::format_g6(a.final_val_accuracy) << '\n';
  return a;
}

// ---------------------------------------------------------------------------
// translate
// ---------------------------------------------------------------------------

inline std::string translate(const std::filesystem::path& checkpoint, const std::string& input) {
  const auto ck = model::load_checkpoint(checkpoint);
  if (!ck.metadata.contains("src_vocab") || !ck.metadata.contains("tgt_vocab"))
    throw ConfigError("checkpoint has no vocabularies; was it written by train?");
  pipeline::Vocabulary src_vocab, tgt_vocab;
  try {
    src_vocab = pipeline::Vocabulary::from_json(ck.metadata.at("src_vocab"));
    tgt_vocab = pipeline::Vocabulary::from_json(ck.metadata.at("tgt_vocab"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint vocabulary is malformed: ") + e.what());
  }
  if (src_vocab.size() != ck.config.src_vocab || tgt_vocab.size() != ck.config.tgt_vocab)
    throw ConfigError("checkpoint vocabularies do not match its model config");
  auto src = src_vocab.encode(input);
  src.resize(ck.config.max_len, model::kPadId);
  const auto ids = model::greedy_decode(src, ck.params, ck.config, ck.config.max_len);
  return tgt_vocab.decode(ids);
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchOptions {
  std::vector<std::size_t> sizes{32, 64, 128, 256};
  std::size_t heads = 8;
  std::string variant = "both";
  std::size_t reps = 20;
  std::size_t d = 64;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string variant, phase;
  std::size_t t = 0, d = 0, heads = 0;
  double median_s = 0.0, iqr_s = 0.0;
};

/// Linear-interpolation quantile of a sample.
inline double sample_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace detail {

// Attention core on pre-projected q, k, v: split into heads, run the kernel,
// concatenate. Projections are excluded so the timing isolates the T x T work.
inline Tensor bench_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                            const attention::AttentionConfig& cfg,
                            std::vector<attention::HeadCache>* caches) {
  Tensor concat = Tensor::matrix(q.rows(), cfg.model_dim());
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const std::size_t off = h * cfg.head_dim;
    auto r = attention::attend_head(column_block(q, off, cfg.head_dim),
                                    column_block(k, off, cfg.head_dim),
                                    column_block(v, off, cfg.head_dim), cfg);
    set_column_block(concat, off, r.y);
    if (caches) caches->push_back(std::move(r.cache));
  }
  return concat;
}

inline double bench_backward(const std::vector<attention::HeadCache>& caches, const Tensor& dy,
                             const attention::AttentionConfig& cfg) {
  Tensor dq = Tensor::matrix(dy.rows(), cfg.model_dim());
  Tensor dk = dq, dv = dq;
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const std::size_t off = h * cfg.head_dim;
    const auto g = attention::attend_head_backward(caches[h], column_block(dy, off, cfg.head_dim));
    set_column_block(dq, off, g.dq);
    set_column_block(dk, off, g.dk);
    if (!g.dv.empty()) set_column_block(dv, off, g.dv);
  }
  return dq[0] + dk[0] + dv[0];
}

}  // namespace detail

inline std::vector<BenchRow> run_bench(const BenchOptions& o) {
  if (o.sizes.empty()) throw ConfigError("bench: --sizes must not be empty");
  for (auto t : o.sizes)
    if (t == 0) throw ConfigError("bench: sizes must be positive");
  if (o.reps == 0) throw ConfigError("bench: --reps must be >= 1");
  if (o.heads == 0 || o.d == 0 || o.d % o.heads != 0)
    throw ConfigError("bench: --d must be a positive multiple of --heads");
  std::vector<attention::Variant> variants;
  if (o.variant == "both") variants = {attention::Variant::Standard, attention::Variant::Projection};
  else variants = {attention::parse_variant(o.variant)};

#if defined(__GLIBC__)
  // Keep T x T buffers on the heap instead of fresh mmap pages per call;
  // otherwise page faults dominate and distort the scaling at large T.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  constexpr std::size_t kWarmup = 3;
  using Clock = std::chrono::steady_clock;
  Rng rng(o.seed);
  std::vector<BenchRow> rows;
  volatile double sink = 0.0;
  for (auto variant : variants) {
    attention::AttentionConfig cfg;
    cfg.variant = variant;
    cfg.num_heads = o.heads;
    cfg.head_dim = o.d / o.heads;
    // Unit-scale Gaussian bandwidth matching the default 1/sqrt(head_dim) scale.
    cfg.sigma2 = std::sqrt(static_cast<double>(cfg.head_dim));
    for (auto t : o.sizes) {
      const Tensor q = rng_normal(rng, {t, o.d}, 0, 1), k = rng_normal(rng, {t, o.d}, 0, 1),
                   v = rng_normal(rng, {t, o.d}, 0, 1), dy = rng_normal(rng, {t, o.d}, 0, 1);
      for (const std::string phase : {"forward", "forward_backward"}) {
        const bool backward = phase == "forward_backward";
        std::vector<double> samples;
        for (std::size_t rep = 0; rep < kWarmup + o.reps; ++rep) {
          const auto t0 = Clock::now();
          std::vector<attention::HeadCache> caches;
          const Tensor y = detail::bench_forward(q, k, v, cfg, backward ? &caches : nullptr);
          double s = y[0];
          if (backward) s += detail::bench_backward(caches, dy, cfg);
          const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
          sink = sink + s;
          if (rep >= kWarmup) samples.push_back(secs);
        }
        rows.push_back({std::string(attention::to_string(variant)), phase, t, o.d, o.heads,
                        sample_quantile(samples, 0.5),
                        sample_quantile(samples, 0.75) - sample_quantile(samples, 0.25)});
      }
    }
  }
  return rows;
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows,
                            const BenchOptions& o) {
  out << "# hardware: " << pipeline::hardware_description() << '\n';
  out << "# threads: 1\n";
  out << "# reps: " << o.reps << '\n';
  out << "variant,phase,T,d,heads,median_s,iqr_s\n";
  for (const auto& r : rows) {
    out << r.variant << ',' << r.phase << ',' << r.t << ',' << r.d << ',' << r.heads << ','
        << pipeline::format_g6(r.median_s) << ',' << pipeline::format_g6(r.iqr_s) << '\n';
  }
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

/// Maps library exceptions onto the exit-code contract.
template <class Fn>
int guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DegenerateRowError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitVerification;
  }
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Projection vs standard scaled dot-product attention toolkit", "projsdpa"};
  app.require_subcommand(1);

  EquivOptions eq;
  std::optional<std::uint64_t> seed_flag;
  auto* equiv = app.add_subcommand("equiv-check", "Certify standard == projection attention");
  equiv->add_option("--trials", eq.trials, "Random instances")->capture_default_str();
  equiv->add_option("--max-t", eq.max_t, "Largest sequence length")->capture_default_str();
  equiv->add_option("--max-d", eq.max_d, "Largest row width")->capture_default_str();
  equiv->add_option("--seed", seed_flag, "RNG seed");
  equiv->add_option("--sigma2", eq.sigma2, "Projection bandwidth")->capture_default_str();
  equiv->add_option("--scale", eq.scale, "Standard logit scale")->capture_default_str();

  std::string config_path, data_path, out_dir, checkpoint_path, input_text;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference audit of backprop");
  grad->add_option("--config", config_path, "Run config JSON")->required();
  grad->add_option("--seed", seed_flag, "RNG seed");

  auto* train = app.add_subcommand("train", "Train a model and write metrics + checkpoint");
  train->add_option("--config", config_path, "Run config JSON")->required();
  train->add_option("--data", data_path, "Tab-separated parallel corpus");
  train->add_option("--out", out_dir, "Output directory")->required();

  auto* tr = app.add_subcommand("translate", "Greedy-decode one input with a checkpoint");
  tr->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
  tr->add_option("--input", input_text, "Source text")->required();

  BenchOptions bo;
  auto* bench = app.add_subcommand("bench", "Time the attention core; CSV on stdout");
  bench->add_option("--sizes", bo.sizes, "Sequence lengths")->delimiter(',')->capture_default_str();
  bench->add_option("--heads", bo.heads, "Heads")->capture_default_str();
  bench->add_option("--variant", bo.variant, "standard, projection or both")
      ->check(CLI::IsMember({"standard", "projection", "both"}))
      ->capture_default_str();
  bench->add_option("--reps", bo.reps, "Timed repetitions")->capture_default_str();
  bench->add_option("--d", bo.d, "Model width")->capture_default_str();
  bench->add_option("--seed", seed_flag, "RNG seed");

  std::vector<const char*> argv{"projsdpa"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitConfig;
  }

  return guarded(
      [&]() -> int {
        const std::uint64_t seed = seed_flag ? *seed_flag : default_seed();
        if (*equiv) {
          eq.seed = seed;
          if (eq.trials == 0) throw ConfigError("--trials must be >= 1");
          return cmd_equiv_check(eq, out);
        }
        if (*grad) {
          auto rc = load_run_config(config_path, default_seed());
          if (seed_flag) rc.set_seed(*seed_flag);
          return cmd_gradcheck(rc, out);
        }
        if (*train) {
          run_training(load_run_config(config_path, default_seed()), data_path, out_dir, out);
          return kExitOk;
        }
        if (*tr) {
          out << translate(checkpoint_path, input_text) << '\n';
          return kExitOk;
        }
        bo.seed = seed;
        write_bench_csv(out, run_bench(bo), bo);
        return kExitOk;
      },
      err);
}

}  // namespace projsdpa::cli

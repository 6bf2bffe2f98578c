#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "projsdpa/model/config.hpp"
#include "projsdpa/pipeline/train.hpp"

namespace projsdpa::cli {

enum class Task { Corpus, Copy };

inline std::string_view to_string(Task t) { return t == Task::Copy ? "copy" : "corpus"; }

/// Flat JSON run description. Every key is optional; unknown keys are
/// rejected. Vocabulary sizes are not configured directly: they come from
/// the vocabulary built on the training split (capped at vocab_cap).
struct RunConfig {
  model::ModelConfig model;
  pipeline::TrainConfig train;
  std::size_t vocab_cap = 15000;
  bool metrics_wall_clock = true;
  Task task = Task::Corpus;
  std::size_t copy_vocab = 20;
  std::size_t copy_len = 8;
  std::size_t copy_pairs = 2500;
  std::size_t corpus_limit = 0;  // 0 = whole corpus
  bool inject_grad_fault = false;

  std::uint64_t seed() const { return train.seed; }

  void set_seed(std::uint64_t s) {
    train.seed = s;
    model.seed = s;
  }

  void validate() const {
    model.validate();
    train.validate();
    if (vocab_cap < 5) throw ConfigError("vocab_cap must be >= 5");
    if (task == Task::Copy) {
      if (copy_vocab < 5) throw ConfigError("copy_vocab must be >= 5");
      if (copy_len < 1) throw ConfigError("copy_len must be >= 1");
      if (copy_pairs < 1) throw ConfigError("copy_pairs must be >= 1");
    }
  }
};

/// Seed used when neither the config nor a flag sets one. PROJSDPA_SEED
/// overrides the built-in default of 0.
inline std::uint64_t default_seed() {
  const char* env = std::getenv("PROJSDPA_SEED");
  if (!env || !*env) return 0;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used != std::string(env).size() || std::string(env).front() == '-')
      throw std::invalid_argument(env);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("PROJSDPA_SEED is not an unsigned integer: ") + env);
  }
}

namespace detail {

inline std::size_t get_size(const nlohmann::json& j, const std::string& key) {
  if (!j.is_number_unsigned()) throw ConfigError(key + " must be a non-negative integer");
  return j.get<std::size_t>();
}

inline double get_double(const nlohmann::json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError(key + " must be a number");
  return j.get<double>();
}

inline bool get_bool(const nlohmann::json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError(key + " must be true or false");
  return j.get<bool>();
}

inline std::string get_string(const nlohmann::json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError(key + " must be a string");
  return j.get<std::string>();
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j, std::uint64_t fallback_seed = 0) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  c.set_seed(fallback_seed);
  auto& m = c.model;
  auto& t = c.train;
  using detail::get_bool, detail::get_double, detail::get_size, detail::get_string;
  for (const auto& [key, v] : j.items()) {
    if (key == "d_model") m.d_model = get_size(v, key);
    else if (key == "num_heads") m.num_heads = get_size(v, key);
    else if (key == "num_encoder_layers") m.num_encoder_layers = get_size(v, key);
    else if (key == "num_decoder_layers") m.num_decoder_layers = get_size(v, key);
    else if (key == "ff_dim") m.ff_dim = get_size(v, key);
    else if (key == "max_len") m.max_len = get_size(v, key);
    else if (key == "variant") m.variant = attention::parse_variant(get_string(v, key));
    else if (key == "sigma2_self") m.sigma2_self = get_double(v, key);
    else if (key == "sigma2_cross") m.sigma2_cross = get_double(v, key);
    else if (key == "normalize_rows") m.normalize_rows = attention::parse_row_norm(get_string(v, key));
    else if (key == "layer_norm_eps") m.layer_norm_eps = get_double(v, key);
    else if (key == "vocab_cap") c.vocab_cap = get_size(v, key);
    else if (key == "epochs") t.epochs = get_size(v, key);
    else if (key == "batch_size") t.batch_size = get_size(v, key);
    else if (key == "lr") t.adam.lr = get_double(v, key);
    else if (key == "beta1") t.adam.beta1 = get_double(v, key);
    else if (key == "beta2") t.adam.beta2 = get_double(v, key);
    else if (key == "adam_eps") t.adam.eps = get_double(v, key);
    else if (key == "seed") c.set_seed(get_size(v, key));
    else if (key == "max_steps") t.max_steps = get_size(v, key);
    else if (key == "metrics_wall_clock") c.metrics_wall_clock = get_bool(v, key);
    else if (key == "split") {
      if (!v.is_array() || v.size() != 3) throw ConfigError("split must be an array of 3 numbers");
      for (std::size_t i = 0; i < 3; ++i) t.split[i] = get_double(v[i], "split");
    } else if (key == "task") {
      const auto s = get_string(v, key);
      if (s == "copy") c.task = Task::Copy;
      else if (s == "corpus") c.task = Task::Corpus;
      else throw ConfigError("task must be \"corpus\" or \"copy\", got \"" + s + "\"");
    }
    else if (key == "copy_vocab") c.copy_vocab = get_size(v, key);
    else if (key == "copy_len") c.copy_len = get_size(v, key);
    else if (key == "copy_pairs") c.copy_pairs = get_size(v, key);
    else if (key == "corpus_limit") c.corpus_limit = get_size(v, key);
    else if (key == "inject_grad_fault") c.inject_grad_fault = get_bool(v, key);
    else throw ConfigError("unknown config key \"" + key + "\"");
  }
  // Placeholder sizes until a vocabulary exists; they satisfy validate().
  m.src_vocab = m.tgt_vocab = c.task == Task::Copy ? c.copy_vocab : c.vocab_cap;
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 std::uint64_t fallback_seed = 0) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return parse_run_config(j, fallback_seed);
}

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return {
      {"d_model", m.d_model},
      {"num_heads", m.num_heads},
      {"num_encoder_layers", m.num_encoder_layers},
      {"num_decoder_layers", m.num_decoder_layers},
      {"ff_dim", m.ff_dim},
      {"max_len", m.max_len},
      {"variant", std::string(attention::to_string(m.variant))},
      {"sigma2_self", m.sigma2_self},
      {"sigma2_cross", m.sigma2_cross},
      {"normalize_rows", std::string(attention::to_string(m.normalize_rows))},
      {"layer_norm_eps", m.layer_norm_eps},
      {"vocab_cap", c.vocab_cap},
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"lr", t.adam.lr},
      {"beta1", t.adam.beta1},
      {"beta2", t.adam.beta2},
      {"adam_eps", t.adam.eps},
      {"seed", t.seed},
      {"split", t.split},
      {"max_steps", t.max_steps},
      {"metrics_wall_clock", c.metrics_wall_clock},
      {"task", std::string(to_string(c.task))},
      {"copy_vocab", c.copy_vocab},
      {"copy_len", c.copy_len},
      {"copy_pairs", c.copy_pairs},
      {"corpus_limit", c.corpus_limit},
      {"inject_grad_fault", c.inject_grad_fault},
  };
}

}  // namespace projsdpa::cli

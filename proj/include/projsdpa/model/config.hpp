#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "projsdpa/attention/multi_head.hpp"
#include "projsdpa/numerics/ops.hpp"

namespace projsdpa::model {

using TokenId = std::int32_t;

// Reserved ids shared by every vocabulary.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kStartId = 1;
inline constexpr TokenId kEndId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr std::size_t kNumReserved = 4;

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t num_heads = 8;
  std::size_t num_encoder_layers = 2;
  std::size_t num_decoder_layers = 2;
  std::size_t ff_dim = 512;
  std::size_t src_vocab = 15000;
  std::size_t tgt_vocab = 15000;
  std::size_t max_len = 10;
  attention::Variant variant = attention::Variant::Projection;
  double sigma2_self = 0.01;
  double sigma2_cross = 0.05;
  attention::RowNorm normalize_rows = attention::RowNorm::None;
  double layer_norm_eps = kDefaultLayerNormEps;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / num_heads; }

  void validate() const {
    if (num_heads == 0 || d_model == 0 || d_model % num_heads != 0) {
      throw ConfigError("d_model " + std::to_string(d_model) +
                        " must be a positive multiple of num_heads " +
                        std::to_string(num_heads));
    }
    if (d_model % 2 != 0)
      throw ConfigError("d_model must be even for the positional table");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (src_vocab < kNumReserved || tgt_vocab < kNumReserved)
      throw ConfigError("vocabulary sizes must be >= 4 (reserved ids)");
    if (ff_dim < 1) throw ConfigError("ff_dim must be >= 1");
    if (!(sigma2_self > 0.0) || !(sigma2_cross > 0.0))
      throw ConfigError("sigma2_self and sigma2_cross must be > 0");
    if (!(layer_norm_eps >= 0.0)) throw ConfigError("layer_norm_eps must be >= 0");
  }

  attention::AttentionConfig attention_config(double sigma2, bool causal) const {
    attention::AttentionConfig c;
    c.variant = variant;
    c.num_heads = num_heads;
    c.head_dim = head_dim();
    c.sigma2 = sigma2;
    c.causal = causal;
    c.normalize_rows = normalize_rows;
    return c;
  }
  attention::AttentionConfig encoder_self_attention() const {
    return attention_config(sigma2_self, false);
  }
  attention::AttentionConfig decoder_self_attention() const {
    return attention_config(sigma2_self, true);
  }
  attention::AttentionConfig cross_attention() const {
    return attention_config(sigma2_cross, false);
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"d_model", c.d_model},
      {"num_heads", c.num_heads},
      {"num_encoder_layers", c.num_encoder_layers},
      {"num_decoder_layers", c.num_decoder_layers},
      {"ff_dim", c.ff_dim},
      {"src_vocab", c.src_vocab},
      {"tgt_vocab", c.tgt_vocab},
      {"max_len", c.max_len},
      {"variant", std::string(attention::to_string(c.variant))},
      {"sigma2_self", c.sigma2_self},
      {"sigma2_cross", c.sigma2_cross},
      {"normalize_rows", std::string(attention::to_string(c.normalize_rows))},
      {"layer_norm_eps", c.layer_norm_eps},
      {"seed", c.seed},
  };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.num_encoder_layers = j.at("num_encoder_layers").get<std::size_t>();
  c.num_decoder_layers = j.at("num_decoder_layers").get<std::size_t>();
  c.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.src_vocab = j.at("src_vocab").get<std::size_t>();
  c.tgt_vocab = j.at("tgt_vocab").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.variant = attention::parse_variant(j.at("variant").get<std::string>());
  c.sigma2_self = j.at("sigma2_self").get<double>();
  c.sigma2_cross = j.at("sigma2_cross").get<double>();
  c.normalize_rows =
      attention::parse_row_norm(j.at("normalize_rows").get<std::string>());
  c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace projsdpa::model

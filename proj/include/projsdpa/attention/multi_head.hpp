#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "projsdpa/attention/kernels.hpp"
#include "projsdpa/numerics/rng.hpp"

namespace projsdpa::attention {

enum class Variant { Standard, Projection };
enum class RowNorm { None, ExplicitL2 };

inline std::string_view to_string(Variant v) {
  return v == Variant::Standard ? "standard" : "projection";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "standard" || s == "Standard") return Variant::Standard;
  if (s == "projection" || s == "Projection") return Variant::Projection;
  throw ConfigError("unknown attention variant '" + std::string(s) + "'");
}

inline std::string_view to_string(RowNorm n) {
  return n == RowNorm::None ? "none" : "l2";
}

inline RowNorm parse_row_norm(std::string_view s) {
  if (s == "none" || s == "None") return RowNorm::None;
  if (s == "l2" || s == "ExplicitL2") return RowNorm::ExplicitL2;
  throw ConfigError("unknown row normalization '" + std::string(s) + "'");
}

struct AttentionConfig {
  Variant variant = Variant::Standard;
  std::size_t num_heads = 1;
  std::size_t head_dim = 1;
  double sigma2 = 1.0;  // Projection only
  bool causal = false;
  RowNorm normalize_rows = RowNorm::None;
  std::optional<double> scale;  // Standard only; defaults to 1/sqrt(head_dim)

  std::size_t model_dim() const { return num_heads * head_dim; }

  double effective_scale() const {
    return scale.value_or(1.0 / std::sqrt(static_cast<double>(head_dim)));
  }

  void validate(std::size_t d_model) const {
    if (num_heads == 0 || head_dim == 0)
      throw ConfigError("attention: num_heads and head_dim must be positive");
    if (num_heads * head_dim != d_model) {
      throw ConfigError("attention: num_heads x head_dim = " +
                        std::to_string(num_heads * head_dim) +
                        " does not equal d_model " + std::to_string(d_model));
    }
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
      throw ConfigError("attention: sigma2 must be positive and finite");
    if (scale && !(*scale > 0.0))
      throw ConfigError("attention: scale must be positive");
  }
};

/// Learned maps of one attention sublayer. The projection variant has no
/// value map: key rows serve as values and W_out absorbs the difference.
struct AttentionParams {
  Parameter w_q;
  Parameter w_k;
  std::optional<Parameter> w_v;
  Parameter w_out;

  static AttentionParams init(std::size_t d_model, const AttentionConfig& cfg,
                              Rng& rng) {
    cfg.validate(d_model);
    const double limit = std::sqrt(6.0 / static_cast<double>(2 * d_model));
    auto make = [&] {
      return Parameter(rng_uniform(rng, {d_model, d_model}, -limit, limit));
    };
    AttentionParams p;
    p.w_q = make();
    p.w_k = make();
    if (cfg.variant == Variant::Standard) p.w_v = make();
    p.w_out = make();
    return p;
  }

  template <typename Fn>
  void for_each(std::string_view prefix, Fn&& fn) {
    const std::string pre(prefix);
    fn(pre + ".w_q", w_q);
    fn(pre + ".w_k", w_k);
    if (w_v) fn(pre + ".w_v", *w_v);
    fn(pre + ".w_out", w_out);
  }
};

// ---------------------------------------------------------------------------
// Single head
// ---------------------------------------------------------------------------

struct HeadCache {
  Variant variant = Variant::Standard;
  // Standard: q/k as scored (normalized if requested), v, norms when normalized.
  Tensor q, k, v, q_norms, k_norms;
  bool normalized = false;
  double scale = 1.0;
  ProjectionCache projection;
  AttentionTrace trace;
};

struct HeadResult {
  Tensor y;
  HeadCache cache;
};

/// Runs the configured kernel on one head slice. `v` is ignored by the
/// projection variant.
inline HeadResult attend_head(const Tensor& q, const Tensor& k, const Tensor& v,
                              const AttentionConfig& cfg) {
  HeadResult out;
  out.cache.variant = cfg.variant;
  const bool normalize = cfg.normalize_rows == RowNorm::ExplicitL2;
  if (cfg.variant == Variant::Projection) {
    auto r = projection_sdpa(q, k, cfg.sigma2, cfg.causal, normalize);
    out.y = std::move(r.y);
    out.cache.trace = std::move(r.trace);
    out.cache.projection = std::move(r.cache);
    return out;
  }
  out.cache.normalized = normalize;
  out.cache.scale = cfg.effective_scale();
  if (normalize) {
    auto qn = l2_normalize_rows_with_norms(q);
    auto kn = l2_normalize_rows_with_norms(k);
    out.cache.q = std::move(qn.y);
    out.cache.q_norms = std::move(qn.norms);
    out.cache.k = std::move(kn.y);
    out.cache.k_norms = std::move(kn.norms);
  } else {
    out.cache.q = q;
    out.cache.k = k;
  }
  out.cache.v = v;
  auto r = standard_sdpa(out.cache.q, out.cache.k, v, out.cache.scale,
                         cfg.causal);
  out.y = std::move(r.y);
  out.cache.trace = std::move(r.trace);
  if (normalize)
    out.cache.trace.distances = pairwise_sq_distance(out.cache.q, out.cache.k);
  return out;
}

struct HeadGrads {
  Tensor dq, dk, dv;  // dv empty for projection
  double dsigma2 = 0.0;
};

inline HeadGrads attend_head_backward(const HeadCache& cache,
                                      const Tensor& upstream) {
  HeadGrads g;
  if (cache.variant == Variant::Projection) {
    auto pg = projection_sdpa_backward(cache.projection, cache.trace, upstream);
    g.dq = std::move(pg.dq);
    g.dk = std::move(pg.dk);
    g.dsigma2 = pg.dsigma2;
    return g;
  }
  auto sg = standard_sdpa_backward(cache.q, cache.k, cache.v, cache.scale,
                                   cache.trace.weights, upstream);
  if (cache.normalized) {
    g.dq = l2_normalize_rows_backward(cache.q, cache.q_norms, sg.dq);
    g.dk = l2_normalize_rows_backward(cache.k, cache.k_norms, sg.dk);
  } else {
    g.dq = std::move(sg.dq);
    g.dk = std::move(sg.dk);
  }
  g.dv = std::move(sg.dv);
  return g;
}

// ---------------------------------------------------------------------------
// Multi-head
// ---------------------------------------------------------------------------

struct MultiHeadCache {
  AttentionConfig config;
  Tensor x_q, x_kv;
  Tensor concat;  // per-head outputs, side by side
  std::vector<HeadCache> heads;
};

struct MultiHeadResult {
  Tensor y;
  std::vector<AttentionTrace> traces;
  MultiHeadCache cache;
};

/// Projects, slices into num_heads contiguous column blocks, attends per head,
/// concatenates, and recombines through W_out.
inline MultiHeadResult multi_head_attention(const Tensor& x_q,
                                            const Tensor& x_kv,
                                            const AttentionParams& params,
                                            const AttentionConfig& cfg) {
  require_matrix(x_q, "multi_head_attention");
  require_matrix(x_kv, "multi_head_attention");
  cfg.validate(x_q.cols());
  if (x_kv.cols() != x_q.cols()) {
    throw ShapeError("multi_head_attention: x_q " + shape_string(x_q.shape()) +
                     " and x_kv " + shape_string(x_kv.shape()) +
                     " have different widths");
  }
  if (cfg.variant == Variant::Standard && !params.w_v) {
    throw ConfigError("multi_head_attention: standard variant needs W_v");
  }
  const Tensor q = matmul(x_q, params.w_q.value);
  const Tensor k = matmul(x_kv, params.w_k.value);
  const Tensor v = cfg.variant == Variant::Standard
                       ? matmul(x_kv, params.w_v->value)
                       : Tensor{};

  MultiHeadResult out;
  out.cache.config = cfg;
  out.cache.x_q = x_q;
  out.cache.x_kv = x_kv;
  out.cache.concat = Tensor::matrix(x_q.rows(), cfg.model_dim());
  out.cache.heads.reserve(cfg.num_heads);
  out.traces.reserve(cfg.num_heads);
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const std::size_t off = h * cfg.head_dim;
    auto r = attend_head(column_block(q, off, cfg.head_dim),
                         column_block(k, off, cfg.head_dim),
                         v.empty() ? Tensor{} : column_block(v, off, cfg.head_dim),
                         cfg);
    set_column_block(out.cache.concat, off, r.y);
    out.traces.push_back(r.cache.trace);
    out.cache.heads.push_back(std::move(r.cache));
  }
  out.y = matmul(out.cache.concat, params.w_out.value);
  return out;
}

struct MultiHeadGrads {
  Tensor dx_q;
  Tensor dx_kv;
  double dsigma2 = 0.0;
};

/// Accumulates parameter gradients into `params` and returns input gradients.
/// For self-attention the caller adds dx_q and dx_kv.
inline MultiHeadGrads multi_head_attention_backward(const MultiHeadCache& cache,
                                                    AttentionParams& params,
                                                    const Tensor& upstream) {
  const auto& cfg = cache.config;
  if (cache.heads.size() != cfg.num_heads) {
    throw std::logic_error("multi_head_attention_backward: missing saved state");
  }
  axpy(params.w_out.grad, matmul_tn(cache.concat, upstream));
  const Tensor dconcat = matmul_nt(upstream, params.w_out.value);

  const std::size_t d = cfg.model_dim();
  Tensor dq = Tensor::matrix(cache.x_q.rows(), d);
  Tensor dk = Tensor::matrix(cache.x_kv.rows(), d);
  Tensor dv = cfg.variant == Variant::Standard
                  ? Tensor::matrix(cache.x_kv.rows(), d)
                  : Tensor{};
  MultiHeadGrads g;
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const std::size_t off = h * cfg.head_dim;
    auto hg = attend_head_backward(cache.heads[h],
                                   column_block(dconcat, off, cfg.head_dim));
    set_column_block(dq, off, hg.dq);
    set_column_block(dk, off, hg.dk);
    if (!dv.empty()) set_column_block(dv, off, hg.dv);
    g.dsigma2 += hg.dsigma2;
  }
  axpy(params.w_q.grad, matmul_tn(cache.x_q, dq));
  axpy(params.w_k.grad, matmul_tn(cache.x_kv, dk));
  g.dx_q = matmul_nt(dq, params.w_q.value);
  g.dx_kv = matmul_nt(dk, params.w_k.value);
  if (!dv.empty()) {
    axpy(params.w_v->grad, matmul_tn(cache.x_kv, dv));
    axpy(g.dx_kv, matmul_nt(dv, params.w_v->value));
  }
  return g;
}

}  // namespace projsdpa::attention

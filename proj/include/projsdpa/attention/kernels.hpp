#pragma once

// Single-head attention kernels in two algebraic forms.
//
// Standard form:    y = softmax(scale * q k^T) v
// Projection form:  y_i = sum_j z_ij k_j,  z_ij = exp(-D_ij / 2 sigma2) / C_i
//
// D_ij is the squared Euclidean distance between query row i and key row j,
// and C_i normalizes row i over its unmasked entries. For unit-norm rows
// D_ij = 2 - 2 q_i . k_j, so the projection form with sigma2 equals the
// standard form with scale = 1 / sigma2 and v = k.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "projsdpa/numerics/ops.hpp"

namespace projsdpa::attention {

/// Distances and row-stochastic weights recorded by one kernel call.
struct AttentionTrace {
  std::optional<Tensor> distances;  // squared distances; absent for plain standard SDPA
  Tensor weights;                   // z_ij; masked entries are exactly 0
};

namespace detail {

inline void check_causal_shape(std::size_t t_q, std::size_t t_k,
                               const char* what) {
  if (t_q != t_k) {
    throw ShapeError(std::string(what) + ": causal mask needs T_q == T_k, got " +
                     std::to_string(t_q) + " and " + std::to_string(t_k));
  }
}

// Last unmasked key index (inclusive) for query row i.
inline std::size_t last_key(std::size_t i, std::size_t t_k, bool causal) {
  return causal ? i : t_k - 1;
}

// Row-normalized exp of `logits` over unmasked entries with max subtraction.
// Masked entries are written as exact zeros.
inline Tensor masked_softmax_rows(const Tensor& logits, bool causal) {
  Tensor z = Tensor::matrix(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (logits.cols() == 0) {
      throw DegenerateRowError("attention: row " + std::to_string(i) +
                               " has no unmasked entries");
    }
    const std::size_t last = last_key(i, logits.cols(), causal);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= last; ++j) mx = std::max(mx, logits(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j <= last; ++j) {
      const double e = std::exp(logits(i, j) - mx);
      z(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j <= last; ++j) z(i, j) /= sum;
  }
  return z;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pairwise squared distance
// ---------------------------------------------------------------------------

/// D[i][j] = ||q_i - k_j||^2 via ||q||^2 + ||k||^2 - 2 q k^T, clamped at 0.
inline Tensor pairwise_sq_distance(const Tensor& q, const Tensor& k) {
  require_matrix(q, "pairwise_sq_distance");
  require_matrix(k, "pairwise_sq_distance");
  if (q.cols() != k.cols()) {
    throw ShapeError("pairwise_sq_distance: feature dims differ, " +
                     shape_string(q.shape()) + " vs " +
                     shape_string(k.shape()));
  }
  Tensor d = matmul_nt(q, k);
  std::vector<double> kk(k.rows(), 0.0);
  for (std::size_t j = 0; j < k.rows(); ++j)
    for (double v : k.row(j)) kk[j] += v * v;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double qq = 0.0;
    for (double v : q.row(i)) qq += v * v;
    auto r = d.row(i);
    for (std::size_t j = 0; j < r.size(); ++j)
      r[j] = std::max(0.0, qq + kk[j] - 2.0 * r[j]);
  }
  return d;
}

struct DistanceGrads {
  Tensor dq;
  Tensor dk;
};

/// dq_i = 2 (sum_j G_ij) q_i - 2 (G k)_i ;  dk_j = 2 (sum_i G_ij) k_j - 2 (G^T q)_j
inline DistanceGrads pairwise_sq_distance_backward(const Tensor& q,
                                                   const Tensor& k,
                                                   const Tensor& upstream) {
  if (upstream.rank() != 2 || upstream.rows() != q.rows() ||
      upstream.cols() != k.rows()) {
    throw ShapeError("pairwise_sq_distance_backward: upstream " +
                     shape_string(upstream.shape()) + " does not match " +
                     std::to_string(q.rows()) + "x" + std::to_string(k.rows()));
  }
  DistanceGrads g{matmul(upstream, k), matmul_tn(upstream, q)};
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double rs = 0.0;
    for (double v : upstream.row(i)) rs += v;
    auto dq = g.dq.row(i);
    auto qi = q.row(i);
    for (std::size_t m = 0; m < dq.size(); ++m)
      dq[m] = 2.0 * (rs * qi[m] - dq[m]);
  }
  Tensor cs = column_sums(upstream);
  for (std::size_t j = 0; j < k.rows(); ++j) {
    auto dk = g.dk.row(j);
    auto kj = k.row(j);
    for (std::size_t m = 0; m < dk.size(); ++m)
      dk[m] = 2.0 * (cs[j] * kj[m] - dk[m]);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Gaussian weights
// ---------------------------------------------------------------------------

/// z_ij = exp(-D_ij / 2 sigma2) / C_i over unmasked j. Evaluated in log space
/// with the row's minimum distance subtracted, so the nearest unmasked key
/// always has exponent 0 and no row underflows even at sigma2 = 1e-4.
inline Tensor gaussian_weights(const Tensor& distances, double sigma2,
                               bool causal) {
  require_matrix(distances, "gaussian_weights");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw ConfigError("gaussian_weights: sigma2 must be positive and finite");
  }
  if (causal)
    detail::check_causal_shape(distances.rows(), distances.cols(),
                               "gaussian_weights");
  Tensor z = Tensor::matrix(distances.rows(), distances.cols());
  const double inv = 1.0 / (2.0 * sigma2);
  for (std::size_t i = 0; i < distances.rows(); ++i) {
    if (distances.cols() == 0) {
      throw DegenerateRowError("gaussian_weights: row " + std::to_string(i) +
                               " has no unmasked entries");
    }
    const std::size_t last = detail::last_key(i, distances.cols(), causal);
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= last; ++j) dmin = std::min(dmin, distances(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j <= last; ++j) {
      const double e = std::exp(-(distances(i, j) - dmin) * inv);
      z(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j <= last; ++j) z(i, j) /= sum;
  }
  return z;
}

struct GaussianGrads {
  Tensor ddistances;
  double dsigma2 = 0.0;
};

/// With exponents E = -D / 2 sigma2 and z = softmax(E) over unmasked entries:
/// dE = z * (dz - <dz, z>), dD = -dE / 2 sigma2, dsigma2 = sum dE * D / 2 sigma2^2.
inline GaussianGrads gaussian_weights_backward(const Tensor& weights,
                                               const Tensor& distances,
                                               double sigma2,
                                               const Tensor& upstream) {
  require_same_shape(weights, upstream, "gaussian_weights_backward");
  require_same_shape(weights, distances, "gaussian_weights_backward");
  Tensor de = softmax_rows_backward(weights, upstream);
  GaussianGrads g{Tensor::matrix(de.rows(), de.cols()), 0.0};
  const double inv = 1.0 / (2.0 * sigma2);
  for (std::size_t i = 0; i < de.size(); ++i) {
    g.ddistances[i] = -de[i] * inv;
    g.dsigma2 += de[i] * distances[i] * inv / sigma2;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Standard SDPA
// ---------------------------------------------------------------------------

struct SdpaResult {
  Tensor y;
  AttentionTrace trace;
};

/// y = softmax(scale * q k^T + mask) v; masked scores are excluded from the
/// row normalizer and get weight exactly 0.
inline SdpaResult standard_sdpa(const Tensor& q, const Tensor& k,
                                const Tensor& v, double scale, bool causal) {
  require_matrix(q, "standard_sdpa");
  require_matrix(k, "standard_sdpa");
  require_matrix(v, "standard_sdpa");
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ShapeError("standard_sdpa: incompatible q " + shape_string(q.shape()) +
                     ", k " + shape_string(k.shape()) + ", v " +
                     shape_string(v.shape()));
  }
  if (!(scale > 0.0)) throw ConfigError("standard_sdpa: scale must be > 0");
  if (causal) detail::check_causal_shape(q.rows(), k.rows(), "standard_sdpa");
  Tensor scores = matmul_nt(q, k);
  for (double& s : scores.data()) s *= scale;
  SdpaResult out;
  out.trace.weights = detail::masked_softmax_rows(scores, causal);
  out.y = matmul(out.trace.weights, v);
  return out;
}

struct SdpaGrads {
  Tensor dq;
  Tensor dk;
  Tensor dv;
};

inline SdpaGrads standard_sdpa_backward(const Tensor& q, const Tensor& k,
                                        const Tensor& v, double scale,
                                        const Tensor& weights,
                                        const Tensor& upstream) {
  if (upstream.rank() != 2 || upstream.rows() != q.rows() ||
      upstream.cols() != v.cols()) {
    throw ShapeError("standard_sdpa_backward: upstream " +
                     shape_string(upstream.shape()) + " does not match output");
  }
  if (weights.rank() != 2 || weights.rows() != q.rows() ||
      weights.cols() != k.rows()) {
    throw ShapeError("standard_sdpa_backward: missing or stale saved weights");
  }
  SdpaGrads g;
  Tensor dweights = matmul_nt(upstream, v);
  g.dv = matmul_tn(weights, upstream);
  Tensor dscores = softmax_rows_backward(weights, dweights);
  g.dq = matmul(dscores, k);
  g.dk = matmul_tn(dscores, q);
  for (double& x : g.dq.data()) x *= scale;
  for (double& x : g.dk.data()) x *= scale;
  return g;
}

// ---------------------------------------------------------------------------
// Projection SDPA
// ---------------------------------------------------------------------------

/// Saved forward state for projection_sdpa_backward.
struct ProjectionCache {
  Tensor q;  // rows as used for distances (normalized when `normalized`)
  Tensor k;
  Tensor q_norms;  // input row norms; set only when normalized
  Tensor k_norms;
  bool normalized = false;
  double sigma2 = 1.0;
  bool causal = false;
};

struct ProjectionResult {
  Tensor y;
  AttentionTrace trace;
  ProjectionCache cache;
};

/// y_i = sum_j z_ij k_j with z = gaussian_weights(pairwise_sq_distance(q, k)).
/// The key rows double as values. With `normalize`, q and k rows are first
/// scaled to unit norm and the normalized keys are the values.
inline ProjectionResult projection_sdpa(const Tensor& q, const Tensor& k,
                                        double sigma2, bool causal,
                                        bool normalize) {
  require_matrix(q, "projection_sdpa");
  require_matrix(k, "projection_sdpa");
  ProjectionResult out;
  out.cache.normalized = normalize;
  out.cache.sigma2 = sigma2;
  out.cache.causal = causal;
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
  Tensor d = pairwise_sq_distance(out.cache.q, out.cache.k);
  out.trace.weights = gaussian_weights(d, sigma2, causal);
  out.trace.distances = std::move(d);
  out.y = matmul(out.trace.weights, out.cache.k);
  return out;
}

struct ProjectionGrads {
  Tensor dq;
  Tensor dk;
  double dsigma2 = 0.0;
};

inline ProjectionGrads projection_sdpa_backward(const ProjectionCache& cache,
                                                const AttentionTrace& trace,
                                                const Tensor& upstream) {
  if (!trace.distances || cache.q.empty()) {
    throw std::logic_error("projection_sdpa_backward: missing saved state");
  }
  if (upstream.rank() != 2 || upstream.rows() != cache.q.rows() ||
      upstream.cols() != cache.k.cols()) {
    throw ShapeError("projection_sdpa_backward: upstream " +
                     shape_string(upstream.shape()) + " does not match output");
  }
  // y = Z k: both the weights and the value rows depend on k.
  Tensor dweights = matmul_nt(upstream, cache.k);
  Tensor dk = matmul_tn(trace.weights, upstream);
  auto gw = gaussian_weights_backward(trace.weights, *trace.distances,
                                      cache.sigma2, dweights);
  auto gd = pairwise_sq_distance_backward(cache.q, cache.k, gw.ddistances);
  axpy(dk, gd.dk);
  ProjectionGrads g;
  g.dsigma2 = gw.dsigma2;
  if (cache.normalized) {
    g.dq = l2_normalize_rows_backward(cache.q, cache.q_norms, gd.dq);
    g.dk = l2_normalize_rows_backward(cache.k, cache.k_norms, dk);
  } else {
    g.dq = std::move(gd.dq);
    g.dk = std::move(dk);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Equivalence diagnostic
// ---------------------------------------------------------------------------

/// Max-abs difference between standard SDPA on L2-normalized q, k with v = k
/// at `scale`, and projection SDPA with `sigma2`. Below round-off exactly when
/// scale = 1 / sigma2.
inline double equivalence_residual(const Tensor& q, const Tensor& k,
                                   double sigma2, double scale) {
  const Tensor qn = l2_normalize_rows(q);
  const Tensor kn = l2_normalize_rows(k);
  const auto standard = standard_sdpa(qn, kn, kn, scale, false);
  const auto projection = projection_sdpa(q, k, sigma2, false, true);
  return max_abs_diff(standard.y, projection.y);
}

}  // namespace projsdpa::attention

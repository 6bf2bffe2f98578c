#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "projsdpa/numerics/tensor.hpp"

namespace projsdpa {

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace detail {

// c[m x n] += a[m x k] * b[k x n], all row-major.
inline void gemm_nn_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

}  // namespace detail

/// Matrix product. Rank-3 operands are multiplied slice by slice.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 3 && b.rank() == 3) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
      throw ShapeError("matmul: cannot multiply " + shape_string(a.shape()) +
                       " by " + shape_string(b.shape()));
    }
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2),
                      n = b.dim(2);
    Tensor c({batch, m, n});
    for (std::size_t s = 0; s < batch; ++s) {
      detail::gemm_nn_acc(a.raw() + s * m * k, b.raw() + s * k * n,
                          c.raw() + s * m * n, m, k, n);
    }
    return c;
  }
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a.shape()) +
                     " by " + shape_string(b.shape()));
  }
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  detail::gemm_nn_acc(a.raw(), b.raw(), c.raw(), a.rows(), a.cols(), b.cols());
  return c;
}

/// a * b^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + shape_string(a.shape()) +
                     " by transpose of " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), n = b.rows(), k = a.cols();
  Tensor c = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.raw() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.raw() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c(i, j) = s;
    }
  }
  return c;
}

/// a^T * b without materializing the transpose.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose of " +
                     shape_string(a.shape()) + " by " +
                     shape_string(b.shape()));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c = Tensor::matrix(m, n);
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.raw() + p * m;
    const double* bp = b.raw() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c.raw() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
  return c;
}

struct MatmulGrads {
  Tensor da;
  Tensor db;
};

/// Vector-Jacobian product of C = A B: dA = G B^T, dB = A^T G.
inline MatmulGrads matmul_backward(const Tensor& a, const Tensor& b,
                                   const Tensor& upstream) {
  require_matrix(upstream, "matmul_backward");
  if (upstream.rows() != a.rows() || upstream.cols() != b.cols()) {
    throw ShapeError("matmul_backward: upstream " +
                     shape_string(upstream.shape()) +
                     " does not match product of " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  return {matmul_nt(upstream, b), matmul_tn(a, upstream)};
}

inline Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// ---------------------------------------------------------------------------
// Elementwise helpers
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

inline Tensor scaled(const Tensor& a, double s) {
  Tensor c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

/// dst += alpha * src
inline void axpy(Tensor& dst, const Tensor& src, double alpha = 1.0) {
  require_same_shape(dst, src, "axpy");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

/// Adds a length-n bias to every row of an m x n matrix.
inline void add_row_bias(Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_row_bias");
  if (bias.size() != x.cols()) {
    throw ShapeError("add_row_bias: bias " + shape_string(bias.shape()) +
                     " vs matrix " + shape_string(x.shape()));
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

/// Column sums of a matrix; the gradient of a broadcast row bias.
inline Tensor column_sums(const Tensor& x) {
  require_matrix(x, "column_sums");
  Tensor s = Tensor::vector(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) s[j] += r[j];
  }
  return s;
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Relative error of `actual` against `reference`, measured tensor-wide:
/// max|a - r| / max(max|a|, max|r|, floor). Elementwise ratios are avoided
/// because gradients that are zero up to round-off make them meaningless.
inline double relative_error(const Tensor& actual, const Tensor& reference,
                             double floor = 1e-8) {
  const double scale =
      std::max({max_abs(actual), max_abs(reference), floor});
  return max_abs_diff(actual, reference) / scale;
}

/// Extracts columns [begin, begin + width) of a matrix.
inline Tensor column_block(const Tensor& x, std::size_t begin,
                           std::size_t width) {
  require_matrix(x, "column_block");
  if (begin + width > x.cols()) {
    throw ShapeError("column_block: range exceeds " + shape_string(x.shape()));
  }
  Tensor out = Tensor::matrix(x.rows(), width);
  for (std::size_t i = 0; i < x.rows(); ++i)
    std::copy_n(x.raw() + i * x.cols() + begin, width, out.raw() + i * width);
  return out;
}

/// Writes `block` into columns [begin, begin + block.cols()) of `x`.
inline void set_column_block(Tensor& x, std::size_t begin, const Tensor& block) {
  if (block.rows() != x.rows() || begin + block.cols() > x.cols()) {
    throw ShapeError("set_column_block: " + shape_string(block.shape()) +
                     " does not fit " + shape_string(x.shape()));
  }
  for (std::size_t i = 0; i < x.rows(); ++i)
    std::copy_n(block.raw() + i * block.cols(), block.cols(),
                x.raw() + i * x.cols() + begin);
}

// ---------------------------------------------------------------------------
// Row softmax
// ---------------------------------------------------------------------------

/// Row-wise softmax with row-max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  Tensor y = x;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
  return y;
}

/// Backward of softmax_rows given its output y: dx = y * (dy - <dy, y>_row).
/// Also valid for masked softmax where masked entries of y are exactly zero.
inline Tensor softmax_rows_backward(const Tensor& y, const Tensor& upstream) {
  require_same_shape(y, upstream, "softmax_rows_backward");
  Tensor dx = Tensor::matrix(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    auto gr = upstream.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
    auto dr = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) dr[j] = yr[j] * (gr[j] - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// L2 row normalization
// ---------------------------------------------------------------------------

inline constexpr double kMinRowNorm = 1e-12;

struct L2NormalizeResult {
  Tensor y;
  Tensor norms;  // per-row Euclidean norm of the input
};

inline L2NormalizeResult l2_normalize_rows_with_norms(const Tensor& x) {
  require_matrix(x, "l2_normalize_rows");
  L2NormalizeResult out{x, Tensor::vector(x.rows())};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = out.y.row(i);
    double ss = 0.0;
    for (double v : r) ss += v * v;
    const double n = std::sqrt(ss);
    if (!(n >= kMinRowNorm)) {
      throw DegenerateRowError("l2_normalize_rows: row " + std::to_string(i) +
                               " has norm below 1e-12");
    }
    for (double& v : r) v /= n;
    out.norms[i] = n;
  }
  return out;
}

inline Tensor l2_normalize_rows(const Tensor& x) {
  return l2_normalize_rows_with_norms(x).y;
}

/// dx = (dy - y <y, dy>) / ||x|| per row.
inline Tensor l2_normalize_rows_backward(const Tensor& y, const Tensor& norms,
                                         const Tensor& upstream) {
  require_same_shape(y, upstream, "l2_normalize_rows_backward");
  Tensor dx = Tensor::matrix(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto yr = y.row(i);
    auto gr = upstream.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
    auto dr = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j)
      dr[j] = (gr[j] - yr[j] * dot) / norms[i];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Layer normalization
// ---------------------------------------------------------------------------

inline constexpr double kDefaultLayerNormEps = 1e-5;

struct LayerNormCache {
  Tensor normalized;  // (x - mean) / sqrt(var + eps)
  Tensor inv_std;     // per row
};

struct LayerNormResult {
  Tensor y;
  LayerNormCache cache;
};

/// Per row: subtract mean, divide by sqrt(population variance + eps), then
/// apply gain and bias.
inline LayerNormResult layer_norm_rows_with_cache(const Tensor& x,
                                                  const Tensor& gain,
                                                  const Tensor& bias,
                                                  double eps = kDefaultLayerNormEps) {
  require_matrix(x, "layer_norm_rows");
  const std::size_t n = x.cols();
  if (n < 2) throw ShapeError("layer_norm_rows: need at least 2 columns");
  if (gain.size() != n || bias.size() != n) {
    throw ShapeError("layer_norm_rows: gain/bias " +
                     shape_string(gain.shape()) + "/" +
                     shape_string(bias.shape()) + " vs input " +
                     shape_string(x.shape()));
  }
  LayerNormResult out{Tensor::matrix(x.rows(), n),
                      {Tensor::matrix(x.rows(), n), Tensor::vector(x.rows())}};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    out.cache.inv_std[i] = inv_std;
    auto nr = out.cache.normalized.row(i);
    auto yr = out.y.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      nr[j] = (xr[j] - mean) * inv_std;
      yr[j] = nr[j] * gain[j] + bias[j];
    }
  }
  return out;
}

inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain,
                              const Tensor& bias,
                              double eps = kDefaultLayerNormEps) {
  return layer_norm_rows_with_cache(x, gain, bias, eps).y;
}

struct LayerNormGrads {
  Tensor dx;
  Tensor dgain;
  Tensor dbias;
};

inline LayerNormGrads layer_norm_rows_backward(const LayerNormCache& cache,
                                               const Tensor& gain,
                                               const Tensor& upstream) {
  require_same_shape(cache.normalized, upstream, "layer_norm_rows_backward");
  const std::size_t m = upstream.rows(), n = upstream.cols();
  LayerNormGrads g{Tensor::matrix(m, n), Tensor::vector(n), Tensor::vector(n)};
  std::vector<double> dxhat(n);
  for (std::size_t i = 0; i < m; ++i) {
    auto gr = upstream.row(i);
    auto nr = cache.normalized.row(i);
    double mean_d = 0.0, mean_dn = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      g.dgain[j] += gr[j] * nr[j];
      g.dbias[j] += gr[j];
      dxhat[j] = gr[j] * gain[j];
      mean_d += dxhat[j];
      mean_dn += dxhat[j] * nr[j];
    }
    mean_d /= static_cast<double>(n);
    mean_dn /= static_cast<double>(n);
    auto dr = g.dx.row(i);
    for (std::size_t j = 0; j < n; ++j)
      dr[j] = cache.inv_std[i] * (dxhat[j] - mean_d - nr[j] * mean_dn);
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

/// Uses the forward output: the gate is open where y > 0.
inline Tensor relu_backward(const Tensor& y, const Tensor& upstream) {
  require_same_shape(y, upstream, "relu_backward");
  Tensor dx = upstream;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(y[i] > 0.0)) dx[i] = 0.0;
  return dx;
}

}  // namespace projsdpa

#pragma once

#include <cmath>
#include <vector>

#include <Eigen/SVD>

#include "projsdpa/model/transformer.hpp"

namespace projsdpa::pipeline {

/// exp(Shannon entropy) of the normalized singular values of the
/// row-centered [T x d] activation matrix. Returns 1.0 when every row is
/// identical (centered matrix is zero).
inline double effective_rank_probe(const Tensor& activations) {
  require_matrix(activations, "effective_rank_probe");
  const std::size_t t = activations.rows(), d = activations.cols();
  if (t < 2) throw ShapeError("effective_rank_probe: need T >= 2 rows, got " + std::to_string(t));
  Eigen::MatrixXd m(t, d);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = activations(i, j);
  m.rowwise() -= m.colwise().mean();

  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
  const double total = s.sum();
  // Relative floor so that rounding noise left over from centering does not
  // register as extra dimensions.
  if (!(total > 1e-12 * max_abs(activations))) return 1.0;
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double p = s(i) / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

/// Effective rank of the encoder output for one source sequence.
inline double encoder_effective_rank(const model::Transformer& model,
                                     const model::TransformerParams& params,
                                     model::TokenSpan src_ids) {
  return effective_rank_probe(model.encode(src_ids, params));
}

}  // namespace projsdpa::pipeline

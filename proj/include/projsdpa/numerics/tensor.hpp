#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "projsdpa/numerics/errors.hpp"

namespace projsdpa {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

/// Dense row-major float64 array of rank 1 to 3.
///
/// Element access is unchecked in release builds; shape compatibility is
/// checked by the operations that consume tensors.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {
    check_rank();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (data_.size() != shape_volume(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor vector(std::size_t n, double fill = 0.0) {
    return Tensor({n}, fill);
  }

  /// Builds a matrix from nested rows, e.g. Tensor::from_rows({{1,2},{3,4}}).
  static Tensor from_rows(
      std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged rows in Tensor::from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor identity(std::size_t n) {
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view helpers; valid for rank 2.
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_[1]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& operator()(std::size_t b, std::size_t i, std::size_t j) {
    return data_[(b * shape_[1] + i) * shape_[2] + j];
  }
  double operator()(std::size_t b, std::size_t i, std::size_t j) const {
    return data_[(b * shape_[1] + i) * shape_[2] + j];
  }

  std::span<double> row(std::size_t i) {
    return {data_.data() + i * shape_.back(), shape_.back()};
  }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * shape_.back(), shape_.back()};
  }

  /// Slice `b` of a rank-3 tensor as a matrix copy.
  Tensor slice(std::size_t b) const {
    const std::size_t n = shape_[1] * shape_[2];
    return Tensor({shape_[1], shape_[2]},
                  std::vector<double>(data_.begin() + b * n,
                                      data_.begin() + (b + 1) * n));
  }

  Tensor reshaped(Shape shape) const {
    if (shape_volume(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                       shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_rank() const {
    if (shape_.empty() || shape_.size() > 3) {
      throw ShapeError("tensor rank must be 1..3, got shape " +
                       shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

/// A learned tensor together with its accumulated gradient.
struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()) + " differ");
  }
}

inline void require_matrix(const Tensor& a, const char* what) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected a matrix, got " +
                     shape_string(a.shape()));
  }
}

}  // namespace projsdpa

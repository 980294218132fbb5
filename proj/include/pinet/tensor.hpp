#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace pinet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/**
 * Dense 64-bit array with row-major storage.
 *
 * Rank 0 is a scalar, rank 1 a vector and rank 2 a matrix; nothing above
 * rank 2 is needed by the backbone or the projection layer. Vectors are
 * viewed as a single row when a matrix view is requested.
 */
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros_like(const Tensor& other);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);
  static Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m);
  static Tensor from_vector(const Eigen::Ref<const Vector>& v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

  /// Value of a single-element tensor.
  double item() const;

  Eigen::Map<const RowMatrix> as_matrix() const;
  Eigen::Map<RowMatrix> as_matrix();

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

/// Plain (untaped) matrix product of two rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

/**
 * Moore-Penrose pseudo-inverse computed once from an SVD.
 *
 * Singular values below rank_tol * sigma_max are treated as zero. Both A+ and
 * the row-space projector A+A are kept explicitly so each application is a
 * single matrix-vector product.
 */
class PseudoInverse {
 public:
  PseudoInverse() = default;
  explicit PseudoInverse(const Matrix& a, double rank_tol = 1e-12);

  /// A+ v.
  Vector apply(const Vector& v) const { return pinv_ * v; }
  Matrix apply(const Matrix& m) const { return pinv_ * m; }

  const Matrix& matrix() const { return pinv_; }
  /// A+A, the orthogonal projector onto the row space of A.
  Matrix row_space_projector() const;
  const Vector& singular_values() const { return singular_values_; }
  int rank() const { return rank_; }
  std::size_t source_rows() const { return rows_; }
  std::size_t source_cols() const { return cols_; }

 private:
  Matrix pinv_;
  Matrix source_;
  Vector singular_values_;
  int rank_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
};

PseudoInverse pinv(const Tensor& a, double rank_tol = 1e-12);
PseudoInverse pinv(const Matrix& a, double rank_tol = 1e-12);

/// 2-norm condition number sigma_max / sigma_min (infinite when singular).
double condition_number(const Matrix& a);

}  // namespace pinet

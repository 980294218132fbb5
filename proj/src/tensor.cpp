#include "pinet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/SVD>

#include "pinet/errors.hpp"

namespace pinet {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(shape_product(shape_), fill) {
  if (rank() > 2) throw DimensionError("tensor rank above 2 is not supported");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (rank() > 2) throw DimensionError("tensor rank above 2 is not supported");
  if (shape_product(shape_) != values_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                         std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, std::vector<double>{value}); }

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrix>& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.as_matrix() = m;
  return t;
}

Tensor Tensor::from_vector(const Eigen::Ref<const Vector>& v) {
  Tensor t({static_cast<std::size_t>(v.size())});
  std::copy(v.data(), v.data() + v.size(), t.values_.begin());
  return t;
}

std::size_t Tensor::rows() const {
  switch (rank()) {
    case 0:
    case 1:
      return 1;
    default:
      return shape_[0];
  }
}

std::size_t Tensor::cols() const {
  switch (rank()) {
    case 0:
      return 1;
    case 1:
      return shape_[0];
    default:
      return shape_[1];
  }
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  }
  return values_[0];
}

Eigen::Map<const RowMatrix> Tensor::as_matrix() const {
  return {values_.data(), static_cast<Eigen::Index>(rows()),
          static_cast<Eigen::Index>(cols())};
}

Eigen::Map<RowMatrix> Tensor::as_matrix() {
  return {values_.data(), static_cast<Eigen::Index>(rows()),
          static_cast<Eigen::Index>(cols())};
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) +
                         " by " + shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  out.as_matrix().noalias() = a.as_matrix() * b.as_matrix();
  return out;
}

PseudoInverse::PseudoInverse(const Matrix& a, double rank_tol)
    : source_(a),
      rows_(static_cast<std::size_t>(a.rows())),
      cols_(static_cast<std::size_t>(a.cols())) {
  if (!a.allFinite()) throw NumericalFailure("pinv: matrix has non-finite entries");
  if (a.size() == 0) {
    pinv_ = Matrix::Zero(a.cols(), a.rows());
    return;
  }
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) {
    throw NumericalFailure("pinv: singular value decomposition did not converge");
  }
  singular_values_ = svd.singularValues();
  const double sigma_max = singular_values_.size() ? singular_values_(0) : 0.0;
  const double cutoff = rank_tol * sigma_max;
  Vector inv = Vector::Zero(singular_values_.size());
  for (Eigen::Index i = 0; i < singular_values_.size(); ++i) {
    if (singular_values_(i) > cutoff && singular_values_(i) > 0.0) {
      inv(i) = 1.0 / singular_values_(i);
      ++rank_;
    }
  }
  pinv_ = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Matrix PseudoInverse::row_space_projector() const { return pinv_ * source_; }

PseudoInverse pinv(const Tensor& a, double rank_tol) {
  if (a.rank() != 2) throw DimensionError("pinv expects a rank-2 tensor");
  return PseudoInverse(Matrix(a.as_matrix()), rank_tol);
}

PseudoInverse pinv(const Matrix& a, double rank_tol) { return PseudoInverse(a, rank_tol); }

double condition_number(const Matrix& a) {
  if (a.size() == 0) return 1.0;
  Eigen::BDCSVD<Matrix> svd(a);
  const Vector& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

}  // namespace pinet

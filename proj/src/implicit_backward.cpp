#include "pinet/implicit_backward.hpp"

#include <cmath>
#include <limits>

#include "pinet/errors.hpp"

namespace pinet {

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

constexpr double kTiny = std::numeric_limits<double>::min() * 1e8;

}  // namespace

double BatchKrylovResult::converged_fraction() const {
  if (converged.empty()) return 1.0;
  std::size_t c = 0;
  for (bool b : converged) c += b ? 1 : 0;
  return static_cast<double>(c) / static_cast<double>(converged.size());
}

BatchKrylovResult bicgstab_solve_batch(const BatchLinearMap& apply, const Matrix& rhs,
                                       const KrylovSettings& ks) {
  if (ks.max_iter < 1) throw Error("bicgstab: max_iter must be at least 1");
  if (!rhs.allFinite()) throw NumericalFailure("bicgstab: right-hand side is not finite");
  const Eigen::Index n = rhs.rows();
  const Eigen::Index cols = rhs.cols();
  const std::size_t ucols = static_cast<std::size_t>(cols);

  BatchKrylovResult out;
  out.solution = Matrix::Zero(n, cols);
  out.converged.assign(ucols, false);

  Matrix x = Matrix::Zero(n, cols);
  Matrix r = rhs;
  const Matrix r_hat = rhs;
  Matrix p = Matrix::Zero(n, cols);
  Matrix v = Matrix::Zero(n, cols);
  const Vector b_norm = rhs.colwise().norm().transpose();
  Vector rho = Vector::Ones(cols), alpha = Vector::Ones(cols), om = Vector::Ones(cols);
  Vector best_res = b_norm;
  std::vector<bool> active(ucols, true);

  for (Eigen::Index j = 0; j < cols; ++j) {
    if (b_norm(j) == 0.0) {
      active[static_cast<std::size_t>(j)] = false;
      out.converged[static_cast<std::size_t>(j)] = true;
    }
  }
  auto any_active = [&] {
    for (bool a : active) {
      if (a) return true;
    }
    return false;
  };

  int it = 0;
  while (it < ks.max_iter && any_active()) {
    ++it;
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      if (!active[uj]) {
        p.col(j).setZero();
        continue;
      }
      const double rho_new = r_hat.col(j).dot(r.col(j));
      if (std::abs(rho_new) < kTiny) {
        active[uj] = false;
        p.col(j).setZero();
        continue;
      }
      const double beta = (rho_new / rho(j)) * (alpha(j) / om(j));
      p.col(j) = r.col(j) + beta * (p.col(j) - om(j) * v.col(j));
      rho(j) = rho_new;
    }
    v = apply(p);
    Matrix s = r;
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      if (!active[uj]) {
        s.col(j).setZero();
        continue;
      }
      const double denom = r_hat.col(j).dot(v.col(j));
      if (std::abs(denom) < kTiny) {
        active[uj] = false;
        s.col(j).setZero();
        continue;
      }
      alpha(j) = rho(j) / denom;
      x.col(j) += alpha(j) * p.col(j);
      s.col(j) = r.col(j) - alpha(j) * v.col(j);
      const double sn = s.col(j).norm();
      if (sn <= ks.tol * b_norm(j)) {
        r.col(j) = s.col(j);
        best_res(j) = sn;
        out.solution.col(j) = x.col(j);
        out.converged[uj] = true;
        active[uj] = false;
        s.col(j).setZero();
      }
    }
    if (!any_active()) break;
    const Matrix t = apply(s);
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      if (!active[uj]) continue;
      const double tt = t.col(j).squaredNorm();
      if (tt < kTiny) {
        active[uj] = false;
        continue;
      }
      om(j) = t.col(j).dot(s.col(j)) / tt;
      x.col(j) += om(j) * s.col(j);
      r.col(j) = s.col(j) - om(j) * t.col(j);
      const double rn = r.col(j).norm();
      if (!std::isfinite(rn)) {
        active[uj] = false;
        continue;
      }
      if (rn < best_res(j)) {
        best_res(j) = rn;
        out.solution.col(j) = x.col(j);
      }
      if (rn <= ks.tol * b_norm(j)) {
        out.converged[uj] = true;
        active[uj] = false;
      } else if (om(j) == 0.0) {
        active[uj] = false;
      }
    }
  }
  out.iterations = it;
  out.residual_norm = best_res;
  for (Eigen::Index j = 0; j < cols; ++j) {
    if (b_norm(j) > 0.0) out.residual_norm(j) = best_res(j) / b_norm(j);
  }
  return out;
}

KrylovResult bicgstab_solve(const LinearMap& apply, const Vector& rhs, const KrylovSettings& ks) {
  BatchKrylovResult b = bicgstab_solve_batch(
      [&](const Matrix& m) -> Matrix { return apply(m.col(0)); }, rhs, ks);
  KrylovResult r;
  r.solution = b.solution.col(0);
  r.residual_norm = b.residual_norm(0);
  r.converged = b.converged[0];
  r.iterations = b.iterations;
  return r;
}

FixedPointResidualOp::FixedPointResidualOp(DRGeometry geometry, const Matrix& b,
                                           const Matrix& y_raw, const Matrix& s_final,
                                           const DRSettings& settings)
    : g_(std::move(geometry)), settings_(settings) {
  settings_.validate();
  const Eigen::Index d = idx(g_.d());
  if (s_final.rows() != idx(g_.n()) || y_raw.rows() != d || s_final.cols() != y_raw.cols()) {
    throw DimensionError("FixedPointResidualOp: shape mismatch");
  }
  const Vector& w = g_.weights();
  const double sigma = settings_.sigma;
  damp_ = (1.0 + 2.0 * sigma * w.array().square()).inverse().matrix();
  yscale_ = settings_.omega * 2.0 * sigma * w.cwiseProduct(damp_);

  Matrix rhs = b;
  if (rhs.cols() == 1 && y_raw.cols() != 1) rhs = rhs.replicate(1, y_raw.cols()).eval();
  Matrix z = g_.op().null_projector() * s_final + g_.affine_offsets(rhs);
  at_ = 2.0 * z - s_final;
  at_.topRows(d) = damp_.asDiagonal() * at_.topRows(d);
  at_.topRows(d) += (2.0 * sigma * w.cwiseProduct(damp_)).asDiagonal() * y_raw;
}

Matrix FixedPointResidualOp::jacobian(const Matrix& v) const {
  const Eigen::Index d = idx(g_.d());
  const Eigen::Index n = idx(g_.n());
  Matrix jv = v;
  g_.k1().jacobian_apply_inplace(at_.topRows(d), jv.topRows(d));
  if (n > d) g_.k2().jacobian_apply_inplace(at_.bottomRows(n - d), jv.bottomRows(n - d));
  return jv;
}

Matrix FixedPointResidualOp::vjp_s(const Matrix& v) const {
  const Eigen::Index d = idx(g_.d());
  const Matrix& p = g_.op().null_projector();
  Matrix u = jacobian(v);
  u.topRows(d) = damp_.asDiagonal() * u.topRows(d);
  Matrix pu = p * u;
  Matrix pv = p * v;
  return v + settings_.omega * (2.0 * pu - u - pv);
}

Matrix FixedPointResidualOp::vjp_yraw(const Matrix& v) const {
  const Eigen::Index d = idx(g_.d());
  const Matrix jv = jacobian(v);
  return yscale_.asDiagonal() * jv.topRows(d);
}

Matrix FixedPointResidualOp::residual_vjp(const Matrix& v) const {
  const Eigen::Index d = idx(g_.d());
  const Matrix& p = g_.op().null_projector();
  Matrix u = jacobian(v);
  u.topRows(d) = damp_.asDiagonal() * u.topRows(d);
  // v - vjp_s(v) = omega (P v - (2P - I) D J v) = omega (P (v - 2u) + u).
  Matrix tmp = v - 2.0 * u;
  Matrix out = p * tmp;
  out += u;
  return settings_.omega * out;
}

Vector phi_vjp_s(const FixedPointResidualOp& op, const Vector& v) { return op.vjp_s(v).col(0); }

Vector phi_vjp_yraw(const FixedPointResidualOp& op, const Vector& v) {
  return op.vjp_yraw(v).col(0);
}

VjpResult projection_vjp_batch(const FixedPointResidualOp& op, const Matrix& cotangent,
                               const KrylovSettings& ks) {
  const DRGeometry& g = op.geometry();
  const Eigen::Index d = idx(g.d());
  const Eigen::Index n = idx(g.n());
  if (cotangent.rows() != d || cotangent.cols() != idx(op.batch())) {
    throw DimensionError("projection_vjp: cotangent shape mismatch");
  }
  Matrix lifted = Matrix::Zero(n, cotangent.cols());
  lifted.topRows(d) = g.weights().asDiagonal() * cotangent;
  const Matrix v1 = g.op().null_projector() * lifted;
  VjpResult out;
  out.krylov =
      bicgstab_solve_batch([&](const Matrix& x) { return op.residual_vjp(x); }, v1, ks);
  out.grad = op.vjp_yraw(out.krylov.solution);
  return out;
}

Vector projection_vjp(const FixedPointResidualOp& op, const Vector& cotangent,
                      const KrylovSettings& ks, bool* converged) {
  VjpResult r = projection_vjp_batch(op, cotangent, ks);
  if (converged) *converged = r.krylov.converged[0];
  return r.grad.col(0);
}

}  // namespace pinet

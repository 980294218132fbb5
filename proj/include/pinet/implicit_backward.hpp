#pragma once

#include <functional>
#include <vector>

#include "pinet/projection.hpp"
#include "pinet/tensor.hpp"

namespace pinet {

struct KrylovSettings {
  int max_iter = 25;
  double tol = 1e-6;  // relative residual
};

struct KrylovResult {
  Vector solution;
  double residual_norm = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct BatchKrylovResult {
  Matrix solution;
  Vector residual_norm;
  std::vector<bool> converged;
  int iterations = 0;

  double converged_fraction() const;
};

using LinearMap = std::function<Vector(const Vector&)>;
using BatchLinearMap = std::function<Matrix(const Matrix&)>;

/// BiCGSTAB from a zero initial guess. On breakdown the best iterate so far is
/// returned with converged = false.
KrylovResult bicgstab_solve(const LinearMap& apply, const Vector& rhs, const KrylovSettings& ks);

/// Column-independent BiCGSTAB sharing one operator application per step.
BatchKrylovResult bicgstab_solve_batch(const BatchLinearMap& apply, const Matrix& rhs,
                                       const KrylovSettings& ks);

/**
 * Linearization of one DR sweep s -> Phi(s, y_raw) at a converged batch.
 *
 * With P = I - A+A, D the block-1 damping 1/(1 + 2 sigma w^2) and J the
 * projection Jacobian onto K at the sweep's pre-projection point,
 *
 *   v' dPhi/ds     = v + omega ((2P - I) D J v - P v)
 *   v' dPhi/dy_raw = omega (2 sigma w / (1 + 2 sigma w^2)) (J v)_1.
 */
class FixedPointResidualOp {
 public:
  FixedPointResidualOp(DRGeometry geometry, const Matrix& b, const Matrix& y_raw,
                       const Matrix& s_final, const DRSettings& settings);

  Matrix vjp_s(const Matrix& v) const;
  Matrix vjp_yraw(const Matrix& v) const;
  /// (I - dPhi/ds)' v.
  Matrix residual_vjp(const Matrix& v) const;

  std::size_t batch() const { return static_cast<std::size_t>(at_.cols()); }
  const DRGeometry& geometry() const { return g_; }

 private:
  Matrix jacobian(const Matrix& v) const;

  DRGeometry g_;
  DRSettings settings_;
  Matrix at_;      // pre-projection point of the sweep, n x B
  Vector damp_;    // d
  Vector yscale_;  // omega 2 sigma w / (1 + 2 sigma w^2), d
};

Vector phi_vjp_s(const FixedPointResidualOp& op, const Vector& v);
Vector phi_vjp_yraw(const FixedPointResidualOp& op, const Vector& v);

struct VjpResult {
  Matrix grad;  // d x B
  BatchKrylovResult krylov;
};

/// Cotangent of the projection output (d x B) to cotangent of y_raw.
VjpResult projection_vjp_batch(const FixedPointResidualOp& op, const Matrix& cotangent,
                               const KrylovSettings& ks);

Vector projection_vjp(const FixedPointResidualOp& op, const Vector& cotangent,
                      const KrylovSettings& ks, bool* converged = nullptr);

}  // namespace pinet

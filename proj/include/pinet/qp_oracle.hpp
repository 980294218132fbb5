#pragma once

#include <optional>

#include "pinet/constraint_sets.hpp"
#include "pinet/tensor.hpp"

namespace pinet {

struct QpSettings {
  int max_iter = 40000;
  double eps = 1e-10;  // scaled primal and dual residual target
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  int check_every = 25;
  bool adaptive_rho = true;
  bool polish = true;
};

struct QpResult {
  Vector x;
  Vector y;  // multipliers of l <= A x <= u (positive on upper bounds)
  double objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  bool polished = false;
};

/**
 * Dense operator-splitting QP solver
 *
 *   minimize 0.5 x'Px + q'x  subject to  l <= A x <= u,
 *
 * with an OSQP-style ADMM loop (adaptive rho, over-relaxation) followed by
 * active-set polishing on the KKT system with iterative refinement.
 */
class AdmmQpSolver {
 public:
  AdmmQpSolver(Matrix p, Matrix a, QpSettings settings = {});

  QpResult solve(const Vector& q, const Vector& l, const Vector& u,
                 const QpResult* warm = nullptr) const;

  const Matrix& p() const { return p_; }
  const Matrix& a() const { return a_; }
  const QpSettings& settings() const { return settings_; }

 private:
  bool try_polish(const Vector& q, const Vector& l, const Vector& u, const Vector& y_admm,
                  const Vector& z_admm, QpResult& out) const;

  Matrix p_;
  Matrix a_;
  QpSettings settings_;
};

/// Residuals of a candidate (x, y): primal = max bound violation of A x,
/// dual = ||P x + q + A'y||_inf.
std::pair<double, double> qp_residuals(const Matrix& p, const Matrix& a, const Vector& q,
                                       const Vector& l, const Vector& u, const Vector& x,
                                       const Vector& y);

/// Rows l <= A y <= u describing a lifted constraint with box and free
/// factors: equalities, auxiliary rows with K2 bounds shifted by b_aux, and
/// one identity row per coordinate of y with a finite K1 bound.
struct QpRows {
  Matrix a;
  Vector l;
  Vector u;
};

QpRows qp_rows(const LiftedConstraint& lc);

/// Euclidean projection of y_raw onto a lifted constraint whose factors are
/// all boxes or free spaces, solved as a QP.
QpResult oracle_project(const LiftedConstraint& lc, const Vector& y_raw,
                        const QpSettings& settings = {});

}  // namespace pinet

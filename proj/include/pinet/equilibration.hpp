#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <unordered_map>

#include "pinet/constraint_sets.hpp"
#include "pinet/tensor.hpp"

namespace pinet {

enum class RuizMode { GaussSeidel, Jacobi };

struct RuizOptions {
  int max_iter = 25;
  double tol = 1e-3;
  RuizMode mode = RuizMode::GaussSeidel;
};

/// Diagonal scalings with a_scaled = diag(d_r) A diag(d_c).
struct Scaling {
  Vector d_r;
  Vector d_c;
  Matrix a_scaled;
  int iterations = 0;
  bool converged = false;

  static Scaling identity(const Matrix& a);
};

/// Modified Ruiz equilibration with 1/sqrt(norm) updates.
Scaling ruiz_equilibrate(const Matrix& a, const RuizOptions& options = {});

/// Shared part of a constraint expressed in scaled coordinates v~ = D_c^-1 v.
struct EquilibratedStructure {
  std::shared_ptr<const LiftedStructure> original;
  std::shared_ptr<const AffineOperator> op;  // over A~ = D_r A D_c
  FactorSet k1;                              // bounds divided by d_c
  FactorSet k2;
  Scaling scaling;
};

class EquilibratedConstraint {
 public:
  EquilibratedConstraint(std::shared_ptr<const EquilibratedStructure> s, LiftedConstraint lc);

  /// Rebinds to the same structure with a new unscaled right-hand side.
  EquilibratedConstraint with_rhs(Vector b) const;

  const LiftedConstraint& original() const { return lc_; }
  const EquilibratedStructure& structure() const { return *s_; }
  std::shared_ptr<const EquilibratedStructure> structure_ptr() const { return s_; }
  const Scaling& scaling() const { return s_->scaling; }
  /// D_r b.
  Vector b_scaled() const { return s_->scaling.d_r.cwiseProduct(lc_.b()); }
  std::size_t d() const { return lc_.d(); }
  std::size_t n() const { return lc_.n(); }
  /// First d entries of d_c.
  Vector d_c1() const { return s_->scaling.d_c.head(static_cast<Eigen::Index>(d())); }

 private:
  std::shared_ptr<const EquilibratedStructure> s_;
  LiftedConstraint lc_;
};

/**
 * Rewrites a lifted constraint in equilibrated coordinates.
 *
 * Only box and free factors are accepted: a coupled factor (cone, simplex,
 * ball) does not stay in its class under a non-uniform diagonal scaling.
 */
EquilibratedConstraint rescale_constraint(const LiftedConstraint& lc, const Scaling& scaling);

/// Convenience: Ruiz on A followed by rescale_constraint.
EquilibratedConstraint equilibrate(const LiftedConstraint& lc, const RuizOptions& options = {});

/// Equilibrated structures keyed by the identity of the shared structure.
class ScalingCache {
 public:
  explicit ScalingCache(RuizOptions options = {}) : options_(options) {}
  EquilibratedConstraint get(const LiftedConstraint& lc);
  std::size_t size() const;

 private:
  RuizOptions options_;
  mutable std::mutex mutex_;
  std::unordered_map<const LiftedStructure*, std::shared_ptr<const EquilibratedStructure>> cache_;
};

}  // namespace pinet

#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "pinet/tensor.hpp"

namespace pinet {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct FreeSpace {
  std::size_t dim = 0;
};

/// l <= y <= u; either side may be infinite.
struct BoxSet {
  Vector lower;
  Vector upper;
};

/// {(v, t) : ||v|| <= t}, with t stored last.
struct SecondOrderConeSet {
  std::size_t dim = 0;
};

/// {y >= 0, sum(y) = radius}.
struct SimplexSet {
  std::size_t dim = 0;
  double radius = 1.0;
};

/// {||y||_1 <= radius}.
struct L1BallSet {
  std::size_t dim = 0;
  double radius = 1.0;
};

using Factor = std::variant<FreeSpace, BoxSet, SecondOrderConeSet, SimplexSet, L1BallSet>;

std::size_t factor_dim(const Factor& f);

Vector project_box(const BoxSet& box, const Vector& s);
Vector project_soc(const Vector& s);
Vector project_simplex(const Vector& s, double radius);
Vector project_l1_ball(const Vector& s, double radius);

/// Closed-form projection onto a single factor.
Vector project_factor(const Factor& f, const Vector& s);

/**
 * Cartesian product of factors laid out on consecutive index spans.
 *
 * Batched routines work column-wise on an n x B block, one sample per column.
 */
class FactorSet {
 public:
  FactorSet() = default;
  explicit FactorSet(std::vector<Factor> factors);

  static FactorSet free(std::size_t dim);
  static FactorSet box(Vector lower, Vector upper);

  void append(Factor f);

  std::size_t dim() const { return dim_; }
  bool empty() const { return factors_.empty(); }
  const std::vector<Factor>& factors() const { return factors_; }
  const std::vector<std::size_t>& offsets() const { return offsets_; }

  Vector project(const Vector& s) const;
  void project_inplace(Eigen::Ref<Matrix> s) const;

  /// Applies the (symmetric) projection Jacobian taken at the columns of
  /// `at` to the columns of `v`, in place. At kinks the inactive branch is
  /// used.
  void jacobian_apply_inplace(const Eigen::Ref<const Matrix>& at, Eigen::Ref<Matrix> v) const;

  /// Largest per-factor distance: clip violation (inf-norm) for boxes,
  /// Euclidean distance for the other factors.
  double distance(const Eigen::Ref<const Vector>& y) const;

  bool all_box_or_free() const;

  /// Box bounds multiplied elementwise by `factor`; free factors unchanged.
  /// Throws when a non-box factor is present.
  FactorSet scaled_bounds(const Vector& factor) const;

 private:
  std::vector<Factor> factors_;
  std::vector<std::size_t> offsets_;
  std::size_t dim_ = 0;
};

/// A, its pseudo-inverse and the null-space projector I - A+A.
class AffineOperator {
 public:
  explicit AffineOperator(Matrix a, double rank_tol = 1e-12);

  const Matrix& a() const { return a_; }
  const PseudoInverse& pinv() const { return pinv_; }
  const Matrix& null_projector() const { return null_proj_; }
  std::size_t rows() const { return static_cast<std::size_t>(a_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(a_.cols()); }

  /// Throws InfeasibleConstraintError when A v = b has no solution.
  void check_consistent(const Vector& b, double tol = 1e-8) const;

 private:
  Matrix a_;
  PseudoInverse pinv_;
  Matrix null_proj_;
};

/// {v : A v = b}.
class Hyperplane {
 public:
  Hyperplane(Matrix a, Vector b, double rank_tol = 1e-12);
  Hyperplane(std::shared_ptr<const AffineOperator> op, Vector b);

  const Matrix& a() const { return op_->a(); }
  const Vector& b() const { return b_; }
  const AffineOperator& op() const { return *op_; }

  /// s - A+(A s - b), computed as (I - A+A) s + A+ b.
  Vector project(const Vector& s) const;
  double residual(const Vector& v) const;

 private:
  std::shared_ptr<const AffineOperator> op_;
  Vector b_;
  Vector offset_;
};

Vector project_hyperplane(const Hyperplane& h, const Vector& s);

/**
 * Shared (context-independent) part of a lifted set
 *
 *   C = { y : E y = b_eq, y in K1, G y - b_aux in K2 },
 *
 * represented on the augmented variable (y, y_aux) in R^n with
 *
 *   A = [[E, 0], [G, -I]],  b = [b_eq; b_aux],  K = K1 x K2.
 */
struct LiftedStructure {
  Matrix eq;   // E, m_eq x d
  Matrix aux;  // G, (n - d) x d
  FactorSet k1;
  FactorSet k2;
  std::shared_ptr<const AffineOperator> op;
  std::size_t d = 0;
  std::size_t n = 0;
};

/// Residual of y against a structure with an explicit right-hand side b.
double feasibility_residual(const LiftedStructure& s, const Eigen::Ref<const Vector>& b,
                            const Eigen::Ref<const Vector>& y);

class LiftedConstraint {
 public:
  LiftedConstraint() = default;
  LiftedConstraint(std::shared_ptr<const LiftedStructure> structure, Vector b);

  /// Assembles A, its pseudo-inverse and checks b for consistency.
  static LiftedConstraint build(Matrix eq, Vector b_eq, Matrix aux, Vector b_aux, FactorSet k1,
                                FactorSet k2);

  /// Same structure with a new right-hand side (checked for consistency).
  LiftedConstraint with_rhs(Vector b) const;

  std::size_t d() const { return s_->d; }
  std::size_t n() const { return s_->n; }
  std::size_t eq_rows() const { return static_cast<std::size_t>(s_->eq.rows()); }
  const Matrix& a() const { return s_->op->a(); }
  const Vector& b() const { return b_; }
  const FactorSet& k1() const { return s_->k1; }
  const FactorSet& k2() const { return s_->k2; }
  const LiftedStructure& structure() const { return *s_; }
  std::shared_ptr<const LiftedStructure> structure_ptr() const { return s_; }
  const AffineOperator& op() const { return *s_->op; }

  Vector b_eq() const { return b_.head(static_cast<Eigen::Index>(eq_rows())); }
  Vector b_aux() const { return b_.tail(static_cast<Eigen::Index>(n() - d())); }

  Hyperplane hyperplane() const { return Hyperplane(s_->op, b_); }

  /// max(||E y - b_eq||_inf, dist(y, K1), dist(G y - b_aux, K2)).
  double feasibility_residual(const Eigen::Ref<const Vector>& y) const;

  /// Lifts y to (y, G y - b_aux).
  Vector lift(const Vector& y) const;

 private:
  std::shared_ptr<const LiftedStructure> s_;
  Vector b_;
};

/// Polytope {E y = q, l <= C y <= u} with optional bounds on y placed in K1.
LiftedConstraint lift_polytope(const Matrix& eq, const Vector& q, const Matrix& ineq,
                               const Vector& lower, const Vector& upper,
                               const std::optional<BoxSet>& bounds = std::nullopt);

/// {(y1, y2) : A y1 + y2 = b, y2 in SOC}, no auxiliary block.
LiftedConstraint lift_soc_program(const Matrix& a, const Vector& b, std::size_t d1,
                                  std::size_t d2);

struct PolytopePart {
  Matrix eq;
  Vector q;
  Matrix ineq;
  Vector lower;
  Vector upper;
};

/// ||F y + c|| <= f'y + e.
struct SocPart {
  Matrix f_mat;
  Vector c;
  Vector f;
  double e = 0.0;
};

LiftedConstraint lift_intersection(std::size_t d, const std::vector<PolytopePart>& polytopes,
                                   const std::vector<SocPart>& cones,
                                   const std::optional<BoxSet>& bounds = std::nullopt);

/// Context-dependent right-hand side b(x) = R x + b0.
struct AffineRhs {
  Matrix r;
  Vector b0;

  Vector operator()(const Vector& x) const { return r * x + b0; }
  Matrix batch(const Matrix& xs) const;
};

}  // namespace pinet

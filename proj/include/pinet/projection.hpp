#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "pinet/constraint_sets.hpp"
#include "pinet/equilibration.hpp"
#include "pinet/tensor.hpp"

namespace pinet {

struct DRSettings {
  double sigma = 1.0;
  double omega = 1.7;
  int n_iter_fwd = 100;
  int n_iter_test = 100;
  int n_iter_bwd = 25;

  /// Throws pinet::Error on out-of-range values.
  void validate() const;
};

struct ProjectionResult {
  Vector y;        // first block of z_K, mapped back to original coordinates
  Vector s_final;  // governing iterate s_K (scaled coordinates when equilibrated)
  Vector z;        // z_K
  double cv = 0.0;
  int iterations = 0;
  double fixed_point_residual = 0.0;  // ||t_K - z_K||
  bool stalled = false;
};

struct BatchProjection {
  Matrix y;        // d x B
  Matrix s_final;  // n x B
  Matrix z;        // n x B
  Vector cv;       // B
  int iterations = 0;
  Vector fixed_point_residual;  // B
  std::vector<bool> stalled;
};

/**
 * Everything the fixed-point iteration needs, in the coordinates it runs in.
 *
 * The plain geometry iterates on (A, b, K); the equilibrated geometry on
 * (D_r A D_c, D_r b, D_c^-1 K) and weights the distance term by d_c on the
 * first block. Constraint violations are always measured on the original
 * structure.
 */
class DRGeometry {
 public:
  static DRGeometry plain(const LiftedConstraint& lc);
  static DRGeometry equilibrated(const EquilibratedConstraint& ec);

  std::size_t d() const { return d_; }
  std::size_t n() const { return n_; }
  std::size_t m() const { return op_->rows(); }
  bool is_equilibrated() const { return row_scale_.size() > 0; }

  const AffineOperator& op() const { return *op_; }
  const FactorSet& k1() const { return k1_; }
  const FactorSet& k2() const { return k2_; }
  const LiftedStructure& original() const { return *original_; }
  /// Weights on the first block: d_c,1 when equilibrated, ones otherwise.
  const Vector& weights() const { return weights_; }

  /// A+ (D_r b) for every column of b, the constant part of the affine step.
  Matrix affine_offsets(const Matrix& b) const;
  /// Maps iterate coordinates of the first block back to y.
  Matrix to_output(const Matrix& z1) const;

 private:
  std::shared_ptr<const AffineOperator> op_;
  std::shared_ptr<const LiftedStructure> original_;
  std::shared_ptr<const void> owner_;
  FactorSet k1_;
  FactorSet k2_;
  Vector weights_;
  Vector row_scale_;
  std::size_t d_ = 0;
  std::size_t n_ = 0;
};

/// Runs K iterations on a batch; b holds one right-hand side per column
/// (a single column is broadcast). K <= 0 means settings.n_iter_fwd.
BatchProjection dr_project_batch(const DRGeometry& g, const Matrix& b, const Matrix& y_raw,
                                 const DRSettings& settings, int iterations = -1,
                                 const Matrix* s0 = nullptr);

ProjectionResult dr_project(const LiftedConstraint& lc, const Vector& y_raw,
                            const DRSettings& settings = {}, int iterations = -1,
                            const std::optional<Vector>& s0 = std::nullopt);

ProjectionResult dr_project_equilibrated(const EquilibratedConstraint& ec, const Vector& y_raw,
                                         const DRSettings& settings = {}, int iterations = -1,
                                         const std::optional<Vector>& s0 = std::nullopt);

double feasibility_residual(const LiftedConstraint& lc, const Vector& y);

/// (K, cv) at each checkpoint from a single run. Checkpoints must ascend.
std::vector<std::pair<int, double>> convergence_profile(const LiftedConstraint& lc,
                                                        const Vector& y_raw,
                                                        const DRSettings& settings,
                                                        const std::vector<int>& checkpoints);

std::vector<std::pair<int, double>> convergence_profile(const DRGeometry& g, const Vector& b,
                                                        const Vector& y_raw,
                                                        const DRSettings& settings,
                                                        const std::vector<int>& checkpoints);

}  // namespace pinet

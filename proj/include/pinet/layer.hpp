#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pinet/autodiff.hpp"
#include "pinet/constraint_sets.hpp"
#include "pinet/equilibration.hpp"
#include "pinet/implicit_backward.hpp"
#include "pinet/problems.hpp"
#include "pinet/projection.hpp"
#include "pinet/tensor.hpp"

namespace pinet {

/// Fully connected ReLU network; the last layer is linear.
struct Backbone {
  std::vector<std::size_t> dims;   // input, hidden..., output
  std::vector<RowMatrix> weights;  // dims[k] x dims[k + 1]
  std::vector<Vector> biases;      // dims[k + 1]
  // Fixed input standardization (x - shift) / scale; empty means identity.
  Vector input_shift;
  Vector input_scale;

  /// Uniform He-style weights U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)), zero biases.
  static Backbone he_uniform(std::vector<std::size_t> dims, std::uint64_t seed);
  /// All weights and biases zero.
  static Backbone zeros(std::vector<std::size_t> dims);

  std::size_t input_dim() const { return dims.front(); }
  std::size_t output_dim() const { return dims.back(); }
  std::size_t layers() const { return weights.size(); }
  std::size_t parameter_count() const;

  /// Per-column mean and standard deviation of the rows of x (constant
  /// columns keep scale 1).
  void fit_standardization(const RowMatrix& x);
  RowMatrix standardize(const RowMatrix& x) const;

  /// Rows of x are samples; standardization is applied first.
  RowMatrix forward(const RowMatrix& x) const;

  /// Parameters as tape leaves, ordered W0, b0, W1, b1, ...
  std::vector<ad::Var> bind(ad::Tape& tape) const;
  /// Taped pass on an already standardized input.
  ad::Var forward(const std::vector<ad::Var>& params, const ad::Var& x) const;
};

enum class TrainMode { ProjectAtTrain, InferenceOnly, SoftPenalty };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

/// Affine context-to-constraint map shared by every sample: a fixed lifted
/// structure with right-hand side b(x).
struct ConstraintSource {
  LiftedConstraint nominal;
  AffineRhs rhs;

  static ConstraintSource from_dataset(const Dataset& ds) { return {ds.constraint, ds.rhs}; }
  /// One right-hand side per row of x, returned column-wise (m x B).
  Matrix rhs_columns(const RowMatrix& x) const;
  LiftedConstraint at(const Vector& x) const { return nominal.with_rhs(rhs(x)); }
};

struct LayerOptions {
  DRSettings settings;
  KrylovSettings krylov;  // max_iter is taken from settings.n_iter_bwd
  TrainMode mode = TrainMode::ProjectAtTrain;
  bool equilibrate = false;
  RuizOptions ruiz;
  double penalty_weight = 1.0;  // soft-penalty weight
  // Move y_raw onto {E y = b_eq} before the splitting iterations. The
  // projection onto C is unchanged (C lies inside that subspace), but raw
  // outputs that drift along the equality normals no longer slow DR down.
  bool reduce_equalities = true;
};

/// Counters filled by the projection's backward pass.
struct LayerStats {
  std::size_t backward_columns = 0;
  std::size_t converged_columns = 0;
  double max_krylov_residual = 0.0;
  std::size_t forward_calls = 0;

  double converged_fraction() const {
    return backward_columns ? static_cast<double>(converged_columns) /
                                  static_cast<double>(backward_columns)
                            : 1.0;
  }
  void reset() { *this = LayerStats{}; }
};

struct LayerOutput {
  RowMatrix y;      // B x d
  RowMatrix y_raw;  // B x d
  Matrix s_final;   // n x B, empty when nothing was projected
  Vector cv;        // B
};

/**
 * Backbone, optional affine completion head and the projection layer.
 *
 * In project-at-train mode the projection sits on the tape as a custom op
 * whose backward pass is the implicit-function VJP. The other modes train
 * the bare network (optionally with a violation penalty) and only project
 * at prediction time, or never in the soft-penalty case.
 */
class PinetModel {
 public:
  PinetModel(Backbone backbone, ConstraintSource source, LayerOptions options,
             std::optional<AffineCompletion> completion = std::nullopt);

  const Backbone& backbone() const { return backbone_; }
  Backbone& backbone() { return backbone_; }
  const LayerOptions& options() const { return options_; }
  LayerOptions& mutable_options() { return options_; }
  const ConstraintSource& source() const { return source_; }
  const std::optional<AffineCompletion>& completion() const { return completion_; }
  const DRGeometry& geometry() const { return geometry_; }
  const std::optional<Scaling>& scaling() const { return scaling_; }
  std::size_t output_dim() const { return source_.nominal.d(); }

  /// y - E^+(E y - b_eq) for each column (no-op without equality rows or
  /// when reduce_equalities is off).
  Matrix reduce_to_equalities(const Matrix& y_cols, const Matrix& b_cols) const;

  /// Backbone output passed through the completion head (B x d).
  RowMatrix raw_output(const RowMatrix& x) const;

  /// Projects every row of y_raw for contexts x with K iterations (K <= 0:
  /// n_iter_fwd).
  LayerOutput project(const RowMatrix& x, const RowMatrix& y_raw, int iterations = -1) const;

  /// Raw output followed by the projection with K iterations.
  LayerOutput forward(const RowMatrix& x, int iterations = -1) const;

  /// Test-time output: projected with n_iter_test unless the mode is
  /// soft-penalty, which returns the raw output.
  RowMatrix predict(const RowMatrix& x) const;

  /// Records the network on `tape`. The returned Var is the layer output
  /// used by the training loss: projected in project-at-train mode, raw
  /// otherwise.
  ad::Var forward_taped(ad::Tape& tape, const std::vector<ad::Var>& params, const RowMatrix& x,
                        LayerStats* stats = nullptr) const;

  /// Taped projection of a B x d input; exposed for gradient checks.
  ad::Var project_taped(const ad::Var& y_raw, const RowMatrix& x,
                        LayerStats* stats = nullptr) const;

  /// Per-sample max equality violation plus max inequality violation,
  /// differentiable (subgradient at the arg-max).
  ad::Var violation_penalty(const ad::Var& y, const RowMatrix& x) const;

  /// dL/dtheta for a given output cotangent dL/dy (B x d), ordered as in
  /// Backbone::bind.
  std::vector<Tensor> backward_step(const RowMatrix& x, const RowMatrix& dl_dy,
                                    LayerStats* stats = nullptr) const;

 private:
  Backbone backbone_;
  ConstraintSource source_;
  LayerOptions options_;
  std::optional<AffineCompletion> completion_;
  std::optional<Scaling> scaling_;
  DRGeometry geometry_;
  Matrix eq_;       // E
  Matrix eq_pinv_;  // E^+, empty when the reduction is off
  QpRows penalty_rows_;  // rows at the nominal right-hand side
  std::size_t penalty_eq_rows_ = 0;
  bool penalty_ready_ = false;
};

}  // namespace pinet

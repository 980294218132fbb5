#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pinet/autodiff.hpp"
#include "pinet/constraint_sets.hpp"
#include "pinet/qp_oracle.hpp"
#include "pinet/tensor.hpp"

namespace pinet {

enum class ObjectiveKind { Quadratic, QuadraticSin, MpcTracking, ContextLinear, EffortPreference };

std::string to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& s);

/// Fleet objective pieces for the trajectory family.
struct TrajectoryObjective {
  std::size_t vehicles = 1;
  std::size_t horizon = 10;  // T, positions at t = 0..T
  double lambda = 0.0;       // preference weight
  double nu = 0.0;           // coverage weight
  double p_min = -2.5;
  double p_max = 2.5;
  int image_size = 16;
  double amplitude = 200.0;
  double kernel_sigma = 1.0;
  // Column offsets of the p and a blocks in y.
  std::size_t p_offset = 0;
  std::size_t a_offset = 0;
};

/**
 * J(y; x) for one of the benchmark families.
 *
 *   Quadratic / MpcTracking:  y'diag(Q)y + q'y + c
 *   QuadraticSin:             y'diag(Q)y + q'sin(y)
 *   ContextLinear:            (L x)'y
 *   EffortPreference:         sum ||a||^2 + lambda sum psi(p) + nu coverage(p)
 */
struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::Quadratic;
  Vector q_diag;
  Vector q_lin;
  double constant = 0.0;
  Matrix context_map;  // L, d x p
  TrajectoryObjective traj;

  bool convex() const {
    if (kind == ObjectiveKind::EffortPreference) return traj.lambda == 0.0 && traj.nu == 0.0;
    return kind != ObjectiveKind::QuadraticSin;
  }
};

double evaluate_objective(const ObjectiveSpec& spec, const Vector& y, const Vector& x);
Vector objective_gradient(const ObjectiveSpec& spec, const Vector& y, const Vector& x);

/// Per-sample objective values (shape B) of a taped batch y (B x d) with
/// contexts x (B x p).
ad::Var objective_batch(const ObjectiveSpec& spec, const ad::Var& y, const RowMatrix& x);

/// Scaled Ishigami potential psi(w) with z = 1.25 w.
double ishigami_potential(double w1, double w2);

/// Affine pre-projection map y_raw = M u + F x + c applied to a backbone output u.
struct AffineCompletion {
  Matrix input_map;    // d x r
  Matrix context_map;  // d x p
  Vector bias;         // d
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  /// Proportional to 7952 / 1024 / 1024.
  static SplitSizes proportional(std::size_t total);
  std::size_t total() const { return train + val + test; }
};

struct Dataset {
  std::string recipe;
  std::uint64_t seed = 0;
  nlohmann::json params;

  LiftedConstraint constraint;  // nominal right-hand side
  AffineRhs rhs;                // b(x)
  ObjectiveSpec objective;
  std::optional<AffineCompletion> completion;

  Matrix contexts;  // p x N, one instance per column
  Matrix y_star;    // d x N (empty when no oracle was run)
  Vector j_star;    // N
  std::vector<std::uint8_t> oracle_ok;

  std::vector<std::size_t> train, val, test;

  std::size_t size() const { return static_cast<std::size_t>(contexts.cols()); }
  std::size_t context_dim() const { return static_cast<std::size_t>(contexts.rows()); }
  bool has_oracle() const { return y_star.size() > 0; }

  /// Right-hand side for instance i.
  Vector rhs_for(std::size_t i) const { return rhs(contexts.col(static_cast<Eigen::Index>(i))); }
  LiftedConstraint constraint_for(std::size_t i) const { return constraint.with_rhs(rhs_for(i)); }
  /// Columns of b(x) for a list of instances.
  Matrix rhs_batch(const std::vector<std::size_t>& ids) const;
  Matrix context_batch(const std::vector<std::size_t>& ids) const;
};

/// Deterministic per-instance stream seeded by (seed, index).
std::mt19937_64 instance_rng(std::uint64_t seed, std::uint64_t index);

struct Dc3Options {
  bool nonconvex = false;
  double context_scale = 1.0;  // std of the pre-image y0
  // Log-spaced spread, in decades, applied to the columns of E and C and to
  // the rows of C. Zero leaves the family as drawn.
  double scale_decades = 0.0;
  bool solve_oracle = true;
  std::optional<SplitSizes> splits;
};

Dataset gen_dc3_family(std::size_t d, std::size_t n_eq, std::size_t n_ineq, std::size_t n_samples,
                       std::uint64_t seed, const Dc3Options& options = {});

struct MpcOptions {
  bool solve_oracle = true;
  std::optional<SplitSizes> splits;
};

Dataset gen_toy_mpc(std::size_t n_samples, std::size_t horizon, std::uint64_t seed,
                    const MpcOptions& options = {});

Dataset gen_soc_family(std::size_t d1, std::size_t d2, std::size_t batch, std::uint64_t seed,
                       std::optional<SplitSizes> splits = std::nullopt);

struct TrajectoryOptions {
  double lambda = 0.0;
  double nu = 0.0;
  double step = 0.5;
  double v_max = 3.0;
  double a_max = 3.0;
  double jerk_max = 20.0;
  bool solve_oracle = true;
  std::optional<SplitSizes> splits;
};

Dataset gen_trajectory_family(std::size_t n_vehicles, std::size_t horizon, std::size_t n_samples,
                              std::uint64_t seed, const TrajectoryOptions& options = {});

struct OracleSolution {
  Vector y_star;
  double objective = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  bool best_found = false;  // non-convex objective: best of several local solves
};

OracleSolution oracle_solve(const Dataset& ds, std::size_t index, const QpSettings& settings = {});

/// Solves every instance and stores y*, J* and the success flag.
void attach_oracle(Dataset& ds, const QpSettings& settings = {});

/// KKT residual of the stored optimum of a second-order-cone instance:
/// max of primal infeasibility, dual cone violation, complementarity and
/// stationarity.
double soc_certificate(const Dataset& ds, std::size_t index);

/// Pre-image of the trajectory completion head: the control block of y.
Vector trajectory_controls(const Dataset& ds, const Vector& y);

/// max(0, (J - J*) / |J*|).
double relative_suboptimality(double j, double j_star);

}  // namespace pinet

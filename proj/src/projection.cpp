#include "pinet/projection.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pinet/errors.hpp"

namespace pinet {

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

// One DR sweep body shared by the batch solver and the profiler. Returns the
// z of this iteration and updates s in place.
struct Stepper {
  const DRGeometry& g;
  const Matrix& offsets;  // A+ b, n x B
  Matrix y_term;          // 2 sigma w y_raw / (1 + 2 sigma w^2), d x B
  Vector damp;            // 1 / (1 + 2 sigma w^2), d
  double omega;
  Matrix z, t;

  Stepper(const DRGeometry& geom, const Matrix& off, const Matrix& y_raw, const DRSettings& st)
      : g(geom), offsets(off), omega(st.omega) {
    const Vector& w = g.weights();
    damp = (1.0 + 2.0 * st.sigma * w.array().square()).inverse().matrix();
    y_term = (2.0 * st.sigma * w.cwiseProduct(damp)).asDiagonal() * y_raw;
  }

  void step(Matrix& s) {
    const Eigen::Index d = idx(g.d());
    const Eigen::Index n = idx(g.n());
    z.noalias() = g.op().null_projector() * s;
    z += offsets;
    t = 2.0 * z - s;
    t.topRows(d) = damp.asDiagonal() * t.topRows(d);
    t.topRows(d) += y_term;
    g.k1().project_inplace(t.topRows(d));
    if (n > d) g.k2().project_inplace(t.bottomRows(n - d));
    s += omega * (t - z);
  }
};

Matrix broadcast_rhs(const Matrix& b, Eigen::Index cols) {
  if (b.cols() == cols) return b;
  if (b.cols() == 1) return b.replicate(1, cols);
  throw DimensionError("dr_project: right-hand side batch does not match y_raw batch");
}

}  // namespace

void DRSettings::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error("DRSettings: sigma must be positive");
  if (!(omega > 0.0 && omega < 2.0)) throw Error("DRSettings: omega must lie in (0, 2)");
  if (n_iter_fwd < 1 || n_iter_test < 1 || n_iter_bwd < 1) {
    throw Error("DRSettings: iteration counts must be at least 1");
  }
}

DRGeometry DRGeometry::plain(const LiftedConstraint& lc) {
  DRGeometry g;
  g.original_ = lc.structure_ptr();
  g.op_ = g.original_->op;
  g.k1_ = lc.k1();
  g.k2_ = lc.k2();
  g.d_ = lc.d();
  g.n_ = lc.n();
  g.weights_ = Vector::Ones(idx(g.d_));
  return g;
}

DRGeometry DRGeometry::equilibrated(const EquilibratedConstraint& ec) {
  DRGeometry g;
  const auto& s = ec.structure();
  g.original_ = s.original;
  g.owner_ = ec.structure_ptr();
  g.op_ = s.op;
  g.k1_ = s.k1;
  g.k2_ = s.k2;
  g.d_ = ec.d();
  g.n_ = ec.n();
  g.weights_ = ec.d_c1();
  g.row_scale_ = s.scaling.d_r;
  return g;
}

Matrix DRGeometry::affine_offsets(const Matrix& b) const {
  if (b.rows() != op_->a().rows()) throw DimensionError("affine_offsets: rhs length mismatch");
  if (b.rows() == 0) return Matrix::Zero(idx(n_), b.cols());
  if (is_equilibrated()) return op_->pinv().matrix() * (row_scale_.asDiagonal() * b);
  return op_->pinv().matrix() * b;
}

Matrix DRGeometry::to_output(const Matrix& z1) const { return weights_.asDiagonal() * z1; }

BatchProjection dr_project_batch(const DRGeometry& g, const Matrix& b, const Matrix& y_raw,
                                 const DRSettings& settings, int iterations, const Matrix* s0) {
  settings.validate();
  const int k_total = iterations > 0 ? iterations : settings.n_iter_fwd;
  const Eigen::Index d = idx(g.d());
  const Eigen::Index n = idx(g.n());
  const Eigen::Index batch = y_raw.cols();
  if (y_raw.rows() != d) {
    throw DimensionError("dr_project: y_raw has " + std::to_string(y_raw.rows()) +
                         " rows, expected " + std::to_string(d));
  }
  if (!y_raw.allFinite()) throw NumericalFailure("dr_project: y_raw is not finite", 0);
  const Matrix rhs = broadcast_rhs(b, batch);
  const Matrix offsets = g.affine_offsets(rhs);

  Matrix s = Matrix::Zero(n, batch);
  if (s0) {
    if (s0->rows() != n || s0->cols() != batch) throw DimensionError("dr_project: s0 shape mismatch");
    if (!s0->allFinite()) throw NumericalFailure("dr_project: s0 is not finite", 0);
    s = *s0;
  }

  Stepper stepper(g, offsets, y_raw, settings);
  Vector mid_residual = Vector::Zero(batch);
  const int mid = k_total / 2;
  for (int k = 1; k <= k_total; ++k) {
    stepper.step(s);
    if (!s.allFinite()) {
      throw NumericalFailure("dr_project: iterate became non-finite at iteration " +
                                 std::to_string(k),
                             k);
    }
    if (k == mid) mid_residual = (stepper.t - stepper.z).colwise().norm().transpose();
  }

  BatchProjection out;
  out.iterations = k_total;
  out.s_final = std::move(s);
  out.z = stepper.z;
  out.y = g.to_output(out.z.topRows(d));
  out.fixed_point_residual = (stepper.t - stepper.z).colwise().norm().transpose();
  out.cv.resize(batch);
  out.stalled.assign(static_cast<std::size_t>(batch), false);
  for (Eigen::Index j = 0; j < batch; ++j) {
    out.cv(j) = feasibility_residual(g.original(), rhs.col(j), out.y.col(j));
    const double r = out.fixed_point_residual(j);
    out.stalled[static_cast<std::size_t>(j)] =
        mid > 0 && r > 1e-6 && r > 0.99 * mid_residual(j);
  }
  return out;
}

namespace {

ProjectionResult single(const DRGeometry& g, const Vector& b, const Vector& y_raw,
                        const DRSettings& settings, int iterations,
                        const std::optional<Vector>& s0) {
  Matrix s0m;
  if (s0) s0m = *s0;
  BatchProjection bp = dr_project_batch(g, b, y_raw, settings, iterations, s0 ? &s0m : nullptr);
  ProjectionResult r;
  r.y = bp.y.col(0);
  r.s_final = bp.s_final.col(0);
  r.z = bp.z.col(0);
  r.cv = bp.cv(0);
  r.iterations = bp.iterations;
  r.fixed_point_residual = bp.fixed_point_residual(0);
  r.stalled = bp.stalled[0];
  return r;
}

}  // namespace

ProjectionResult dr_project(const LiftedConstraint& lc, const Vector& y_raw,
                            const DRSettings& settings, int iterations,
                            const std::optional<Vector>& s0) {
  return single(DRGeometry::plain(lc), lc.b(), y_raw, settings, iterations, s0);
}

ProjectionResult dr_project_equilibrated(const EquilibratedConstraint& ec, const Vector& y_raw,
                                         const DRSettings& settings, int iterations,
                                         const std::optional<Vector>& s0) {
  return single(DRGeometry::equilibrated(ec), ec.original().b(), y_raw, settings, iterations,
                s0);
}

double feasibility_residual(const LiftedConstraint& lc, const Vector& y) {
  return lc.feasibility_residual(y);
}

std::vector<std::pair<int, double>> convergence_profile(const DRGeometry& g, const Vector& b,
                                                        const Vector& y_raw,
                                                        const DRSettings& settings,
                                                        const std::vector<int>& checkpoints) {
  settings.validate();
  if (!std::is_sorted(checkpoints.begin(), checkpoints.end()) ||
      (!checkpoints.empty() && checkpoints.front() < 1)) {
    throw Error("convergence_profile: checkpoints must be positive and ascending");
  }
  if (y_raw.size() != idx(g.d())) throw DimensionError("convergence_profile: y_raw length");
  const Matrix offsets = g.affine_offsets(b);
  Matrix s = Matrix::Zero(idx(g.n()), 1);
  Stepper stepper(g, offsets, y_raw, settings);
  std::vector<std::pair<int, double>> out;
  int k = 0;
  for (int target : checkpoints) {
    while (k < target) {
      stepper.step(s);
      ++k;
      if (!s.allFinite()) throw NumericalFailure("convergence_profile: non-finite iterate", k);
    }
    const Vector y = g.to_output(stepper.z.topRows(idx(g.d())));
    out.emplace_back(target, feasibility_residual(g.original(), b, y));
  }
  return out;
}

std::vector<std::pair<int, double>> convergence_profile(const LiftedConstraint& lc,
                                                        const Vector& y_raw,
                                                        const DRSettings& settings,
                                                        const std::vector<int>& checkpoints) {
  return convergence_profile(DRGeometry::plain(lc), lc.b(), y_raw, settings, checkpoints);
}

}  // namespace pinet

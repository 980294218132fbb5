#include "pinet/equilibration.hpp"

#include <cmath>
#include <string>

#include "pinet/errors.hpp"

namespace pinet {

namespace {

bool balanced(const Vector& norms, double tol) {
  if (norms.size() == 0) return true;
  return 1.0 - norms.minCoeff() / norms.maxCoeff() < tol;
}

void require_nonzero(const Vector& norms, const char* what) {
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) {
      throw NumericalFailure(std::string("ruiz_equilibrate: zero or non-finite ") + what + " " +
                             std::to_string(i));
    }
  }
}

}  // namespace

Scaling Scaling::identity(const Matrix& a) {
  Scaling s;
  s.d_r = Vector::Ones(a.rows());
  s.d_c = Vector::Ones(a.cols());
  s.a_scaled = a;
  s.converged = true;
  return s;
}

Scaling ruiz_equilibrate(const Matrix& a, const RuizOptions& options) {
  if (options.max_iter < 1) throw Error("ruiz_equilibrate: max_iter must be positive");
  Scaling s = Scaling::identity(a);
  s.converged = false;
  require_nonzero(a.rowwise().norm(), "row");
  require_nonzero(a.colwise().norm().transpose(), "column");

  for (int k = 1; k <= options.max_iter; ++k) {
    if (options.mode == RuizMode::GaussSeidel) {
      const Vector r = s.a_scaled.rowwise().norm().cwiseSqrt().cwiseInverse();
      s.d_r = r.cwiseProduct(s.d_r);
      s.a_scaled = r.asDiagonal() * s.a_scaled;
      const Vector c = s.a_scaled.colwise().norm().transpose().cwiseSqrt().cwiseInverse();
      s.d_c = s.d_c.cwiseProduct(c);
      s.a_scaled = s.a_scaled * c.asDiagonal();
    } else {
      const Vector r = s.a_scaled.rowwise().norm().cwiseSqrt().cwiseInverse();
      const Vector c = s.a_scaled.colwise().norm().transpose().cwiseSqrt().cwiseInverse();
      s.d_r = r.cwiseProduct(s.d_r);
      s.d_c = s.d_c.cwiseProduct(c);
      s.a_scaled = r.asDiagonal() * s.a_scaled * c.asDiagonal();
    }
    s.iterations = k;
    const Vector rn = s.a_scaled.rowwise().norm();
    const Vector cn = s.a_scaled.colwise().norm().transpose();
    if (balanced(rn, options.tol) && balanced(cn, options.tol)) {
      s.converged = true;
      break;
    }
  }
  return s;
}

EquilibratedConstraint::EquilibratedConstraint(std::shared_ptr<const EquilibratedStructure> s,
                                               LiftedConstraint lc)
    : s_(std::move(s)), lc_(std::move(lc)) {}

EquilibratedConstraint EquilibratedConstraint::with_rhs(Vector b) const {
  return EquilibratedConstraint(s_, lc_.with_rhs(std::move(b)));
}

EquilibratedConstraint rescale_constraint(const LiftedConstraint& lc, const Scaling& scaling) {
  if (!lc.k1().all_box_or_free() || !lc.k2().all_box_or_free()) {
    throw InfeasibleConstraintError(
        "equilibration supports box and free factors only; disable it for this constraint");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(lc.n());
  const Eigen::Index d = static_cast<Eigen::Index>(lc.d());
  if (scaling.d_c.size() != n || scaling.d_r.size() != lc.a().rows()) {
    throw DimensionError("rescale_constraint: scaling does not match the constraint");
  }
  if (!(scaling.d_c.array() > 0.0).all() || !(scaling.d_r.array() > 0.0).all() ||
      !scaling.d_c.allFinite() || !scaling.d_r.allFinite()) {
    throw NumericalFailure("rescale_constraint: scalings must be positive and finite");
  }
  auto s = std::make_shared<EquilibratedStructure>();
  s->original = lc.structure_ptr();
  s->scaling = scaling;
  s->scaling.a_scaled = scaling.d_r.asDiagonal() * lc.a() * scaling.d_c.asDiagonal();
  s->op = std::make_shared<const AffineOperator>(s->scaling.a_scaled);
  const Vector inv = scaling.d_c.cwiseInverse();
  s->k1 = lc.k1().scaled_bounds(inv.head(d));
  s->k2 = lc.k2().scaled_bounds(inv.tail(n - d));
  return EquilibratedConstraint(std::move(s), lc);
}

EquilibratedConstraint equilibrate(const LiftedConstraint& lc, const RuizOptions& options) {
  return rescale_constraint(lc, ruiz_equilibrate(lc.a(), options));
}

EquilibratedConstraint ScalingCache::get(const LiftedConstraint& lc) {
  const LiftedStructure* key = &lc.structure();
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return EquilibratedConstraint(it->second, lc);
  }
  EquilibratedConstraint ec = equilibrate(lc, options_);
  std::lock_guard<std::mutex> lock(mutex_);
  cache_.emplace(key, ec.structure_ptr());
  return ec;
}

std::size_t ScalingCache::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.size();
}

}  // namespace pinet

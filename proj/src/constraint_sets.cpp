#include "pinet/constraint_sets.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <type_traits>

#include "pinet/errors.hpp"

namespace pinet {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

void check_box(const BoxSet& box) {
  if (box.lower.size() != box.upper.size()) {
    throw DimensionError("box: lower and upper bounds differ in length");
  }
  for (Eigen::Index i = 0; i < box.lower.size(); ++i) {
    if (std::isnan(box.lower(i)) || std::isnan(box.upper(i))) {
      throw InfeasibleConstraintError("box: NaN bound");
    }
    if (box.lower(i) > box.upper(i)) {
      throw InfeasibleConstraintError("box: lower bound exceeds upper bound at index " +
                                      std::to_string(i));
    }
  }
}

void soc_jacobian_apply(const Eigen::Ref<const Vector>& at, Eigen::Ref<Vector> x) {
  const Eigen::Index m = at.size() - 1;
  const double t = at(m);
  const double nv = at.head(m).norm();
  if (nv <= t) return;
  if (nv <= -t) {
    x.setZero();
    return;
  }
  const Vector vhat = at.head(m) / nv;
  const double alpha = 0.5 * (t + nv);
  const double xv_dot = vhat.dot(x.head(m));
  const double xt = x(m);
  const double a = alpha / nv;
  x.head(m) = a * x.head(m) + ((0.5 - a) * xv_dot + 0.5 * xt) * vhat;
  x(m) = 0.5 * xv_dot + 0.5 * xt;
}

void simplex_jacobian_apply(const Vector& out, Eigen::Ref<Vector> x) {
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (out(i) > 0.0) {
      sum += x(i);
      ++count;
    }
  }
  const double mean = count ? sum / count : 0.0;
  for (Eigen::Index i = 0; i < out.size(); ++i) x(i) = out(i) > 0.0 ? x(i) - mean : 0.0;
}

void l1_jacobian_apply(const Eigen::Ref<const Vector>& at, double radius, Eigen::Ref<Vector> x) {
  if (at.lpNorm<1>() <= radius) return;
  const Vector out = project_l1_ball(at, radius);
  double dot = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (out(i) != 0.0) {
      dot += (out(i) > 0.0 ? 1.0 : -1.0) * x(i);
      ++count;
    }
  }
  const double shift = count ? dot / count : 0.0;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (out(i) == 0.0) {
      x(i) = 0.0;
    } else {
      x(i) -= (out(i) > 0.0 ? 1.0 : -1.0) * shift;
    }
  }
}

}  // namespace

std::size_t factor_dim(const Factor& f) {
  return std::visit(Overloaded{[](const FreeSpace& s) { return s.dim; },
                               [](const BoxSet& s) { return static_cast<std::size_t>(s.lower.size()); },
                               [](const SecondOrderConeSet& s) { return s.dim; },
                               [](const SimplexSet& s) { return s.dim; },
                               [](const L1BallSet& s) { return s.dim; }},
                    f);
}

Vector project_box(const BoxSet& box, const Vector& s) {
  if (s.size() != box.lower.size()) throw DimensionError("project_box: length mismatch");
  return s.cwiseMax(box.lower).cwiseMin(box.upper);
}

Vector project_soc(const Vector& s) {
  if (s.size() < 2) throw DimensionError("project_soc: cone dimension must be at least 2");
  const Eigen::Index m = s.size() - 1;
  const double t = s(m);
  const double nv = s.head(m).norm();
  if (nv <= t) return s;
  if (nv <= -t) return Vector::Zero(s.size());
  const double alpha = 0.5 * (t + nv);
  Vector out(s.size());
  out.head(m) = (alpha / nv) * s.head(m);
  out(m) = alpha;
  return out;
}

Vector project_simplex(const Vector& s, double radius) {
  if (!(radius > 0.0)) throw InfeasibleConstraintError("project_simplex: radius must be positive");
  std::vector<double> u(s.data(), s.data() + s.size());
  std::stable_sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double candidate = (cumsum - radius) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) theta = candidate;
  }
  return (s.array() - theta).cwiseMax(0.0).matrix();
}

Vector project_l1_ball(const Vector& s, double radius) {
  if (radius < 0.0) throw InfeasibleConstraintError("project_l1_ball: negative radius");
  if (s.lpNorm<1>() <= radius) return s;
  if (radius == 0.0) return Vector::Zero(s.size());
  const Vector w = project_simplex(s.cwiseAbs(), radius);
  Vector out(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) out(i) = s(i) < 0.0 ? -w(i) : w(i);
  return out;
}

Vector project_factor(const Factor& f, const Vector& s) {
  if (static_cast<std::size_t>(s.size()) != factor_dim(f)) {
    throw DimensionError("project_factor: length mismatch");
  }
  return std::visit(Overloaded{[&](const FreeSpace&) { return s; },
                               [&](const BoxSet& b) { return project_box(b, s); },
                               [&](const SecondOrderConeSet&) { return project_soc(s); },
                               [&](const SimplexSet& k) { return project_simplex(s, k.radius); },
                               [&](const L1BallSet& k) { return project_l1_ball(s, k.radius); }},
                    f);
}

FactorSet::FactorSet(std::vector<Factor> factors) {
  for (auto& f : factors) append(std::move(f));
}

FactorSet FactorSet::free(std::size_t dim) {
  FactorSet k;
  if (dim) k.append(FreeSpace{dim});
  return k;
}

FactorSet FactorSet::box(Vector lower, Vector upper) {
  FactorSet k;
  if (lower.size()) k.append(BoxSet{std::move(lower), std::move(upper)});
  return k;
}

void FactorSet::append(Factor f) {
  if (const auto* b = std::get_if<BoxSet>(&f)) check_box(*b);
  if (const auto* c = std::get_if<SecondOrderConeSet>(&f); c && c->dim < 2) {
    throw DimensionError("second-order cone needs dimension >= 2");
  }
  if (const auto* p = std::get_if<SimplexSet>(&f); p && !(p->radius > 0.0)) {
    throw InfeasibleConstraintError("simplex radius must be positive");
  }
  if (const auto* p = std::get_if<L1BallSet>(&f); p && p->radius < 0.0) {
    throw InfeasibleConstraintError("l1 ball radius must be nonnegative");
  }
  offsets_.push_back(dim_);
  dim_ += factor_dim(f);
  factors_.push_back(std::move(f));
}

Vector FactorSet::project(const Vector& s) const {
  if (static_cast<std::size_t>(s.size()) != dim_) {
    throw DimensionError("FactorSet::project: expected length " + std::to_string(dim_) +
                         ", got " + std::to_string(s.size()));
  }
  Vector out = s;
  project_inplace(Eigen::Map<Matrix>(out.data(), out.size(), 1));
  return out;
}

void FactorSet::project_inplace(Eigen::Ref<Matrix> s) const {
  if (static_cast<std::size_t>(s.rows()) != dim_) throw DimensionError("FactorSet: span mismatch");
  const Eigen::Index cols = s.cols();
  for (std::size_t k = 0; k < factors_.size(); ++k) {
    const Eigen::Index off = idx(offsets_[k]);
    const Eigen::Index len = idx(factor_dim(factors_[k]));
    auto block = s.middleRows(off, len);
    std::visit(Overloaded{[&](const FreeSpace&) {},
                          [&](const BoxSet& b) {
                            for (Eigen::Index j = 0; j < cols; ++j) {
                              block.col(j) = block.col(j).cwiseMax(b.lower).cwiseMin(b.upper);
                            }
                          },
                          [&](const SecondOrderConeSet&) {
                            for (Eigen::Index j = 0; j < cols; ++j) {
                              block.col(j) = project_soc(block.col(j));
                            }
                          },
                          [&](const SimplexSet& p) {
                            for (Eigen::Index j = 0; j < cols; ++j) {
                              block.col(j) = project_simplex(block.col(j), p.radius);
                            }
                          },
                          [&](const L1BallSet& p) {
                            for (Eigen::Index j = 0; j < cols; ++j) {
                              block.col(j) = project_l1_ball(block.col(j), p.radius);
                            }
                          }},
               factors_[k]);
  }
}

void FactorSet::jacobian_apply_inplace(const Eigen::Ref<const Matrix>& at,
                                       Eigen::Ref<Matrix> v) const {
  if (static_cast<std::size_t>(at.rows()) != dim_ || at.rows() != v.rows() ||
      at.cols() != v.cols()) {
    throw DimensionError("FactorSet::jacobian_apply_inplace: shape mismatch");
  }
  const Eigen::Index cols = v.cols();
  for (std::size_t k = 0; k < factors_.size(); ++k) {
    const Eigen::Index off = idx(offsets_[k]);
    const Eigen::Index len = idx(factor_dim(factors_[k]));
    std::visit(
        Overloaded{[&](const FreeSpace&) {},
                   [&](const BoxSet& b) {
                     for (Eigen::Index j = 0; j < cols; ++j) {
                       for (Eigen::Index i = 0; i < len; ++i) {
                         const double a = at(off + i, j);
                         if (a < b.lower(i) || a > b.upper(i)) v(off + i, j) = 0.0;
                       }
                     }
                   },
                   [&](const SecondOrderConeSet&) {
                     for (Eigen::Index j = 0; j < cols; ++j) {
                       Vector x = v.col(j).segment(off, len);
                       soc_jacobian_apply(at.col(j).segment(off, len), x);
                       v.col(j).segment(off, len) = x;
                     }
                   },
                   [&](const SimplexSet& p) {
                     for (Eigen::Index j = 0; j < cols; ++j) {
                       const Vector out = project_simplex(at.col(j).segment(off, len), p.radius);
                       Vector x = v.col(j).segment(off, len);
                       simplex_jacobian_apply(out, x);
                       v.col(j).segment(off, len) = x;
                     }
                   },
                   [&](const L1BallSet& p) {
                     for (Eigen::Index j = 0; j < cols; ++j) {
                       Vector x = v.col(j).segment(off, len);
                       l1_jacobian_apply(at.col(j).segment(off, len), p.radius, x);
                       v.col(j).segment(off, len) = x;
                     }
                   }},
        factors_[k]);
  }
}

double FactorSet::distance(const Eigen::Ref<const Vector>& y) const {
  if (static_cast<std::size_t>(y.size()) != dim_) throw DimensionError("FactorSet: span mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < factors_.size(); ++k) {
    const Eigen::Index off = idx(offsets_[k]);
    const Eigen::Index len = idx(factor_dim(factors_[k]));
    const Vector seg = y.segment(off, len);
    double dist = 0.0;
    if (const auto* b = std::get_if<BoxSet>(&factors_[k])) {
      for (Eigen::Index i = 0; i < len; ++i) {
        dist = std::max({dist, seg(i) - b->upper(i), b->lower(i) - seg(i)});
      }
    } else if (!std::holds_alternative<FreeSpace>(factors_[k])) {
      dist = (seg - project_factor(factors_[k], seg)).norm();
    }
    worst = std::max(worst, dist);
  }
  return worst;
}

bool FactorSet::all_box_or_free() const {
  return std::all_of(factors_.begin(), factors_.end(), [](const Factor& f) {
    return std::holds_alternative<BoxSet>(f) || std::holds_alternative<FreeSpace>(f);
  });
}

FactorSet FactorSet::scaled_bounds(const Vector& factor) const {
  if (static_cast<std::size_t>(factor.size()) != dim_) {
    throw DimensionError("FactorSet::scaled_bounds: length mismatch");
  }
  FactorSet out;
  for (std::size_t k = 0; k < factors_.size(); ++k) {
    const Eigen::Index off = idx(offsets_[k]);
    if (const auto* b = std::get_if<BoxSet>(&factors_[k])) {
      const Eigen::Index len = b->lower.size();
      const Vector f = factor.segment(off, len);
      out.append(BoxSet{b->lower.cwiseProduct(f), b->upper.cwiseProduct(f)});
    } else if (std::holds_alternative<FreeSpace>(factors_[k])) {
      out.append(factors_[k]);
    } else {
      throw InfeasibleConstraintError(
          "bound scaling is only defined for box and free factors");
    }
  }
  return out;
}

AffineOperator::AffineOperator(Matrix a, double rank_tol) : a_(std::move(a)), pinv_(a_, rank_tol) {
  null_proj_ = Matrix::Identity(a_.cols(), a_.cols()) - pinv_.row_space_projector();
  // Symmetrize to remove rounding asymmetry; the backward pass relies on it.
  null_proj_ = 0.5 * (null_proj_ + null_proj_.transpose()).eval();
}

void AffineOperator::check_consistent(const Vector& b, double tol) const {
  if (b.size() != a_.rows()) throw DimensionError("hyperplane: right-hand side length mismatch");
  if (!b.allFinite()) throw InfeasibleConstraintError("hyperplane: non-finite right-hand side");
  if (b.size() == 0) return;
  const Vector v = pinv_.apply(b);
  const double resid = (a_ * v - b).lpNorm<Eigen::Infinity>();
  const double scale = std::max(1.0, b.lpNorm<Eigen::Infinity>());
  if (resid > tol * scale) {
    throw InfeasibleConstraintError("hyperplane: A v = b is inconsistent (residual " +
                                    std::to_string(resid) + ")");
  }
}

Hyperplane::Hyperplane(Matrix a, Vector b, double rank_tol)
    : Hyperplane(std::make_shared<const AffineOperator>(std::move(a), rank_tol), std::move(b)) {}

Hyperplane::Hyperplane(std::shared_ptr<const AffineOperator> op, Vector b)
    : op_(std::move(op)), b_(std::move(b)) {
  op_->check_consistent(b_);
  offset_ = op_->pinv().apply(b_);
}

Vector Hyperplane::project(const Vector& s) const {
  if (static_cast<std::size_t>(s.size()) != op_->cols()) {
    throw DimensionError("project_hyperplane: length mismatch");
  }
  return op_->null_projector() * s + offset_;
}

double Hyperplane::residual(const Vector& v) const {
  if (b_.size() == 0) return 0.0;
  return (op_->a() * v - b_).lpNorm<Eigen::Infinity>();
}

Vector project_hyperplane(const Hyperplane& h, const Vector& s) { return h.project(s); }

LiftedConstraint::LiftedConstraint(std::shared_ptr<const LiftedStructure> structure, Vector b)
    : s_(std::move(structure)), b_(std::move(b)) {
  s_->op->check_consistent(b_);
}

LiftedConstraint LiftedConstraint::build(Matrix eq, Vector b_eq, Matrix aux, Vector b_aux,
                                         FactorSet k1, FactorSet k2) {
  const Eigen::Index d = static_cast<Eigen::Index>(k1.dim());
  const Eigen::Index n_aux = static_cast<Eigen::Index>(k2.dim());
  if (eq.rows() == 0) eq.resize(0, d);
  if (aux.rows() == 0) aux.resize(0, d);
  if (eq.cols() != d || aux.cols() != d) {
    throw DimensionError("lifted constraint: matrix column count differs from K1 dimension");
  }
  if (aux.rows() != n_aux || b_aux.size() != n_aux) {
    throw DimensionError("lifted constraint: auxiliary block does not match K2 dimension");
  }
  if (b_eq.size() != eq.rows()) throw DimensionError("lifted constraint: b_eq length mismatch");

  const Eigen::Index m = eq.rows() + n_aux;
  const Eigen::Index n = d + n_aux;
  Matrix a = Matrix::Zero(m, n);
  a.topLeftCorner(eq.rows(), d) = eq;
  a.bottomLeftCorner(n_aux, d) = aux;
  a.bottomRightCorner(n_aux, n_aux) = -Matrix::Identity(n_aux, n_aux);

  auto s = std::make_shared<LiftedStructure>();
  s->eq = std::move(eq);
  s->aux = std::move(aux);
  s->k1 = std::move(k1);
  s->k2 = std::move(k2);
  s->op = std::make_shared<const AffineOperator>(std::move(a));
  s->d = static_cast<std::size_t>(d);
  s->n = static_cast<std::size_t>(n);
  Vector b(m);
  b << b_eq, b_aux;
  return LiftedConstraint(std::move(s), std::move(b));
}

LiftedConstraint LiftedConstraint::with_rhs(Vector b) const { return LiftedConstraint(s_, std::move(b)); }

double feasibility_residual(const LiftedStructure& s, const Eigen::Ref<const Vector>& b,
                            const Eigen::Ref<const Vector>& y) {
  if (static_cast<std::size_t>(y.size()) != s.d) {
    throw DimensionError("feasibility_residual: expected length " + std::to_string(s.d));
  }
  const Eigen::Index m_eq = s.eq.rows();
  double cv = 0.0;
  if (m_eq > 0) cv = (s.eq * y - b.head(m_eq)).lpNorm<Eigen::Infinity>();
  cv = std::max(cv, s.k1.distance(y));
  if (s.n > s.d) cv = std::max(cv, s.k2.distance(s.aux * y - b.tail(s.aux.rows())));
  return cv;
}

double LiftedConstraint::feasibility_residual(const Eigen::Ref<const Vector>& y) const {
  return pinet::feasibility_residual(*s_, b_, y);
}

Vector LiftedConstraint::lift(const Vector& y) const {
  Vector out(static_cast<Eigen::Index>(n()));
  out << y, s_->aux * y - b_aux();
  return out;
}

LiftedConstraint lift_polytope(const Matrix& eq, const Vector& q, const Matrix& ineq,
                               const Vector& lower, const Vector& upper,
                               const std::optional<BoxSet>& bounds) {
  Eigen::Index d = eq.cols();
  if (eq.rows() == 0) d = ineq.cols();
  if (bounds) d = std::max(d, bounds->lower.size());
  if ((eq.rows() && eq.cols() != d) || (ineq.rows() && ineq.cols() != d) ||
      (bounds && bounds->lower.size() != d)) {
    throw DimensionError("lift_polytope: inconsistent decision dimension");
  }
  if (q.size() != eq.rows()) throw DimensionError("lift_polytope: q length mismatch");
  if (lower.size() != ineq.rows() || upper.size() != ineq.rows()) {
    throw DimensionError("lift_polytope: inequality bound length mismatch");
  }
  FactorSet k1 = bounds ? FactorSet::box(bounds->lower, bounds->upper)
                        : FactorSet::free(static_cast<std::size_t>(d));
  FactorSet k2 = FactorSet::box(lower, upper);
  Matrix e = eq.rows() ? eq : Matrix(0, d);
  Matrix c = ineq.rows() ? ineq : Matrix(0, d);
  return LiftedConstraint::build(e, q, c, Vector::Zero(c.rows()), std::move(k1), std::move(k2));
}

LiftedConstraint lift_soc_program(const Matrix& a, const Vector& b, std::size_t d1,
                                  std::size_t d2) {
  if (a.rows() != idx(d2) || a.cols() != idx(d1) || b.size() != idx(d2)) {
    throw DimensionError("lift_soc_program: A must be d2 x d1 and b of length d2");
  }
  Matrix eq(idx(d2), idx(d1 + d2));
  eq << a, Matrix::Identity(idx(d2), idx(d2));
  FactorSet k1;
  if (d1) k1.append(FreeSpace{d1});
  k1.append(SecondOrderConeSet{d2});
  return LiftedConstraint::build(std::move(eq), b, Matrix(0, idx(d1 + d2)), Vector(0),
                                 std::move(k1), FactorSet());
}

LiftedConstraint lift_intersection(std::size_t d, const std::vector<PolytopePart>& polytopes,
                                   const std::vector<SocPart>& cones,
                                   const std::optional<BoxSet>& bounds) {
  const Eigen::Index dd = idx(d);
  Eigen::Index n_eq = 0, n_aux = 0;
  for (const auto& p : polytopes) {
    if ((p.eq.rows() && p.eq.cols() != dd) || (p.ineq.rows() && p.ineq.cols() != dd)) {
      throw DimensionError("lift_intersection: polytope part has wrong column count");
    }
    if (p.q.size() != p.eq.rows() || p.lower.size() != p.ineq.rows() ||
        p.upper.size() != p.ineq.rows()) {
      throw DimensionError("lift_intersection: polytope part vector length mismatch");
    }
    n_eq += p.eq.rows();
    n_aux += p.ineq.rows();
  }
  for (const auto& c : cones) {
    if (c.f_mat.cols() != dd || c.f.size() != dd || c.c.size() != c.f_mat.rows()) {
      throw DimensionError("lift_intersection: cone part dimension mismatch");
    }
    n_aux += c.f_mat.rows() + 1;
  }
  if (bounds && bounds->lower.size() != dd) throw DimensionError("lift_intersection: bounds length");

  Matrix eq(n_eq, dd), aux(n_aux, dd);
  Vector q(n_eq), b_aux(n_aux);
  FactorSet k2;
  Eigen::Index re = 0, ra = 0;
  for (const auto& p : polytopes) {
    eq.middleRows(re, p.eq.rows()) = p.eq;
    q.segment(re, p.eq.rows()) = p.q;
    re += p.eq.rows();
    if (p.ineq.rows()) {
      aux.middleRows(ra, p.ineq.rows()) = p.ineq;
      b_aux.segment(ra, p.ineq.rows()).setZero();
      ra += p.ineq.rows();
      k2.append(BoxSet{p.lower, p.upper});
    }
  }
  for (const auto& c : cones) {
    const Eigen::Index k = c.f_mat.rows();
    aux.middleRows(ra, k) = c.f_mat;
    b_aux.segment(ra, k) = -c.c;
    aux.row(ra + k) = c.f.transpose();
    b_aux(ra + k) = -c.e;
    ra += k + 1;
    k2.append(SecondOrderConeSet{static_cast<std::size_t>(k + 1)});
  }
  FactorSet k1 = bounds ? FactorSet::box(bounds->lower, bounds->upper) : FactorSet::free(d);
  return LiftedConstraint::build(std::move(eq), std::move(q), std::move(aux), std::move(b_aux),
                                 std::move(k1), std::move(k2));
}

Matrix AffineRhs::batch(const Matrix& xs) const {
  Matrix out = r * xs;
  out.colwise() += b0;
  return out;
}

}  // namespace pinet

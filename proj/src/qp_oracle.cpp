#include "pinet/qp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "pinet/errors.hpp"

namespace pinet {

namespace {

double inf_norm(const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

Vector row_rho(const Vector& l, const Vector& u, double rho) {
  Vector r(l.size());
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    if (!std::isfinite(l(i)) && !std::isfinite(u(i))) {
      r(i) = 1e-6;
    } else if (u(i) - l(i) < 1e-4) {
      r(i) = 1e3 * rho;
    } else {
      r(i) = rho;
    }
  }
  return r;
}

Eigen::LLT<Matrix> factor(const Matrix& p, const Matrix& a, const Vector& rho, double sigma) {
  Matrix k = p;
  k.diagonal().array() += sigma;
  k.noalias() += a.transpose() * rho.asDiagonal() * a;
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) throw NumericalFailure("qp: KKT factorization failed");
  return llt;
}

}  // namespace

std::pair<double, double> qp_residuals(const Matrix& p, const Matrix& a, const Vector& q,
                                       const Vector& l, const Vector& u, const Vector& x,
                                       const Vector& y) {
  const Vector ax = a * x;
  double prim = 0.0;
  for (Eigen::Index i = 0; i < ax.size(); ++i) {
    prim = std::max({prim, ax(i) - u(i), l(i) - ax(i)});
  }
  const double dual = inf_norm(p * x + q + a.transpose() * y);
  return {prim, dual};
}

AdmmQpSolver::AdmmQpSolver(Matrix p, Matrix a, QpSettings settings)
    : p_(std::move(p)), a_(std::move(a)), settings_(settings) {
  if (p_.rows() != p_.cols() || a_.cols() != p_.cols()) {
    throw DimensionError("qp: P must be square and A must share its column count");
  }
}

bool AdmmQpSolver::try_polish(const Vector& q, const Vector& l, const Vector& u,
                              const Vector& y_admm, const Vector& z_admm, QpResult& out) const {
  const Eigen::Index n = p_.rows();
  const Eigen::Index m = a_.rows();
  std::vector<Eigen::Index> active;
  std::vector<double> target;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (u(i) - l(i) < 1e-12) {
      active.push_back(i);
      target.push_back(u(i));
    } else if (z_admm(i) - l(i) < -y_admm(i)) {
      active.push_back(i);
      target.push_back(l(i));
    } else if (u(i) - z_admm(i) < y_admm(i)) {
      active.push_back(i);
      target.push_back(u(i));
    }
  }
  const Eigen::Index k = static_cast<Eigen::Index>(active.size());
  Matrix a_act(k, n);
  Vector b_act(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    a_act.row(j) = a_.row(active[static_cast<std::size_t>(j)]);
    b_act(j) = target[static_cast<std::size_t>(j)];
  }
  const double delta = 1e-9;
  Matrix kkt = Matrix::Zero(n + k, n + k);
  kkt.topLeftCorner(n, n) = p_;
  kkt.topRightCorner(n, k) = a_act.transpose();
  kkt.bottomLeftCorner(k, n) = a_act;
  Matrix kkt_reg = kkt;
  kkt_reg.topLeftCorner(n, n).diagonal().array() += delta;
  kkt_reg.bottomRightCorner(k, k).diagonal().array() -= delta;
  Eigen::PartialPivLU<Matrix> lu(kkt_reg);
  Vector rhs(n + k);
  rhs << -q, b_act;
  Vector sol = lu.solve(rhs);
  for (int ref = 0; ref < 5; ++ref) sol += lu.solve(rhs - kkt * sol);
  if (!sol.allFinite()) return false;

  Vector y = Vector::Zero(m);
  for (Eigen::Index j = 0; j < k; ++j) y(active[static_cast<std::size_t>(j)]) = sol(n + j);
  const Vector x = sol.head(n);
  // Multiplier signs must match the side of the bound they enforce.
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index i = active[static_cast<std::size_t>(j)];
    if (u(i) - l(i) < 1e-12) continue;
    const double tol = 1e-9 * std::max(1.0, inf_norm(y));
    if (target[static_cast<std::size_t>(j)] == l(i) && y(i) > tol) return false;
    if (target[static_cast<std::size_t>(j)] == u(i) && y(i) < -tol) return false;
  }
  const auto [prim, dual] = qp_residuals(p_, a_, q, l, u, x, y);
  if (prim <= out.primal_residual + 1e-14 || prim <= settings_.eps) {
    if (std::max(prim, dual) < std::max(out.primal_residual, out.dual_residual)) {
      out.x = x;
      out.y = y;
      out.primal_residual = prim;
      out.dual_residual = dual;
      out.polished = true;
      return true;
    }
  }
  return false;
}

QpResult AdmmQpSolver::solve(const Vector& q, const Vector& l, const Vector& u,
                             const QpResult* warm) const {
  const Eigen::Index n = p_.rows();
  const Eigen::Index m = a_.rows();
  if (q.size() != n || l.size() != m || u.size() != m) throw DimensionError("qp: vector length");
  for (Eigen::Index i = 0; i < m; ++i) {
    if (l(i) > u(i)) throw InfeasibleConstraintError("qp: lower bound exceeds upper bound");
  }
  const QpSettings& st = settings_;
  double rho_scalar = st.rho;
  Vector rho = row_rho(l, u, rho_scalar);
  Eigen::LLT<Matrix> llt = factor(p_, a_, rho, st.sigma);

  Vector x = Vector::Zero(n), z = Vector::Zero(m), y = Vector::Zero(m);
  if (warm && warm->x.size() == n && warm->y.size() == m) {
    x = warm->x;
    y = warm->y;
    z = (a_ * x).cwiseMax(l).cwiseMin(u);
  }

  QpResult out;
  out.primal_residual = kInf;
  out.dual_residual = kInf;
  auto scaled_ok = [&](const Vector& xc, const Vector& zc, const Vector& yc, double& prim,
                       double& dual) {
    const Vector ax = a_ * xc;
    const Vector px = p_ * xc;
    const Vector aty = a_.transpose() * yc;
    prim = inf_norm(ax - zc);
    dual = inf_norm(px + q + aty);
    const double ps = std::max({1.0, inf_norm(ax), inf_norm(zc)});
    const double ds = std::max({1.0, inf_norm(px), inf_norm(aty), inf_norm(q)});
    return std::pair<double, double>{ps, ds};
  };

  int it = 0;
  for (it = 1; it <= st.max_iter; ++it) {
    const Vector rhs = st.sigma * x - q + a_.transpose() * (rho.cwiseProduct(z) - y);
    const Vector x_tilde = llt.solve(rhs);
    const Vector z_tilde = a_ * x_tilde;
    const Vector x_next = st.alpha * x_tilde + (1.0 - st.alpha) * x;
    const Vector z_relax = st.alpha * z_tilde + (1.0 - st.alpha) * z;
    const Vector z_next = (z_relax + y.cwiseQuotient(rho)).cwiseMax(l).cwiseMin(u);
    y += rho.cwiseProduct(z_relax - z_next);
    x = x_next;
    z = z_next;
    if (!x.allFinite() || !y.allFinite()) throw NumericalFailure("qp: non-finite iterate", it);

    if (it % st.check_every != 0) continue;
    double prim = 0.0, dual = 0.0;
    const auto [ps, ds] = scaled_ok(x, z, y, prim, dual);
    const auto [pres, dres] = qp_residuals(p_, a_, q, l, u, x, y);
    if (std::max(pres, dres) < std::max(out.primal_residual, out.dual_residual)) {
      out.x = x;
      out.y = y;
      out.primal_residual = pres;
      out.dual_residual = dres;
    }
    if (prim <= st.eps * ps && dual <= st.eps * ds) {
      out.converged = true;
      break;
    }
    if (st.polish && prim <= 1e-4 * ps && dual <= 1e-4 * ds && it % (4 * st.check_every) == 0) {
      try_polish(q, l, u, y, z, out);
      if (out.polished && out.primal_residual <= st.eps * ps && out.dual_residual <= st.eps * ds) {
        out.converged = true;
        break;
      }
    }
    if (st.adaptive_rho) {
      const double ratio = std::sqrt((prim / ps) / std::max(dual / ds, 1e-300));
      const double new_rho = std::clamp(rho_scalar * ratio, 1e-6, 1e6);
      if (new_rho > 5.0 * rho_scalar || new_rho < 0.2 * rho_scalar) {
        rho_scalar = new_rho;
        rho = row_rho(l, u, rho_scalar);
        llt = factor(p_, a_, rho, st.sigma);
      }
    }
  }
  if (st.polish) try_polish(q, l, u, y, z, out);
  if (st.polish && !out.converged) {
    const double ps = std::max(1.0, inf_norm(a_ * out.x));
    const double ds = std::max({1.0, inf_norm(q), inf_norm(p_ * out.x)});
    out.converged = out.primal_residual <= st.eps * ps && out.dual_residual <= st.eps * ds;
  }
  out.iterations = std::min(it, st.max_iter);
  out.objective = 0.5 * out.x.dot(p_ * out.x) + q.dot(out.x);
  return out;
}

QpRows qp_rows(const LiftedConstraint& lc) {
  if (!lc.k1().all_box_or_free() || !lc.k2().all_box_or_free()) {
    throw InfeasibleConstraintError("qp_rows: only box and free factors are supported");
  }
  const auto& s = lc.structure();
  const Eigen::Index d = static_cast<Eigen::Index>(lc.d());
  const Eigen::Index m_eq = s.eq.rows();
  const Eigen::Index m_aux = s.aux.rows();

  auto bounds_of = [](const FactorSet& fs, Eigen::Index dim) {
    std::pair<Vector, Vector> lu{Vector::Constant(dim, -kInf), Vector::Constant(dim, kInf)};
    for (std::size_t f = 0; f < fs.factors().size(); ++f) {
      if (const auto* b = std::get_if<BoxSet>(&fs.factors()[f])) {
        const Eigen::Index off = static_cast<Eigen::Index>(fs.offsets()[f]);
        lu.first.segment(off, b->lower.size()) = b->lower;
        lu.second.segment(off, b->upper.size()) = b->upper;
      }
    }
    return lu;
  };
  const auto [k1_lo, k1_hi] = bounds_of(lc.k1(), d);
  const auto [k2_lo, k2_hi] = bounds_of(lc.k2(), m_aux);

  std::vector<Eigen::Index> bound_rows;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (std::isfinite(k1_lo(i)) || std::isfinite(k1_hi(i))) bound_rows.push_back(i);
  }
  const Eigen::Index nb = static_cast<Eigen::Index>(bound_rows.size());
  const Eigen::Index m = m_eq + m_aux + nb;
  QpRows r;
  r.a = Matrix::Zero(m, d);
  r.l.resize(m);
  r.u.resize(m);
  const Vector b_eq = lc.b_eq();
  const Vector b_aux = lc.b_aux();
  r.a.topRows(m_eq) = s.eq;
  r.l.head(m_eq) = b_eq;
  r.u.head(m_eq) = b_eq;
  r.a.middleRows(m_eq, m_aux) = s.aux;
  r.l.segment(m_eq, m_aux) = k2_lo + b_aux;
  r.u.segment(m_eq, m_aux) = k2_hi + b_aux;
  for (Eigen::Index j = 0; j < nb; ++j) {
    const Eigen::Index i = bound_rows[static_cast<std::size_t>(j)];
    r.a(m_eq + m_aux + j, i) = 1.0;
    r.l(m_eq + m_aux + j) = k1_lo(i);
    r.u(m_eq + m_aux + j) = k1_hi(i);
  }
  return r;
}

QpResult oracle_project(const LiftedConstraint& lc, const Vector& y_raw, const QpSettings& settings) {
  QpRows r = qp_rows(lc);
  const Eigen::Index d = static_cast<Eigen::Index>(lc.d());
  AdmmQpSolver solver(Matrix::Identity(d, d), std::move(r.a), settings);
  return solver.solve(-y_raw, r.l, r.u);
}

}  // namespace pinet

#pragma once

// Independent reference computations for the test suites. None of these
// call into the code paths they are used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline Matrix triple_loop_matmul(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

/// Central differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-6) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

/// Central-difference Jacobian (rows: outputs, cols: inputs).
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                          double h = 1e-6) {
  const Vector f0 = f(x);
  Matrix j(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    j.col(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return j;
}

inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

/// argmin over [lo, hi] of a unimodal function by ternary search.
inline double ternary_min(const std::function<double(double)>& f, double lo, double hi,
                          int iters = 200) {
  for (int k = 0; k < iters; ++k) {
    const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
    if (f(m1) < f(m2)) hi = m2;
    else lo = m1;
  }
  return 0.5 * (lo + hi);
}

/// Box projection coordinate by coordinate via ternary search on (y - s)^2.
inline Vector box_by_search(const Vector& s, const Vector& l, const Vector& u) {
  Vector out(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double lo = std::isfinite(l(i)) ? l(i) : s(i) - 1e3;
    const double hi = std::isfinite(u(i)) ? u(i) : s(i) + 1e3;
    out(i) = ternary_min([&](double y) { return (y - s(i)) * (y - s(i)); }, std::min(lo, hi), hi);
  }
  return out;
}

/// Closest point of the 3-d cone {||v|| <= t} (v in R^2) found by sweeping
/// directions: for each unit u the nearest point of the ray (r u, r), r >= 0,
/// is closed form, and the best ray over a fine angle grid wins. The apex and
/// the point itself (when inside) are also candidates.
inline Vector soc3_by_sweep(const Vector& s, int directions = 200000) {
  const double t = s(2);
  Vector best = Vector::Zero(3);
  double best_d = s.norm();
  if (std::hypot(s(0), s(1)) <= t) return s;
  for (int k = 0; k < directions; ++k) {
    const double th = 2 * std::numbers::pi * k / directions;
    const double ux = std::cos(th), uy = std::sin(th);
    const double r = std::max(0.0, (s(0) * ux + s(1) * uy + t) / 2);
    Vector p(3);
    p << r * ux, r * uy, r;
    const double d = (p - s).norm();
    if (d < best_d) {
      best_d = d;
      best = p;
    }
  }
  return best;
}

/// Simplex projection by enumerating every support pattern.
inline Vector simplex_by_enumeration(const Vector& s, double radius) {
  const int n = static_cast<int>(s.size());
  Vector best;
  double best_d = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < (1 << n); ++mask) {
    int k = 0;
    double sum = 0;
    for (int i = 0; i < n; ++i)
      if (mask & (1 << i)) {
        ++k;
        sum += s(i);
      }
    const double shift = (sum - radius) / k;
    Vector y = Vector::Zero(n);
    bool ok = true;
    for (int i = 0; i < n; ++i)
      if (mask & (1 << i)) {
        y(i) = s(i) - shift;
        if (y(i) < -1e-15) ok = false;
      }
    if (!ok) continue;
    const double d = (y - s).norm();
    if (d < best_d) {
      best_d = d;
      best = y;
    }
  }
  return best;
}

/// l1-ball projection through the simplex enumeration on |s|.
inline Vector l1_by_enumeration(const Vector& s, double radius) {
  if (s.lpNorm<1>() <= radius) return s;
  const Vector mag = simplex_by_enumeration(s.cwiseAbs(), radius);
  Vector out(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) out(i) = s(i) >= 0 ? mag(i) : -mag(i);
  return out;
}

/// Nearest grid point of a 2-d set given by a membership test.
inline Vector grid_project_2d(const std::function<bool(double, double)>& inside, const Vector& s,
                              double lo, double hi, double step) {
  Vector best(2);
  double best_d = std::numeric_limits<double>::infinity();
  for (double a = lo; a <= hi; a += step)
    for (double b = lo; b <= hi; b += step) {
      if (!inside(a, b)) continue;
      const double d = std::hypot(a - s(0), b - s(1));
      if (d < best_d) {
        best_d = d;
        best << a, b;
      }
    }
  return best;
}

/// Equality-constrained QP min y'diag(q)y + c'y s.t. E y = f by a direct
/// KKT solve.
inline Vector kkt_equality_qp(const Vector& q_diag, const Vector& c, const Matrix& e,
                              const Vector& f) {
  const Eigen::Index d = q_diag.size(), m = e.rows();
  Matrix k = Matrix::Zero(d + m, d + m);
  k.topLeftCorner(d, d) = (2 * q_diag).asDiagonal();
  k.topRightCorner(d, m) = e.transpose();
  k.bottomLeftCorner(m, d) = e;
  Vector rhs(d + m);
  rhs << -c, f;
  return k.fullPivLu().solve(rhs).head(d);
}

/// CV from the raw description {E y = q, l <= C y <= u, lb <= y <= ub}.
inline double raw_violation(const Matrix& e, const Vector& q, const Matrix& c, const Vector& l,
                            const Vector& u, const Vector& y, const Vector* lb = nullptr,
                            const Vector* ub = nullptr) {
  double v = 0;
  if (e.rows()) v = std::max(v, (e * y - q).cwiseAbs().maxCoeff());
  if (c.rows()) {
    const Vector cy = c * y;
    for (Eigen::Index i = 0; i < cy.size(); ++i) {
      v = std::max(v, cy(i) - u(i));
      v = std::max(v, l(i) - cy(i));
    }
  }
  if (lb)
    for (Eigen::Index i = 0; i < y.size(); ++i) v = std::max(v, (*lb)(i) - y(i));
  if (ub)
    for (Eigen::Index i = 0; i < y.size(); ++i) v = std::max(v, y(i) - (*ub)(i));
  return v;
}

/// Coefficient of determination of the least-squares line through (x, y).
inline double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0) return 1.0;
  return sxy * sxy / (sxx * syy);
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

}  // namespace oracle

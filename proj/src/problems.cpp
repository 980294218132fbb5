#include "pinet/problems.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include <Eigen/LU>

#include "pinet/errors.hpp"
#include "pinet/parallel.hpp"
#include "pinet/projection.hpp"

namespace pinet {

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

// Stream index reserved for data shared by a whole family.
constexpr std::uint64_t kFamilyStream = ~std::uint64_t{0};
// Offset between resampling attempts of one instance.
constexpr std::uint64_t kRetryStride = std::uint64_t{1} << 40;
constexpr int kStarts = 3;

double inf_norm(const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

Vector normal_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

Matrix normal_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = nd(rng);
  }
  return m;
}

Vector uniform_vector(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> ud(lo, hi);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = ud(rng);
  return v;
}

Matrix uniform_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo,
                      double hi) {
  std::uniform_real_distribution<double> ud(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = ud(rng);
  }
  return m;
}

void assign_splits(Dataset& ds, const std::optional<SplitSizes>& requested) {
  const std::size_t n = ds.size();
  SplitSizes s = requested ? *requested : SplitSizes::proportional(n);
  if (s.total() != n) throw Error("split sizes do not add up to the sample count");
  ds.train.clear();
  ds.val.clear();
  ds.test.clear();
  for (std::size_t i = 0; i < n; ++i) {
    if (i < s.train) {
      ds.train.push_back(i);
    } else if (i < s.train + s.val) {
      ds.val.push_back(i);
    } else {
      ds.test.push_back(i);
    }
  }
}

// ---------------------------------------------------------------------------
// Trajectory layout: positions and velocities at t = 0..T, accelerations at
// t = 0..T-1, ordered by time, then vehicle, then planar coordinate.

struct TrajLayout {
  std::size_t vehicles;
  std::size_t horizon;

  std::size_t pv_size() const { return (horizon + 1) * vehicles * 2; }
  std::size_t a_size() const { return horizon * vehicles * 2; }
  std::size_t dim() const { return 2 * pv_size() + a_size(); }
  Eigen::Index p(std::size_t t, std::size_t i, std::size_t c) const {
    return idx((t * vehicles + i) * 2 + c);
  }
  Eigen::Index v(std::size_t t, std::size_t i, std::size_t c) const {
    return idx(pv_size() + (t * vehicles + i) * 2 + c);
  }
  Eigen::Index a(std::size_t t, std::size_t i, std::size_t c) const {
    return idx(2 * pv_size() + (t * vehicles + i) * 2 + c);
  }
};

double ishigami_raw(double z1, double z2, double* g1, double* g2) {
  const double m = 0.5 * (z1 + z2);
  const double m3 = m * m * m;
  const double m4 = m3 * m;
  const double s1 = std::sin(z1), c1 = std::cos(z1);
  const double s2 = std::sin(z2), c2 = std::cos(z2);
  if (g1) *g1 = 0.05 * (c1 + 0.2 * m3 * s1 + 0.1 * m4 * c1);
  if (g2) *g2 = 0.05 * (14.0 * s2 * c2 + 0.2 * m3 * s1);
  return 0.05 * (s1 + 7.0 * s2 * s2 + 0.1 * m4 * s1);
}

double trajectory_objective(const TrajectoryObjective& t, const Vector& y, Vector* grad) {
  const TrajLayout lay{t.vehicles, t.horizon};
  if (y.size() != idx(lay.dim())) throw DimensionError("trajectory objective: length mismatch");
  if (grad) *grad = Vector::Zero(y.size());
  const Eigen::Index a0 = idx(t.a_offset);
  const Eigen::Index na = idx(lay.a_size());
  double j = y.segment(a0, na).squaredNorm();
  if (grad) grad->segment(a0, na) = 2.0 * y.segment(a0, na);

  const std::size_t pts = (t.horizon + 1) * t.vehicles;
  const Eigen::Index p0 = idx(t.p_offset);
  if (t.lambda != 0.0) {
    for (std::size_t k = 0; k < pts; ++k) {
      const Eigen::Index i = p0 + idx(2 * k);
      double g1 = 0.0, g2 = 0.0;
      j += t.lambda * ishigami_raw(1.25 * y(i), 1.25 * y(i + 1), &g1, &g2);
      if (grad) {
        (*grad)(i) += t.lambda * 1.25 * g1;
        (*grad)(i + 1) += t.lambda * 1.25 * g2;
      }
    }
  }
  if (t.nu != 0.0) {
    const int hw = t.image_size;
    const double span = t.p_max - t.p_min;
    const double inv_var = 1.0 / (t.kernel_sigma * t.kernel_sigma);
    const double norm = 1.0 / (255.0 * hw * hw);
    std::vector<double> uk(pts), vk(pts);
    for (std::size_t k = 0; k < pts; ++k) {
      const Eigen::Index i = p0 + idx(2 * k);
      uk[k] = (y(i) - t.p_min) / span * hw;
      vk[k] = hw - (y(i + 1) - t.p_min) / span * hw;
    }
    std::vector<double> g(pts);
    for (int r = 0; r < hw; ++r) {
      for (int c = 0; c < hw; ++c) {
        const double u = c + 0.5, v = r + 0.5;
        double s = 0.0;
        for (std::size_t k = 0; k < pts; ++k) {
          const double du = u - uk[k], dv = v - vk[k];
          g[k] = t.amplitude * std::exp(-0.5 * (du * du + dv * dv) * inv_var);
          s += g[k];
        }
        j -= t.nu * norm * std::min(s, 255.0);
        if (grad && s < 255.0) {
          for (std::size_t k = 0; k < pts; ++k) {
            const Eigen::Index i = p0 + idx(2 * k);
            // d/du_k of the kernel is g (u - u_k) / sigma^2.
            const double dgu = g[k] * (u - uk[k]) * inv_var;
            const double dgv = g[k] * (v - vk[k]) * inv_var;
            (*grad)(i) -= t.nu * norm * dgu * hw / span;
            (*grad)(i + 1) -= t.nu * norm * dgv * (-hw / span);
          }
        }
      }
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// Oracle pieces.

double rows_violation(const QpRows& r, const Vector& y) {
  const Vector ay = r.a * y;
  double v = 0.0;
  for (Eigen::Index i = 0; i < ay.size(); ++i) v = std::max({v, ay(i) - r.u(i), r.l(i) - ay(i)});
  return v;
}

struct SmoothObjective {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  std::function<Vector(const Vector&)> hessian_diag;  // empty when unavailable
};

// Newton iteration on the KKT system of a smooth objective restricted to the
// rows that are active at (y0, mult0). Accepted only when the result is
// feasible, its multipliers have the right signs and J did not increase.
bool newton_polish(const SmoothObjective& obj, const QpRows& rows, const Vector& y0,
                   const Vector& mult0, Vector& y_out, Vector& mult_out) {
  const Eigen::Index d = y0.size();
  const Eigen::Index m = rows.a.rows();
  const Vector z0 = rows.a * y0;
  std::vector<Eigen::Index> act;
  std::vector<double> target;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (rows.u(i) - rows.l(i) < 1e-12) {
      act.push_back(i);
      target.push_back(rows.u(i));
    } else if (z0(i) - rows.l(i) < -mult0(i)) {
      act.push_back(i);
      target.push_back(rows.l(i));
    } else if (rows.u(i) - z0(i) < mult0(i)) {
      act.push_back(i);
      target.push_back(rows.u(i));
    }
  }
  const Eigen::Index k = idx(act.size());
  Matrix aa(k, d);
  Vector ba(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    aa.row(j) = rows.a.row(act[static_cast<std::size_t>(j)]);
    ba(j) = target[static_cast<std::size_t>(j)];
  }
  Vector y = y0;
  Vector lam = Vector::Zero(k);
  bool done = false;
  for (int it = 0; it < 30 && !done; ++it) {
    Matrix kkt = Matrix::Zero(d + k, d + k);
    kkt.topLeftCorner(d, d).diagonal() = obj.hessian_diag(y);
    kkt.topRightCorner(d, k) = aa.transpose();
    kkt.bottomLeftCorner(k, d) = aa;
    Matrix reg = kkt;
    reg.topLeftCorner(d, d).diagonal().array() += 1e-12;
    reg.bottomRightCorner(k, k).diagonal().array() -= 1e-12;
    Eigen::PartialPivLU<Matrix> lu(reg);
    Vector rhs(d + k);
    rhs << -obj.gradient(y), ba - aa * y;
    Vector sol = lu.solve(rhs);
    for (int ref = 0; ref < 3; ++ref) sol += lu.solve(rhs - kkt * sol);
    if (!sol.allFinite()) return false;
    const Vector dy = sol.head(d);
    y += dy;
    lam = sol.tail(k);
    done = inf_norm(dy) <= 1e-14 * std::max(1.0, inf_norm(y));
  }
  if (rows_violation(rows, y) > 1e-10 * std::max(1.0, inf_norm(rows.a * y))) return false;
  Vector mult = Vector::Zero(m);
  const double tol = 1e-9 * std::max(1.0, inf_norm(lam));
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index i = act[static_cast<std::size_t>(j)];
    mult(i) = lam(j);
    if (rows.u(i) - rows.l(i) < 1e-12) continue;
    if (target[static_cast<std::size_t>(j)] == rows.l(i) && lam(j) > tol) return false;
    if (target[static_cast<std::size_t>(j)] == rows.u(i) && lam(j) < -tol) return false;
  }
  const double j0 = obj.value(y0);
  if (obj.value(y) > j0 + 1e-9 * std::max(1.0, std::abs(j0))) return false;
  y_out = y;
  mult_out = mult;
  return true;
}

OracleSolution finish(const SmoothObjective& obj, const QpRows& rows, const Vector& y,
                      const Vector& mult, double extra, double eps) {
  OracleSolution s;
  s.y_star = y;
  s.objective = obj.value(y) + extra;
  s.primal_residual = rows_violation(rows, y);
  s.dual_residual = inf_norm(obj.gradient(y) + rows.a.transpose() * mult);
  const double scale = std::max(1.0, inf_norm(obj.gradient(y)));
  s.converged = s.primal_residual <= 1e-9 && s.dual_residual <= eps * 1e2 * scale;
  return s;
}

// Majorization-minimization for y'diag(Q)y + q'sin(y): since |sin''| <= 1 the
// surrogate y'diag(Q + |q|/2)y + (q cos a - |q| a)'y majorizes J around a, so
// each step is a convex QP; the last active set is refined with Newton.
OracleSolution solve_quadratic_sin(const Vector& qd, const Vector& ql, const QpRows& rows,
                                   const std::vector<Vector>& starts, const QpSettings& st) {
  SmoothObjective obj;
  obj.value = [&](const Vector& y) {
    return y.dot(qd.cwiseProduct(y)) + ql.dot(y.array().sin().matrix());
  };
  obj.gradient = [&](const Vector& y) -> Vector {
    return 2.0 * qd.cwiseProduct(y) + ql.cwiseProduct(y.array().cos().matrix());
  };
  obj.hessian_diag = [&](const Vector& y) -> Vector {
    return 2.0 * qd - ql.cwiseProduct(y.array().sin().matrix());
  };
  const Vector qabs = ql.cwiseAbs();
  QpSettings inner = st;
  inner.eps = std::max(st.eps, 1e-10);
  inner.adaptive_rho = true;
  AdmmQpSolver solver(Matrix((2.0 * qd + qabs).asDiagonal()), rows.a, inner);

  OracleSolution best;
  best.objective = kInf;
  int total_iter = 0;
  for (const Vector& start : starts) {
    Vector a = start;
    QpResult warm;
    bool have_warm = false;
    Vector y = a, mult = Vector::Zero(rows.a.rows());
    for (int it = 0; it < 400; ++it) {
      const Vector lin = ql.cwiseProduct(a.array().cos().matrix()) - qabs.cwiseProduct(a);
      QpResult r = solver.solve(lin, rows.l, rows.u, have_warm ? &warm : nullptr);
      total_iter += r.iterations;
      warm = r;
      have_warm = true;
      const double step = inf_norm(r.x - a);
      a = r.x;
      y = r.x;
      // The QP multipliers belong to the surrogate, whose gradient matches J at a.
      mult = r.y;
      if (step < 1e-6 && it % 5 == 4) {
        Vector yp, mp;
        if (newton_polish(obj, rows, y, mult, yp, mp)) {
          y = yp;
          mult = mp;
          break;
        }
      }
      if (step < 1e-13) break;
    }
    OracleSolution cand = finish(obj, rows, y, mult, 0.0, st.eps);
    if (cand.primal_residual <= 1e-8 && cand.objective < best.objective) best = cand;
  }
  best.iterations = total_iter;
  best.best_found = true;
  return best;
}

// Projected gradient with backtracking; projections are exact QP solves.
OracleSolution solve_projected_gradient(const SmoothObjective& obj, const QpRows& rows,
                                        const std::vector<Vector>& starts,
                                        const QpSettings& st) {
  const Eigen::Index d = rows.a.cols();
  AdmmQpSolver proj(Matrix::Identity(d, d), rows.a, st);
  OracleSolution best;
  best.objective = kInf;
  int total = 0;
  for (const Vector& start : starts) {
    QpResult warm = proj.solve(-start, rows.l, rows.u);
    Vector y = warm.x;
    double jy = obj.value(y);
    double alpha = 0.25;
    double gap = kInf;
    for (int it = 0; it < 300; ++it) {
      const Vector g = obj.gradient(y);
      bool moved = false;
      for (int bt = 0; bt < 30; ++bt) {
        QpResult r = proj.solve(-(y - alpha * g), rows.l, rows.u, &warm);
        total += r.iterations;
        const double jn = obj.value(r.x);
        if (jn <= jy - 0.5 / alpha * (r.x - y).squaredNorm() + 1e-14 * std::abs(jy)) {
          gap = inf_norm(r.x - y) / alpha;
          warm = r;
          y = r.x;
          jy = jn;
          moved = true;
          alpha = std::min(1.0, 2.0 * alpha);
          break;
        }
        alpha *= 0.5;
      }
      if (!moved || gap < 1e-8) break;
    }
    // Multipliers of the last projection: x - v + A'm = 0 with v = y - alpha g.
    const Vector mult = warm.y / alpha;
    OracleSolution cand = finish(obj, rows, y, mult, 0.0, st.eps);
    cand.dual_residual = gap;
    cand.converged = cand.primal_residual <= 1e-9 && gap < 1e-6;
    if (cand.primal_residual <= 1e-8 && cand.objective < best.objective) best = cand;
  }
  best.iterations = total;
  best.best_found = true;
  return best;
}

std::vector<Vector> multistart_points(const Dataset& ds, std::size_t index, const QpRows& rows,
                                      const QpSettings& st, const Vector& first) {
  const Eigen::Index d = rows.a.cols();
  std::vector<Vector> starts{first};
  std::mt19937_64 rng = instance_rng(ds.seed ^ 0x5eed5eedULL, index);
  AdmmQpSolver proj(Matrix::Identity(d, d), rows.a, st);
  for (int k = 1; k < kStarts; ++k) {
    const Vector raw = normal_vector(rng, d);
    starts.push_back(proj.solve(-raw, rows.l, rows.u).x);
  }
  return starts;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::Quadratic: return "quadratic";
    case ObjectiveKind::QuadraticSin: return "quadratic_sin";
    case ObjectiveKind::MpcTracking: return "mpc_tracking";
    case ObjectiveKind::ContextLinear: return "context_linear";
    case ObjectiveKind::EffortPreference: return "effort_preference";
  }
  return "unknown";
}

ObjectiveKind objective_kind_from_string(const std::string& s) {
  for (ObjectiveKind k : {ObjectiveKind::Quadratic, ObjectiveKind::QuadraticSin,
                          ObjectiveKind::MpcTracking, ObjectiveKind::ContextLinear,
                          ObjectiveKind::EffortPreference}) {
    if (to_string(k) == s) return k;
  }
  throw FormatError("unknown objective kind '" + s + "'");
}

double ishigami_potential(double w1, double w2) {
  return ishigami_raw(1.25 * w1, 1.25 * w2, nullptr, nullptr);
}

double evaluate_objective(const ObjectiveSpec& spec, const Vector& y, const Vector& x) {
  switch (spec.kind) {
    case ObjectiveKind::Quadratic:
    case ObjectiveKind::MpcTracking:
      return y.dot(spec.q_diag.cwiseProduct(y)) + spec.q_lin.dot(y) + spec.constant;
    case ObjectiveKind::QuadraticSin:
      return y.dot(spec.q_diag.cwiseProduct(y)) + spec.q_lin.dot(y.array().sin().matrix()) +
             spec.constant;
    case ObjectiveKind::ContextLinear:
      return (spec.context_map * x).dot(y);
    case ObjectiveKind::EffortPreference:
      return trajectory_objective(spec.traj, y, nullptr);
  }
  throw Error("evaluate_objective: unknown kind");
}

Vector objective_gradient(const ObjectiveSpec& spec, const Vector& y, const Vector& x) {
  switch (spec.kind) {
    case ObjectiveKind::Quadratic:
    case ObjectiveKind::MpcTracking:
      return 2.0 * spec.q_diag.cwiseProduct(y) + spec.q_lin;
    case ObjectiveKind::QuadraticSin:
      return 2.0 * spec.q_diag.cwiseProduct(y) +
             spec.q_lin.cwiseProduct(y.array().cos().matrix());
    case ObjectiveKind::ContextLinear:
      return spec.context_map * x;
    case ObjectiveKind::EffortPreference: {
      Vector g;
      trajectory_objective(spec.traj, y, &g);
      return g;
    }
  }
  throw Error("objective_gradient: unknown kind");
}

ad::Var objective_batch(const ObjectiveSpec& spec, const ad::Var& y, const RowMatrix& x) {
  ad::Tape& tape = y.tape();
  switch (spec.kind) {
    case ObjectiveKind::Quadratic:
    case ObjectiveKind::MpcTracking:
    case ObjectiveKind::QuadraticSin: {
      const Tensor qd = Tensor::from_vector(spec.q_diag);
      const Tensor ql = Tensor::from_vector(spec.q_lin);
      ad::Var quad = ad::sum_cols(ad::mul_row(ad::square(y), qd));
      ad::Var lin_arg = spec.kind == ObjectiveKind::QuadraticSin ? ad::sin(y) : y;
      ad::Var lin = ad::sum_cols(ad::mul_row(lin_arg, ql));
      ad::Var j = ad::add(quad, lin);
      return spec.constant != 0.0 ? ad::add_scalar(j, spec.constant) : j;
    }
    case ObjectiveKind::ContextLinear: {
      const RowMatrix c = x * spec.context_map.transpose();
      return ad::sum_cols(ad::mul(y, tape.constant(Tensor::from_matrix(c))));
    }
    case ObjectiveKind::EffortPreference: {
      const ObjectiveSpec s = spec;
      const RowMatrix xs = x;
      ad::CustomOp op(
          [s, xs](std::span<const Tensor> in) -> std::pair<Tensor, std::any> {
            const auto ym = in[0].as_matrix();
            const std::size_t b = static_cast<std::size_t>(ym.rows());
            Tensor out({b});
            RowMatrix grads(ym.rows(), ym.cols());
            for (Eigen::Index r = 0; r < ym.rows(); ++r) {
              const Vector yr = ym.row(r).transpose();
              const Vector xr = xs.rows() ? Vector(xs.row(r).transpose()) : Vector();
              out[static_cast<std::size_t>(r)] = evaluate_objective(s, yr, xr);
              grads.row(r) = objective_gradient(s, yr, xr).transpose();
            }
            return {std::move(out), std::any(std::move(grads))};
          },
          [](const std::any& res, const Tensor& cot) -> std::vector<Tensor> {
            RowMatrix g = std::any_cast<const RowMatrix&>(res);
            for (Eigen::Index r = 0; r < g.rows(); ++r) g.row(r) *= cot[static_cast<std::size_t>(r)];
            return {Tensor::from_matrix(g)};
          });
      return op(y);
    }
  }
  throw Error("objective_batch: unknown kind");
}

SplitSizes SplitSizes::proportional(std::size_t total) {
  SplitSizes s;
  s.train = static_cast<std::size_t>(std::llround(static_cast<double>(total) * 7952.0 / 10000.0));
  s.val = static_cast<std::size_t>(std::llround(static_cast<double>(total) * 1024.0 / 10000.0));
  s.train = std::min(s.train, total);
  s.val = std::min(s.val, total - s.train);
  s.test = total - s.train - s.val;
  return s;
}

Matrix Dataset::rhs_batch(const std::vector<std::size_t>& ids) const {
  return rhs.batch(context_batch(ids));
}

Matrix Dataset::context_batch(const std::vector<std::size_t>& ids) const {
  Matrix out(contexts.rows(), idx(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) out.col(idx(k)) = contexts.col(idx(ids[k]));
  return out;
}

std::mt19937_64 instance_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// Generators.

Dataset gen_dc3_family(std::size_t d, std::size_t n_eq, std::size_t n_ineq,
                       std::size_t n_samples, std::uint64_t seed, const Dc3Options& options) {
  if (n_eq > d) throw Error("gen_dc3_family: more equalities than variables");
  if (d == 0 || n_eq == 0) throw Error("gen_dc3_family: need at least one variable and equality");
  const Eigen::Index dd = idx(d), me = idx(n_eq), mi = idx(n_ineq);

  std::mt19937_64 fam = instance_rng(seed, kFamilyStream);
  Dataset ds;
  ds.recipe = options.nonconvex ? "dc3_nonconvex" : "dc3";
  ds.seed = seed;
  ds.params = {{"d", d},
               {"n_eq", n_eq},
               {"n_ineq", n_ineq},
               {"n_samples", n_samples},
               {"nonconvex", options.nonconvex},
               {"context_scale", options.context_scale},
               {"scale_decades", options.scale_decades}};

  ds.objective.kind = options.nonconvex ? ObjectiveKind::QuadraticSin : ObjectiveKind::Quadratic;
  ds.objective.q_diag = uniform_vector(fam, dd, 0.1, 1.0);
  ds.objective.q_lin = uniform_vector(fam, dd, 0.0, 1.0);
  Matrix e = normal_matrix(fam, me, dd);
  Matrix c = normal_matrix(fam, mi, dd);
  if (options.scale_decades > 0.0) {
    auto spread = [&](Eigen::Index n) {
      Vector f(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double t = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
        f(i) = std::pow(10.0, options.scale_decades * (t - 0.5));
      }
      return f;
    };
    const Vector cols = spread(dd);
    e = e * cols.asDiagonal();
    c = spread(mi).asDiagonal() * c * cols.asDiagonal();
  }
  Vector u(mi);
  if (mi) u = (c * pinv(e).matrix()).cwiseAbs().rowwise().sum();

  ds.constraint = lift_polytope(e, Vector::Zero(me), c, Vector::Constant(mi, -kInf), u);
  ds.rhs.r = Matrix::Zero(me + mi, me);
  ds.rhs.r.topRows(me).setIdentity();
  ds.rhs.b0 = Vector::Zero(me + mi);

  // Contexts: a Gaussian point pulled into {C y <= u} by one projection,
  // pushed through E.
  ds.contexts.resize(me, idx(n_samples));
  QpSettings proj_st;
  proj_st.eps = 1e-9;
  std::optional<AdmmQpSolver> proj;
  if (mi) proj.emplace(Matrix::Identity(dd, dd), c, proj_st);
  const Vector lo = Vector::Constant(mi, -kInf);
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::mt19937_64 rng = instance_rng(seed, s);
    Vector y0 = normal_vector(rng, dd, options.context_scale);
    if (mi) {
      y0 = proj->solve(-y0, lo, u).x;
      // Pull strictly inside along the segment to 0, which is interior.
      const Vector cy = c * y0;
      double shrink = 1.0;
      for (Eigen::Index i = 0; i < mi; ++i) {
        if (cy(i) > u(i)) shrink = std::min(shrink, u(i) / cy(i));
      }
      y0 *= shrink;
    }
    ds.contexts.col(idx(s)) = e * y0;
  }
  assign_splits(ds, options.splits);
  if (options.solve_oracle) attach_oracle(ds);
  return ds;
}

Dataset gen_toy_mpc(std::size_t n_samples, std::size_t horizon, std::uint64_t seed,
                    const MpcOptions& options) {
  if (horizon == 0) throw Error("gen_toy_mpc: horizon must be at least 1");
  const std::size_t nx = 2 * (horizon + 1);
  const std::size_t d = nx + 2 * horizon;
  const Eigen::Index dd = idx(d);
  auto xi = [](std::size_t k, std::size_t c) { return idx(2 * k + c); };
  auto ui = [nx](std::size_t k, std::size_t c) { return idx(nx + 2 * k + c); };

  const Eigen::Index me = idx(2 + 2 * horizon);
  Matrix e = Matrix::Zero(me, dd);
  e(0, xi(0, 0)) = 1.0;
  e(1, xi(0, 1)) = 1.0;
  for (std::size_t k = 0; k < horizon; ++k) {
    for (std::size_t c = 0; c < 2; ++c) {
      const Eigen::Index r = idx(2 + 2 * k + c);
      e(r, xi(k + 1, c)) = 1.0;
      e(r, xi(k, c)) = -1.0;
      e(r, ui(k, c)) = -1.0;
    }
  }
  BoxSet box{Vector::Constant(dd, -10.0), Vector::Constant(dd, 10.0)};
  box.lower.tail(idx(2 * horizon)).setConstant(-1.0);
  box.upper.tail(idx(2 * horizon)).setConstant(1.0);

  Dataset ds;
  ds.recipe = "toy_mpc";
  ds.seed = seed;
  ds.params = {{"n_samples", n_samples}, {"horizon", horizon}};
  ds.constraint = lift_polytope(e, Vector::Zero(me), Matrix(0, dd), Vector(0), Vector(0), box);
  ds.rhs.r = Matrix::Zero(me, 2);
  ds.rhs.r.topRows(2).setIdentity();
  ds.rhs.b0 = Vector::Zero(me);

  const double target[2] = {3.0, -12.0};
  ObjectiveSpec& obj = ds.objective;
  obj.kind = ObjectiveKind::MpcTracking;
  obj.q_diag = Vector::Zero(dd);
  obj.q_lin = Vector::Zero(dd);
  obj.constant = 0.0;
  for (std::size_t k = 0; k < horizon; ++k) {
    for (std::size_t c = 0; c < 2; ++c) {
      obj.q_diag(xi(k, c)) = 1.0;
      obj.q_lin(xi(k, c)) = -2.0 * target[c];
      obj.constant += target[c] * target[c];
      obj.q_diag(ui(k, c)) = 1.0;
    }
  }

  ds.contexts.resize(2, idx(n_samples));
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::mt19937_64 rng = instance_rng(seed, s);
    ds.contexts.col(idx(s)) = uniform_vector(rng, 2, -10.0, 10.0);
  }
  assign_splits(ds, options.splits);
  if (options.solve_oracle) attach_oracle(ds);
  return ds;
}

Dataset gen_soc_family(std::size_t d1, std::size_t d2, std::size_t batch, std::uint64_t seed,
                       std::optional<SplitSizes> splits) {
  if (d2 < 2) throw Error("gen_soc_family: cone dimension must be at least 2");
  const Eigen::Index n1 = idx(d1), n2 = idx(d2), dd = n1 + n2;
  std::mt19937_64 fam = instance_rng(seed, kFamilyStream);
  const Matrix a = uniform_matrix(fam, n2, n1, -1.0, 1.0);

  Dataset ds;
  ds.recipe = "soc";
  ds.seed = seed;
  ds.params = {{"d1", d1}, {"d2", d2}, {"batch", batch}};
  ds.constraint = lift_soc_program(a, Vector::Zero(n2), d1, d2);
  // Context x = (b, c).
  ds.rhs.r = Matrix::Zero(n2, n2 + n1);
  ds.rhs.r.leftCols(n2).setIdentity();
  ds.rhs.b0 = Vector::Zero(n2);
  ds.objective.kind = ObjectiveKind::ContextLinear;
  ds.objective.context_map = Matrix::Zero(dd, n2 + n1);
  ds.objective.context_map.topRightCorner(n1, n1).setIdentity();

  ds.contexts.resize(n2 + n1, idx(batch));
  ds.y_star.resize(dd, idx(batch));
  ds.j_star.resize(idx(batch));
  ds.oracle_ok.assign(batch, 1);
  for (std::size_t s = 0; s < batch; ++s) {
    std::mt19937_64 rng = instance_rng(seed, s);
    const Vector z = uniform_vector(rng, n2, -1.0, 1.0);
    const Vector y1 = normal_vector(rng, n1);
    const Vector y2 = project_soc(z);
    const Vector b = a * y1 + y2;
    const Vector c = -a.transpose() * (y2 - z);
    ds.contexts.col(idx(s)) << b, c;
    ds.y_star.col(idx(s)) << y1, y2;
    ds.j_star(idx(s)) = c.dot(y1);
  }
  assign_splits(ds, splits);
  return ds;
}

Dataset gen_trajectory_family(std::size_t n_vehicles, std::size_t horizon, std::size_t n_samples,
                              std::uint64_t seed, const TrajectoryOptions& options) {
  if (n_vehicles == 0 || horizon < 2) throw Error("gen_trajectory_family: need vehicles and T >= 2");
  const TrajLayout lay{n_vehicles, horizon};
  const Eigen::Index dd = idx(lay.dim());
  const std::size_t nv = n_vehicles;
  const double h = options.step;

  // Equalities: p0 = start, pT = goal, v0 = vT = 0, then the dynamics.
  const Eigen::Index n_bnd = idx(8 * nv);
  const Eigen::Index n_dyn = idx(4 * nv * horizon);
  Matrix e = Matrix::Zero(n_bnd + n_dyn, dd);
  Matrix r = Matrix::Zero(n_bnd + n_dyn, idx(4 * nv));
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < nv; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      e(row, lay.p(0, i, c)) = 1.0;
      r(row, idx(2 * i + c)) = 1.0;
      ++row;
      e(row, lay.p(horizon, i, c)) = 1.0;
      r(row, idx(2 * nv + 2 * i + c)) = 1.0;
      ++row;
      e(row++, lay.v(0, i, c)) = 1.0;
      e(row++, lay.v(horizon, i, c)) = 1.0;
    }
  }
  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t i = 0; i < nv; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        e(row, lay.v(t + 1, i, c)) = 1.0;
        e(row, lay.v(t, i, c)) = -1.0;
        e(row, lay.a(t, i, c)) = -h;
        ++row;
        e(row, lay.p(t + 1, i, c)) = 1.0;
        e(row, lay.p(t, i, c)) = -1.0;
        e(row, lay.v(t, i, c)) = -h;
        e(row, lay.a(t, i, c)) = -0.5 * h * h;
        ++row;
      }
    }
  }
  // Jerk rows (a[t+1] - a[t]) / h.
  const Eigen::Index n_jerk = idx(2 * nv * (horizon - 1));
  Matrix jerk = Matrix::Zero(n_jerk, dd);
  row = 0;
  for (std::size_t t = 0; t + 1 < horizon; ++t) {
    for (std::size_t i = 0; i < nv; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        jerk(row, lay.a(t + 1, i, c)) = 1.0 / h;
        jerk(row, lay.a(t, i, c)) = -1.0 / h;
        ++row;
      }
    }
  }
  TrajectoryObjective tobj;
  tobj.vehicles = nv;
  tobj.horizon = horizon;
  tobj.lambda = options.lambda;
  tobj.nu = options.nu;
  tobj.p_offset = 0;
  tobj.a_offset = 2 * lay.pv_size();

  BoxSet box{Vector(dd), Vector(dd)};
  const Eigen::Index npv = idx(lay.pv_size());
  box.lower.head(npv).setConstant(tobj.p_min);
  box.upper.head(npv).setConstant(tobj.p_max);
  box.lower.segment(npv, npv).setConstant(-options.v_max);
  box.upper.segment(npv, npv).setConstant(options.v_max);
  box.lower.tail(idx(lay.a_size())).setConstant(-options.a_max);
  box.upper.tail(idx(lay.a_size())).setConstant(options.a_max);

  Dataset ds;
  ds.recipe = "trajectory";
  ds.seed = seed;
  ds.params = {{"vehicles", n_vehicles}, {"horizon", horizon}, {"n_samples", n_samples},
               {"lambda", options.lambda}, {"nu", options.nu},     {"step", h},
               {"v_max", options.v_max},   {"a_max", options.a_max}, {"jerk_max", options.jerk_max}};
  ds.constraint = lift_polytope(e, Vector::Zero(e.rows()), jerk,
                                Vector::Constant(n_jerk, -options.jerk_max),
                                Vector::Constant(n_jerk, options.jerk_max), box);
  ds.rhs.r = Matrix::Zero(e.rows() + n_jerk, r.cols());
  ds.rhs.r.topRows(e.rows()) = r;
  ds.rhs.b0 = Vector::Zero(e.rows() + n_jerk);
  ds.objective.kind = ObjectiveKind::EffortPreference;
  ds.objective.traj = tobj;

  // Rollout head: accelerations plus the start positions determine p and v.
  AffineCompletion comp;
  const Eigen::Index na = idx(lay.a_size());
  comp.input_map = Matrix::Zero(dd, na);
  comp.context_map = Matrix::Zero(dd, r.cols());
  comp.bias = Vector::Zero(dd);
  for (std::size_t i = 0; i < nv; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      const Eigen::Index xs = idx(2 * i + c);
      for (std::size_t t = 0; t <= horizon; ++t) comp.context_map(lay.p(t, i, c), xs) = 1.0;
      for (std::size_t t = 0; t < horizon; ++t) {
        const Eigen::Index col = lay.a(t, i, c) - idx(2 * lay.pv_size());
        comp.input_map(lay.a(t, i, c), col) = 1.0;
        for (std::size_t s = t + 1; s <= horizon; ++s) {
          comp.input_map(lay.v(s, i, c), col) = h;
          // p[s] gets h^2/2 from step t and h * h from every later velocity step.
          comp.input_map(lay.p(s, i, c), col) =
              0.5 * h * h + h * h * static_cast<double>(s - t - 1);
        }
      }
    }
  }
  ds.completion = comp;

  ds.contexts.resize(idx(4 * nv), idx(n_samples));
  const double margin = 0.5;
  QpSettings qs;
  for (std::size_t s = 0; s < n_samples; ++s) {
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 50 && !ok; ++attempt) {
      std::mt19937_64 rng = instance_rng(seed, s + attempt * kRetryStride);
      const Vector x = uniform_vector(rng, idx(4 * nv), tobj.p_min + margin, tobj.p_max - margin);
      // Certify by a feasibility solve: the minimum-effort trajectory.
      const LiftedConstraint lc = ds.constraint.with_rhs(ds.rhs(x));
      QpRows rows = qp_rows(lc);
      Matrix p = Matrix::Zero(dd, dd);
      p.bottomRightCorner(na, na).diagonal().setConstant(2.0);
      AdmmQpSolver solver(std::move(p), rows.a, qs);
      const QpResult res = solver.solve(Vector::Zero(dd), rows.l, rows.u);
      if (res.primal_residual <= 1e-8) {
        ds.contexts.col(idx(s)) = x;
        ok = true;
      }
    }
    if (!ok) throw InfeasibleConstraintError("gen_trajectory_family: could not sample feasible endpoints");
  }
  assign_splits(ds, options.splits);
  if (options.solve_oracle) attach_oracle(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Oracles.

double soc_certificate(const Dataset& ds, std::size_t index) {
  if (ds.recipe != "soc" || !ds.has_oracle()) throw Error("soc_certificate: not a cone dataset");
  const Eigen::Index n2 = idx(ds.params.at("d2").get<std::size_t>());
  const Eigen::Index n1 = idx(ds.params.at("d1").get<std::size_t>());
  const Matrix a = ds.constraint.structure().eq.leftCols(n1);
  const Vector x = ds.contexts.col(idx(index));
  const Vector b = x.head(n2), c = x.tail(n1);
  const Vector y = ds.y_star.col(idx(index));
  const Vector y1 = y.head(n1), y2 = y.tail(n2);
  // c = A' nu with the cone multiplier s = -nu in the (self-dual) cone.
  PseudoInverse at(a.transpose());
  const Vector nu = at.apply(c);
  const Vector s = -nu;
  const double primal = std::max(inf_norm(a * y1 + y2 - b), (y2 - project_soc(y2)).norm());
  const double dual_cone = (s - project_soc(s)).norm();
  const double stationarity = inf_norm(a.transpose() * nu - c);
  const double compl_slack = std::abs(s.dot(y2));
  return std::max({primal, dual_cone, stationarity, compl_slack});
}

Vector trajectory_controls(const Dataset& ds, const Vector& y) {
  if (ds.objective.kind != ObjectiveKind::EffortPreference) {
    throw Error("trajectory_controls: not a trajectory dataset");
  }
  const auto& t = ds.objective.traj;
  return y.segment(idx(t.a_offset), idx(t.horizon * t.vehicles * 2));
}

OracleSolution oracle_solve(const Dataset& ds, std::size_t index, const QpSettings& settings) {
  const ObjectiveSpec& obj = ds.objective;
  const Vector x = ds.contexts.col(idx(index));
  if (obj.kind == ObjectiveKind::ContextLinear) {
    if (!ds.has_oracle()) throw Error("oracle_solve: cone instances carry their construction optimum");
    OracleSolution s;
    s.y_star = ds.y_star.col(idx(index));
    s.objective = evaluate_objective(obj, s.y_star, x);
    s.primal_residual = ds.constraint_for(index).feasibility_residual(s.y_star);
    s.dual_residual = soc_certificate(ds, index);
    s.converged = s.primal_residual <= 1e-9 && s.dual_residual <= 1e-9;
    return s;
  }
  const LiftedConstraint lc = ds.constraint_for(index);
  const QpRows rows = qp_rows(lc);
  const Eigen::Index d = idx(lc.d());

  if (obj.kind == ObjectiveKind::QuadraticSin) {
    const std::vector<Vector> starts =
        multistart_points(ds, index, rows, settings, Vector::Zero(d));
    OracleSolution s = solve_quadratic_sin(obj.q_diag, obj.q_lin, rows, starts, settings);
    s.objective += obj.constant;
    return s;
  }

  Matrix p;
  Vector q;
  if (obj.kind == ObjectiveKind::EffortPreference) {
    const Eigen::Index na = idx(obj.traj.horizon * obj.traj.vehicles * 2);
    p = Matrix::Zero(d, d);
    p.block(idx(obj.traj.a_offset), idx(obj.traj.a_offset), na, na).diagonal().setConstant(2.0);
    q = Vector::Zero(d);
  } else {
    p = Matrix(2.0 * obj.q_diag.asDiagonal());
    q = obj.q_lin;
  }
  AdmmQpSolver solver(p, rows.a, settings);
  const QpResult r = solver.solve(q, rows.l, rows.u);

  if (!obj.convex()) {
    SmoothObjective so;
    so.value = [&](const Vector& y) { return evaluate_objective(obj, y, x); };
    so.gradient = [&](const Vector& y) { return objective_gradient(obj, y, x); };
    const std::vector<Vector> starts = multistart_points(ds, index, rows, settings, r.x);
    return solve_projected_gradient(so, rows, starts, settings);
  }

  OracleSolution s;
  s.y_star = r.x;
  s.objective = evaluate_objective(obj, r.x, x);
  s.primal_residual = r.primal_residual;
  s.dual_residual = r.dual_residual;
  s.iterations = r.iterations;
  s.converged = r.converged && lc.feasibility_residual(r.x) <= 1e-9;
  return s;
}

void attach_oracle(Dataset& ds, const QpSettings& settings) {
  if (ds.objective.kind == ObjectiveKind::ContextLinear) return;  // construction optimum
  const std::size_t n = ds.size();
  const Eigen::Index d = idx(ds.constraint.d());
  ds.y_star = Matrix::Zero(d, idx(n));
  ds.j_star = Vector::Zero(idx(n));
  ds.oracle_ok.assign(n, 0);
  const Dataset& view = ds;
  std::vector<OracleSolution> sol(n);
  parallel_for(n, [&](std::size_t i) { sol[i] = oracle_solve(view, i, settings); });
  for (std::size_t i = 0; i < n; ++i) {
    if (sol[i].y_star.size() == d) ds.y_star.col(idx(i)) = sol[i].y_star;
    ds.j_star(idx(i)) = sol[i].objective;
    ds.oracle_ok[i] = sol[i].converged ? 1 : 0;
  }
}

double relative_suboptimality(double j, double j_star) {
  const double denom = std::abs(j_star);
  if (denom == 0.0) return j > 0.0 ? kInf : 0.0;
  return std::max(0.0, (j - j_star) / denom);
}

}  // namespace pinet

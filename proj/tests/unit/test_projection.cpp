#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pinet/errors.hpp"
#include "pinet/projection.hpp"
#include "pinet/qp_oracle.hpp"

using namespace pinet;

namespace {

struct Polytope {
  Matrix e, c;
  Vector q, l, u;
  LiftedConstraint lc;
};

// Random polytope with a strictly feasible point y0.
Polytope random_polytope(std::mt19937_64& rng, Eigen::Index d, Eigen::Index me, Eigen::Index mi,
                         double slack = 0.5) {
  Polytope p;
  p.e = oracle::random_matrix(rng, me, d);
  p.c = oracle::random_matrix(rng, mi, d);
  const Vector y0 = oracle::random_vector(rng, d, 0.5);
  p.q = p.e * y0;
  const Vector cy = p.c * y0;
  p.l = cy.array() - slack;
  p.u = cy.array() + slack;
  p.lc = lift_polytope(p.e, p.q, p.c, p.l, p.u);
  return p;
}

Matrix badly_scaled(std::mt19937_64& rng, Eigen::Index m, Eigen::Index n, double decades) {
  Matrix a = oracle::random_matrix(rng, m, n);
  for (Eigen::Index j = 0; j < n; ++j) a.col(j) *= std::pow(10.0, -decades * j / (n - 1));
  for (Eigen::Index i = 0; i < m; ++i) a.row(i) *= std::pow(10.0, decades * i / std::max<Eigen::Index>(m - 1, 1));
  return a;
}

}  // namespace

TEST_CASE("settings defaults and validation") {
  const DRSettings st;
  CHECK(st.sigma == 1.0);
  CHECK(st.omega == 1.7);
  CHECK(st.n_iter_fwd == 100);
  CHECK(st.n_iter_test == 100);
  CHECK(st.n_iter_bwd == 25);
  CHECK_NOTHROW(st.validate());
  for (auto bad : {DRSettings{0.0}, DRSettings{1.0, 2.0}, DRSettings{1.0, 0.0}, DRSettings{1.0, 1.7, 0},
                   DRSettings{1.0, 1.7, 10, 0}, DRSettings{1.0, 1.7, 10, 10, 0}, DRSettings{-1.0}}) {
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}

TEST_CASE("box-only lifting reproduces the clamp for K >= 50") {
  std::mt19937_64 rng(1);
  const Eigen::Index d = 8;
  Vector lo = -Vector::Ones(d), hi = Vector::Ones(d);
  lo(0) = -kInf;
  const LiftedConstraint lc = lift_polytope(Matrix(0, d), Vector(0), Matrix::Identity(d, d), lo, hi);
  for (int rep = 0; rep < 10; ++rep) {
    const Vector s = oracle::random_vector(rng, d, 2.0);
    for (int k : {50, 100, 400}) {
      CHECK((dr_project(lc, s, {}, k).y - project_box(BoxSet{lo, hi}, s)).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("a feasible y_raw is returned unchanged") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const Polytope p = random_polytope(rng, 12, 4, 6);
    // Feasible point: the oracle projection of a random point.
    const Vector y = oracle_project(p.lc, oracle::random_vector(rng, 12)).x;
    REQUIRE(p.lc.feasibility_residual(y) <= 1e-8);
    CHECK((dr_project(p.lc, y, {}, 1000).y - y).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("random d=20 polytopes match the QP oracle at K=1000") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Polytope p = random_polytope(rng, 20, 10, 10);
    const Vector s = oracle::random_vector(rng, 20, 1.0);
    const QpResult ref = oracle_project(p.lc, s);
    REQUIRE(ref.converged);
    const ProjectionResult r = dr_project(p.lc, s, {}, 1000);
    CHECK((r.y - ref.x).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(r.iterations == 1000);
    CHECK(r.cv >= 0.0);
  }
}

TEST_CASE("z stays on the hyperplane after every iteration count") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    const Polytope p = random_polytope(rng, 15, 6, 8);
    const Vector s = oracle::random_vector(rng, 15, 3.0);
    for (int k : {1, 2, 7, 50}) {
      const ProjectionResult r = dr_project(p.lc, s, {}, k);
      CHECK((p.lc.a() * r.z - p.lc.b()).cwiseAbs().maxCoeff() <= 1e-8);
      CHECK((p.e * r.y - p.q).cwiseAbs().maxCoeff() <= 1e-8);
    }
  }
}

TEST_CASE("cv at K=200 never exceeds cv at K=50") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    const Polytope p = random_polytope(rng, 10, 4, 6, 0.2);
    const Vector s = oracle::random_vector(rng, 10, 2.0);
    CHECK(dr_project(p.lc, s, {}, 200).cv <= dr_project(p.lc, s, {}, 50).cv + 1e-12);
  }
}

TEST_CASE("repeated runs are bit-identical and batch matches single") {
  std::mt19937_64 rng(6);
  const Polytope p = random_polytope(rng, 10, 3, 5);
  const Matrix ys = oracle::random_matrix(rng, 10, 6);
  const ProjectionResult a = dr_project(p.lc, ys.col(0), {}, 77);
  const ProjectionResult b = dr_project(p.lc, ys.col(0), {}, 77);
  CHECK(a.y == b.y);
  CHECK(a.s_final == b.s_final);

  const DRGeometry g = DRGeometry::plain(p.lc);
  const BatchProjection bp = dr_project_batch(g, p.lc.b(), ys, {}, 77);
  for (Eigen::Index j = 0; j < ys.cols(); ++j) {
    const ProjectionResult r = dr_project(p.lc, ys.col(j), {}, 77);
    CHECK((bp.y.col(j) - r.y).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(bp.cv(j) == doctest::Approx(r.cv).epsilon(1e-9));
  }
}

TEST_CASE("warm start continues a run") {
  std::mt19937_64 rng(7);
  const Polytope p = random_polytope(rng, 10, 3, 5);
  const Vector s = oracle::random_vector(rng, 10, 2.0);
  const ProjectionResult first = dr_project(p.lc, s, {}, 40);
  const ProjectionResult rest = dr_project(p.lc, s, {}, 60, first.s_final);
  const ProjectionResult whole = dr_project(p.lc, s, {}, 100);
  CHECK((rest.y - whole.y).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("non-finite input aborts with a numerical failure") {
  std::mt19937_64 rng(8);
  const Polytope p = random_polytope(rng, 6, 2, 2);
  Vector s = oracle::random_vector(rng, 6);
  s(2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(dr_project(p.lc, s, {}, 10), NumericalFailure);
  CHECK_THROWS_AS(dr_project(p.lc, Vector::Zero(5), {}, 10), DimensionError);
}

TEST_CASE("equilibrated iteration with identity scaling follows the plain trajectory") {
  std::mt19937_64 rng(9);
  const Polytope p = random_polytope(rng, 10, 4, 4);
  const EquilibratedConstraint ec = rescale_constraint(p.lc, Scaling::identity(p.lc.a()));
  for (int rep = 0; rep < 5; ++rep) {
    const Vector s = oracle::random_vector(rng, 10, 2.0);
    for (int k : {1, 10, 100}) {
      const ProjectionResult a = dr_project(p.lc, s, {}, k);
      const ProjectionResult b = dr_project_equilibrated(ec, s, {}, k);
      CHECK((a.y - b.y).cwiseAbs().maxCoeff() <= 1e-13);
      CHECK((a.s_final - b.s_final).cwiseAbs().maxCoeff() <= 1e-13);
    }
  }
}

TEST_CASE("anisotropic scaling on a 2-d box problem has the same limit") {
  // y1 + y2 = 1 with 0 <= y <= (0.8, 5), inequalities lifted as identity rows.
  Matrix e(1, 2);
  e << 1.0, 1.0;
  const LiftedConstraint lc = lift_polytope(e, Vector::Ones(1), Matrix::Identity(2, 2),
                                            Vector::Zero(2), (Vector(2) << 0.8, 5.0).finished());
  Scaling sc = Scaling::identity(lc.a());
  sc.d_c << 3.0, 0.2, 0.5, 4.0;
  sc.d_r << 0.7, 1.5, 2.0;
  sc.a_scaled = sc.d_r.asDiagonal() * lc.a() * sc.d_c.asDiagonal();
  const EquilibratedConstraint ec = rescale_constraint(lc, sc);
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 10; ++rep) {
    const Vector s = oracle::random_vector(rng, 2, 2.0);
    const ProjectionResult a = dr_project(lc, s, {}, 20000);
    const ProjectionResult b = dr_project_equilibrated(ec, s, {}, 20000);
    CHECK((a.y - b.y).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("equilibration reaches cv <= 1e-3 in fewer iterations on an ill-conditioned polytope") {
  std::mt19937_64 rng(11);
  const Eigen::Index d = 20;
  Matrix e = badly_scaled(rng, 8, d, 5.0);
  Matrix c = badly_scaled(rng, 8, d, 5.0);
  const Vector y0 = oracle::random_vector(rng, d, 0.3);
  const Vector cy = c * y0;
  const LiftedConstraint lc = lift_polytope(e, e * y0, c, cy.array() - 0.1, cy.array() + 0.1);
  REQUIRE(condition_number(lc.a()) >= 1e6);
  const EquilibratedConstraint ec = equilibrate(lc);
  const DRGeometry plain = DRGeometry::plain(lc);
  const DRGeometry scaled = DRGeometry::equilibrated(ec);

  // Each pipeline gets its best step size from a shared grid; the scaled
  // problem lives in different units, so a common sigma would favour one.
  std::vector<int> checkpoints;
  for (int k = 10; k <= 10000; k += 10) checkpoints.push_back(k);
  auto first_below = [&](const DRGeometry& g, const Vector& s) {
    int best = std::numeric_limits<int>::max();
    for (double sigma : {1.0, 0.1, 0.01, 1e-3, 1e-4}) {
      DRSettings st;
      st.sigma = sigma;
      for (auto [k, cv] : convergence_profile(g, lc.b(), s, st, checkpoints)) {
        if (cv <= 1e-3) {
          best = std::min(best, k);
          break;
        }
      }
    }
    return best;
  };
  for (int rep = 0; rep < 3; ++rep) {
    const Vector s = oracle::random_vector(rng, d, 1.0);
    const int kp = first_below(plain, s), ks = first_below(scaled, s);
    INFO("plain " << kp << " equilibrated " << ks);
    CHECK(ks < kp);
  }
}

TEST_CASE("feasibility residual examples") {
  Matrix e(1, 2), c(1, 2);
  e << 1, 1;
  c << 1, 0;
  const LiftedConstraint lc = lift_polytope(e, Vector::Ones(1), c, Vector::Constant(1, -kInf), Vector::Constant(1, 0.5));
  Vector y(2);
  y << 0.5, 0.5;
  CHECK(feasibility_residual(lc, y) == 0.0);
  y << 0.8, 0.2;  // inequality violated by 0.3, equality satisfied
  CHECK(feasibility_residual(lc, y) == doctest::Approx(0.3));

  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    const Polytope p = random_polytope(rng, 9, 3, 4);
    const Vector r = oracle::random_vector(rng, 9, 2.0);
    CHECK(feasibility_residual(p.lc, r) ==
          doctest::Approx(oracle::raw_violation(p.e, p.q, p.c, p.l, p.u, r)).epsilon(1e-12));
  }
}

TEST_CASE("feasibility residual on cone blocks is the distance to the cone") {
  const LiftedConstraint lc = lift_soc_program(Matrix::Zero(3, 1), Vector::Zero(3), 1, 3);
  Vector y(4);
  y << 7.0, 3.0, 4.0, 0.0;  // equality A y1 + y2 = 0 violated by y2 itself
  const Vector y2 = y.tail(3);
  const double expected = std::max(y2.cwiseAbs().maxCoeff(), (project_soc(y2) - y2).norm());
  CHECK(feasibility_residual(lc, y) == doctest::Approx(expected));
}

TEST_CASE("convergence profile behaviour") {
  // Problems of the small benchmark size; smaller ones reach round-off
  // within a few dozen iterations and flatten the curve.
  std::mt19937_64 rng(13);
  const std::vector<int> checkpoints{25, 50, 100, 200};
  Vector worst = Vector::Zero(4);
  for (int rep = 0; rep < 10; ++rep) {
    const Polytope p = random_polytope(rng, 100, 50, 50, 0.1);
    const Vector s = oracle::random_vector(rng, 100, 1.0);
    const auto prof = convergence_profile(p.lc, s, {}, checkpoints);
    REQUIRE(prof.size() == 4);
    CHECK(prof[0].first == 25);
    CHECK(prof[3].first == 200);
    CHECK(prof[2].second < prof[1].second);
    // Checkpoint values equal separate runs.
    CHECK(prof[1].second == doctest::Approx(dr_project(p.lc, s, {}, 50).cv).epsilon(1e-9));
    for (int k = 0; k < 4; ++k) worst(k) = std::max(worst(k), prof[static_cast<std::size_t>(k)].second);
  }
  std::vector<double> ks, logs;
  for (int k = 0; k < 4; ++k) {
    ks.push_back(checkpoints[static_cast<std::size_t>(k)]);
    logs.push_back(std::log(worst(k)));
  }
  CHECK(oracle::r_squared(ks, logs) >= 0.9);

  const Polytope p = random_polytope(rng, 10, 4, 4);
  const Vector feasible = oracle_project(p.lc, oracle::random_vector(rng, 10)).x;
  for (auto [k, cv] : convergence_profile(p.lc, feasible, {}, {100, 400, 1000})) {
    if (k >= 400) CHECK(cv <= 1e-8);
  }

  // Box bounds placed directly on y: without over-relaxation every iterate
  // is a clamp, so the output is feasible from the first iteration on.
  const LiftedConstraint box = lift_polytope(Matrix(0, 4), Vector(0), Matrix(0, 4), Vector(0),
                                             Vector(0), BoxSet{-Vector::Ones(4), Vector::Ones(4)});
  DRSettings plain_dr;
  plain_dr.omega = 1.0;
  for (auto [k, cv] : convergence_profile(box, oracle::random_vector(rng, 4, 3.0), plain_dr, {1, 2, 5, 25})) {
    CHECK(cv == 0.0);
  }
  CHECK_THROWS(convergence_profile(box, Vector::Zero(4), {}, {50, 25}));
}

#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "pinet/constraint_sets.hpp"
#include "pinet/errors.hpp"
#include "pinet/projection.hpp"
#include "pinet/qp_oracle.hpp"

using namespace pinet;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

BoxSet random_box(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  BoxSet b{Vector(n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = u(rng), c = u(rng);
    b.lower(i) = std::min(a, c);
    b.upper(i) = std::max(a, c);
  }
  return b;
}

using Projector = std::function<Vector(const Vector&)>;

void check_idempotent_nonexpansive(const Projector& p, Eigen::Index n, std::mt19937_64& rng,
                                   double scale = 3.0) {
  for (int rep = 0; rep < 50; ++rep) {
    const Vector s = oracle::random_vector(rng, n, scale);
    const Vector s2 = oracle::random_vector(rng, n, scale);
    const Vector ps = p(s);
    CHECK((p(ps) - ps).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((ps - p(s2)).norm() <= (s - s2).norm() + 1e-12);
  }
}

}  // namespace

TEST_CASE("hyperplane: coordinate example and idempotence") {
  Matrix a(1, 2);
  a << 1, 0;
  const Hyperplane h(a, Vector::Zero(1));
  const Vector p = h.project(vec({3, 4}));
  CHECK(p(0) == doctest::Approx(0.0));
  CHECK(p(1) == doctest::Approx(4.0));
  CHECK((h.project(p) - p).norm() <= 1e-12);
}

TEST_CASE("hyperplane: random 4x8 satisfies KKT and orthogonality") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix a = oracle::random_matrix(rng, 4, 8);
    const Vector b = oracle::random_vector(rng, 4);
    const Vector s = oracle::random_vector(rng, 8, 2.0);
    const Hyperplane h(a, b);
    const Vector out = h.project(s);
    CHECK((a * out - b).cwiseAbs().maxCoeff() <= 1e-9);
    // out - s lies in the row space, so it is orthogonal to null(A).
    const Eigen::FullPivLU<Matrix> lu(a);
    const Matrix null = lu.kernel();
    CHECK((null.transpose() * (out - s)).cwiseAbs().maxCoeff() <= 1e-8);
    // Any other feasible point is at least as far from s.
    for (int k = 0; k < 20; ++k) {
      const Vector other = out + null * oracle::random_vector(rng, null.cols(), 0.5);
      CHECK((other - s).norm() >= (out - s).norm() - 1e-12);
    }
    check_idempotent_nonexpansive([&](const Vector& v) { return h.project(v); }, 8, rng);
  }
}

TEST_CASE("hyperplane: inconsistent system is rejected at construction") {
  Matrix a(2, 2);
  a << 1, 1, 1, 1;
  CHECK_THROWS_AS(Hyperplane(a, vec({0, 1})), InfeasibleConstraintError);
}

TEST_CASE("box: clamp examples and infinite sides") {
  const BoxSet box{vec({0, 0}), vec({1, 1})};
  const Vector p = project_box(box, vec({2, -3}));
  CHECK(p(0) == 1.0);
  CHECK(p(1) == 0.0);
  const Vector inside = vec({0.3, 0.9});
  CHECK(project_box(box, inside) == inside);

  const BoxSet half{vec({-kInf, 0}), vec({1, kInf})};
  const Vector q = project_box(half, vec({-1e6, 1e6}));
  CHECK(q(0) == -1e6);
  CHECK(q(1) == 1e6);
}

TEST_CASE("box: random boxes against scalar ternary search") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    const BoxSet box = random_box(rng, 6);
    const Vector s = oracle::random_vector(rng, 6, 2.0);
    CHECK((project_box(box, s) - oracle::box_by_search(s, box.lower, box.upper)).cwiseAbs().maxCoeff() <= 1e-9);
  }
  const BoxSet box = random_box(rng, 5);
  check_idempotent_nonexpansive([&](const Vector& v) { return project_box(box, v); }, 5, rng);
}

TEST_CASE("soc: three cases of the closed form") {
  CHECK(project_soc(vec({1, 0, 2})) == vec({1, 0, 2}));
  CHECK(project_soc(vec({1, 0, -2})).norm() == 0.0);
  const Vector p = project_soc(vec({3, 4, 0}));
  // (t + ||v||)/2 = 2.5, scaled direction (0.6, 0.8).
  CHECK(p(0) == doctest::Approx(1.5));
  CHECK(p(1) == doctest::Approx(2.0));
  CHECK(p(2) == doctest::Approx(2.5));
  const Vector s = vec({3, 4, 0});
  CHECK(std::abs((p - s).norm() - (oracle::soc3_by_sweep(s) - s).norm()) <= 1e-6);
}

TEST_CASE("soc: random 3-d points against the ray sweep") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    const Vector s = oracle::random_vector(rng, 3, 2.0);
    const Vector p = project_soc(s);
    CHECK(std::hypot(p(0), p(1)) <= p(2) + 1e-12);
    CHECK((p - s).norm() <= (oracle::soc3_by_sweep(s) - s).norm() + 1e-6);
    CHECK((p - oracle::soc3_by_sweep(s)).norm() <= 1e-4);
  }
  check_idempotent_nonexpansive([](const Vector& v) { return project_soc(v); }, 6, rng);
}

TEST_CASE("simplex: examples") {
  const Vector p = project_simplex(vec({2, 0}), 1.0);
  CHECK(p(0) == doctest::Approx(1.0));
  CHECK(p(1) == doctest::Approx(0.0));
  const Vector on = vec({0.2, 0.3, 0.5});
  CHECK((project_simplex(on, 1.0) - on).norm() <= 1e-15);
}

TEST_CASE("simplex: random points against support enumeration") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const Vector s = oracle::random_vector(rng, 5, 1.5);
    const double r = 0.5 + static_cast<double>(rep % 3);
    const Vector p = project_simplex(s, r);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(std::abs(p.sum() - r) <= 1e-10);
    CHECK((p - oracle::simplex_by_enumeration(s, r)).cwiseAbs().maxCoeff() <= 1e-9);
  }
  check_idempotent_nonexpansive([](const Vector& v) { return project_simplex(v, 2.0); }, 6, rng);
}

TEST_CASE("l1 ball: examples") {
  const Vector in = vec({0.2, -0.1});
  CHECK(project_l1_ball(in, 1.0) == in);
  CHECK(project_l1_ball(vec({3, -1, 2}), 0.0).norm() == 0.0);
}

TEST_CASE("l1 ball: random points against the simplex reduction") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const Vector s = oracle::random_vector(rng, 6, 1.0);
    const Vector p = project_l1_ball(s, 1.0);
    CHECK(p.lpNorm<1>() <= 1.0 + 1e-10);
    CHECK((p - oracle::l1_by_enumeration(s, 1.0)).cwiseAbs().maxCoeff() <= 1e-9);
  }
  check_idempotent_nonexpansive([](const Vector& v) { return project_l1_ball(v, 1.0); }, 6, rng);
}

TEST_CASE("factor set: free, product and mixed blocks") {
  std::mt19937_64 rng(6);
  const FactorSet free = FactorSet::free(4);
  const Vector s = oracle::random_vector(rng, 4);
  CHECK(free.project(s) == s);

  const BoxSet box = random_box(rng, 3);
  FactorSet mixed({box, SecondOrderConeSet{3}, SimplexSet{4, 1.5}, L1BallSet{3, 0.7}, FreeSpace{2}});
  CHECK(mixed.dim() == 15);
  for (int rep = 0; rep < 20; ++rep) {
    const Vector v = oracle::random_vector(rng, 15, 2.0);
    const Vector p = mixed.project(v);
    CHECK((p.segment(0, 3) - oracle::box_by_search(v.segment(0, 3), box.lower, box.upper)).norm() <= 1e-9);
    CHECK((p.segment(3, 3) - project_soc(v.segment(3, 3))).norm() <= 1e-15);
    CHECK((p.segment(6, 4) - oracle::simplex_by_enumeration(v.segment(6, 4), 1.5)).norm() <= 1e-9);
    CHECK((p.segment(10, 3) - oracle::l1_by_enumeration(v.segment(10, 3), 0.7)).norm() <= 1e-9);
    CHECK(p.segment(13, 2) == v.segment(13, 2));
  }
  check_idempotent_nonexpansive([&](const Vector& v) { return mixed.project(v); }, 15, rng);

  // Batched projection agrees with the per-vector path.
  Matrix batch = oracle::random_matrix(rng, 15, 7);
  Matrix ref = batch;
  for (Eigen::Index j = 0; j < 7; ++j) ref.col(j) = mixed.project(batch.col(j));
  mixed.project_inplace(batch);
  CHECK((batch - ref).cwiseAbs().maxCoeff() <= 1e-15);

  CHECK_THROWS(mixed.project(Vector::Zero(14)));
}

TEST_CASE("lift_polytope: block layout") {
  std::mt19937_64 rng(7);
  const Matrix e = oracle::random_matrix(rng, 2, 4);
  const Matrix c = oracle::random_matrix(rng, 3, 4);
  const Vector q = oracle::random_vector(rng, 2);
  const LiftedConstraint lc = lift_polytope(e, q, c, Vector::Constant(3, -1), Vector::Constant(3, 1));
  CHECK(lc.d() == 4);
  CHECK(lc.n() == 7);
  Matrix expect = Matrix::Zero(5, 7);
  expect.topLeftCorner(2, 4) = e;
  expect.bottomLeftCorner(3, 4) = c;
  expect.bottomRightCorner(3, 3) = -Matrix::Identity(3, 3);
  CHECK((lc.a() - expect).cwiseAbs().maxCoeff() == 0.0);
  CHECK(lc.b().head(2) == q);
  CHECK(lc.b().tail(3).norm() == 0.0);
  CHECK_THROWS(lift_polytope(e, q, c, Vector::Constant(3, 1), Vector::Constant(3, -1)));
  CHECK_THROWS(lift_polytope(e, Vector::Zero(3), c, Vector::Constant(3, -1), Vector::Constant(3, 1)));
}

TEST_CASE("lift_polytope: pure box projects to the clamp") {
  const Eigen::Index d = 5;
  std::mt19937_64 rng(8);
  const BoxSet box = random_box(rng, d);
  const LiftedConstraint lc =
      lift_polytope(Matrix(0, d), Vector(0), Matrix::Identity(d, d), box.lower, box.upper);
  CHECK(lc.eq_rows() == 0);
  DRSettings st;
  for (int rep = 0; rep < 10; ++rep) {
    const Vector s = oracle::random_vector(rng, d, 2.0);
    const ProjectionResult r = dr_project(lc, s, st, 2000);
    CHECK((r.y - project_box(box, s)).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("lift_polytope: identity equalities pin a singleton") {
  std::mt19937_64 rng(9);
  const Vector q = oracle::random_vector(rng, 4);
  const LiftedConstraint lc = lift_polytope(Matrix::Identity(4, 4), q, Matrix(0, 4), Vector(0), Vector(0));
  const ProjectionResult r = dr_project(lc, oracle::random_vector(rng, 4, 5.0), {}, 10);
  CHECK((r.y - q).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("lift_polytope: DC3-style d=10 matches the QP oracle") {
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix e = oracle::random_matrix(rng, 5, 10);
    const Matrix c = oracle::random_matrix(rng, 5, 10);
    const Vector y0 = oracle::random_vector(rng, 10, 0.3);
    const Vector q = e * y0;
    const Vector cy = c * y0;
    const LiftedConstraint lc =
        lift_polytope(e, q, c, cy.array() - 1.0, cy.array() + 0.5);
    const Vector s = oracle::random_vector(rng, 10, 2.0);
    const ProjectionResult r = dr_project(lc, s, {}, 3000);
    const QpResult ref = oracle_project(lc, s);
    REQUIRE(ref.converged);
    CHECK((r.y - ref.x).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(oracle::raw_violation(e, q, c, cy.array() - 1.0, cy.array() + 0.5, r.y) <= 1e-6);
  }
}

TEST_CASE("lift_soc_program: layout and degenerate cases") {
  std::mt19937_64 rng(11);
  const Matrix a = oracle::random_matrix(rng, 2, 3);
  // b chosen with the cone block strictly interior.
  const Vector y1 = oracle::random_vector(rng, 3);
  const Vector y2 = vec({0.1, 2.0});
  const LiftedConstraint lc = lift_soc_program(a, a * y1 + y2, 3, 2);
  CHECK(lc.n() == lc.d());
  CHECK(lc.d() == 5);
  Vector y(5);
  y << y1, y2;
  const ProjectionResult r = dr_project(lc, y, {}, 50);
  CHECK((r.y - y).cwiseAbs().maxCoeff() <= 1e-9);

  // A = 0, b = 0 forces y2 = 0 through the equality.
  const LiftedConstraint zero = lift_soc_program(Matrix::Zero(2, 3), Vector::Zero(2), 3, 2);
  const Vector s = oracle::random_vector(rng, 5, 2.0);
  const ProjectionResult rz = dr_project(zero, s, {}, 2000);
  CHECK(rz.y.tail(2).norm() <= 1e-6);
  CHECK((rz.y.head(3) - s.head(3)).norm() <= 1e-6);

  CHECK_THROWS(lift_soc_program(Matrix::Zero(3, 3), Vector::Zero(3), 3, 2));
}

TEST_CASE("lift_soc_program: random d1=d2=8 is feasible after 2000 iterations") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix a = oracle::random_matrix(rng, 8, 8);
    const Vector b = a * oracle::random_vector(rng, 8) + project_soc(oracle::random_vector(rng, 8));
    const LiftedConstraint lc = lift_soc_program(a, b, 8, 8);
    const ProjectionResult r = dr_project(lc, oracle::random_vector(rng, 16, 2.0), {}, 2000);
    CHECK(r.cv <= 1e-6);
    const Vector cone = r.y.tail(8);
    CHECK(cone.head(7).norm() <= cone(7) + 1e-6);
    CHECK((a * r.y.head(8) + cone - b).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("lift_intersection: polytope-only equals lift_polytope") {
  std::mt19937_64 rng(13);
  PolytopePart part{oracle::random_matrix(rng, 2, 4), oracle::random_vector(rng, 2),
                    oracle::random_matrix(rng, 3, 4), Vector::Constant(3, -1), Vector::Constant(3, 2)};
  const LiftedConstraint a = lift_intersection(4, {part}, {});
  const LiftedConstraint b = lift_polytope(part.eq, part.q, part.ineq, part.lower, part.upper);
  CHECK(a.n() == b.n());
  CHECK((a.a() - b.a()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.b() - b.b()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lift_intersection: SOC-only lifting layout") {
  std::mt19937_64 rng(14);
  SocPart cone{oracle::random_matrix(rng, 2, 3), oracle::random_vector(rng, 2),
               oracle::random_vector(rng, 3), 1.5};
  const LiftedConstraint lc = lift_intersection(3, {}, {cone});
  CHECK(lc.d() == 3);
  CHECK(lc.n() == 6);
  // Aux rows: y_aux,1 = F y + c, y_aux,2 = f'y + e; the lift reproduces them.
  const Vector y = oracle::random_vector(rng, 3);
  const Vector lifted = lc.lift(y);
  CHECK((lifted.segment(3, 2) - (cone.f_mat * y + cone.c)).norm() <= 1e-12);
  CHECK(std::abs(lifted(5) - (cone.f.dot(y) + cone.e)) <= 1e-12);
  CHECK((lc.a() * lifted - lc.b()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("lift_intersection: box and ball in the plane against a grid") {
  // {|y_i| <= 0.8} intersected with {||y|| <= 1}.
  PolytopePart box{Matrix(0, 2), Vector(0), Matrix::Identity(2, 2), Vector::Constant(2, -0.8),
                   Vector::Constant(2, 0.8)};
  SocPart ball{Matrix::Identity(2, 2), Vector::Zero(2), Vector::Zero(2), 1.0};
  const LiftedConstraint lc = lift_intersection(2, {box}, {ball});
  auto inside = [](double a, double b) {
    return std::abs(a) <= 0.8 && std::abs(b) <= 0.8 && a * a + b * b <= 1.0;
  };
  std::mt19937_64 rng(15);
  for (int rep = 0; rep < 8; ++rep) {
    const Vector s = oracle::random_vector(rng, 2, 1.5);
    const ProjectionResult r = dr_project(lc, s, {}, 4000);
    const Vector coarse = oracle::grid_project_2d(inside, s, -1.0, 1.0, 1e-2);
    CHECK((r.y - coarse).norm() <= 2e-2);
    // Fine grid in a window around the coarse answer.
    auto window = [&](double a, double b) { return inside(a, b); };
    Vector best = coarse;
    double best_d = (coarse - s).norm();
    for (double a = coarse(0) - 0.02; a <= coarse(0) + 0.02; a += 2e-5)
      for (double b = coarse(1) - 0.02; b <= coarse(1) + 0.02; b += 2e-5)
        if (window(a, b) && std::hypot(a - s(0), b - s(1)) < best_d) {
          best_d = std::hypot(a - s(0), b - s(1));
          best << a, b;
        }
    CHECK((r.y - best).norm() <= 1e-4);
  }
}

TEST_CASE("lifted feasibility residual matches the raw constraint description") {
  std::mt19937_64 rng(16);
  const Matrix e = oracle::random_matrix(rng, 3, 6);
  const Matrix c = oracle::random_matrix(rng, 4, 6);
  const Vector q = oracle::random_vector(rng, 3);
  const Vector l = Vector::Constant(4, -0.5), u = Vector::Constant(4, 0.7);
  const BoxSet bounds{Vector::Constant(6, -2), Vector::Constant(6, 2)};
  const LiftedConstraint lc = lift_polytope(e, q, c, l, u, bounds);
  for (int rep = 0; rep < 30; ++rep) {
    const Vector y = oracle::random_vector(rng, 6, 2.0);
    CHECK(lc.feasibility_residual(y) ==
          doctest::Approx(oracle::raw_violation(e, q, c, l, u, y, &bounds.lower, &bounds.upper)).epsilon(1e-12));
  }
}

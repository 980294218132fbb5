#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pinet/autotune.hpp"
#include "pinet/equilibration.hpp"
#include "pinet/problems.hpp"

using namespace pinet;

namespace {

TuneOptions small_options() {
  TuneOptions o;
  o.probes = 30;
  o.sigma_points = 20;
  o.reference_iterations = 3000;
  return o;
}

int iterations_to(const DRGeometry& g, const Matrix& rhs, const Matrix& points, const DRSettings& st,
                  double threshold) {
  for (int k = 10; k <= 20000; k += 10) {
    const BatchProjection r = dr_project_batch(g, rhs, points, st, k);
    if (r.cv.maxCoeff() <= threshold) return k;
  }
  return std::numeric_limits<int>::max();
}

}  // namespace

TEST_CASE("sigma grid is log-spaced between the documented bounds") {
  const std::vector<double> grid = sigma_grid(TuneOptions{});
  REQUIRE(grid.size() == 100);
  CHECK(grid.front() == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(grid.back() == doctest::Approx(5.05).epsilon(1e-12));
  const double ratio = grid[1] / grid[0];
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] / grid[i - 1] == doctest::Approx(ratio).epsilon(1e-9));
}

TEST_CASE("box-only problem: every sigma is a candidate") {
  const Eigen::Index d = 6;
  const LiftedConstraint lc = lift_polytope(Matrix(0, d), Vector(0), Matrix(0, d), Vector(0), Vector(0),
                                            BoxSet{-Vector::Ones(d), Vector::Ones(d)});
  const TuneReport rep = tune(DRGeometry::plain(lc), lc.b(), DRSettings{}, small_options());
  REQUIRE(rep.sigma_entries.size() == 20);
  // Very small sigmas have not converged after 100 iterations (the output is
  // still far from y_raw); from 0.05 up every sigma qualifies.
  double best = std::numeric_limits<double>::infinity();
  for (const TuneEntry& e : rep.sigma_entries) {
    if (e.sigma >= 0.05) CHECK(e.candidate);
    if (e.candidate) best = std::min(best, e.max_cv);
  }
  CHECK_FALSE(rep.no_sigma_candidate);
  // The first (smallest) candidate reaching the minimum CV wins.
  for (const TuneEntry& e : rep.sigma_entries) {
    if (e.candidate && e.max_cv == best) {
      CHECK(rep.chosen_sigma == e.sigma);
      break;
    }
  }
}

TEST_CASE("chosen sigma has the lowest CV among candidates and the run is deterministic") {
  const Dataset ds = gen_dc3_family(20, 8, 8, 40, 1, Dc3Options{false, 1.0, 0.0, false, std::nullopt});
  const DRGeometry g = DRGeometry::plain(ds.constraint);
  const Matrix rhs = ds.rhs_batch(ds.train);
  TuneOptions o = small_options();
  o.seed = 5;
  const TuneReport a = tune(g, rhs, DRSettings{}, o);
  const TuneReport b = tune(g, rhs, DRSettings{}, o);
  CHECK(a.chosen_sigma == b.chosen_sigma);
  CHECK(a.chosen_iterations == b.chosen_iterations);
  CHECK(a.to_json().dump() == b.to_json().dump());

  const TuneEntry* chosen = nullptr;
  for (const TuneEntry& e : a.sigma_entries) {
    if (e.sigma == a.chosen_sigma) chosen = &e;
  }
  REQUIRE(chosen != nullptr);
  CHECK(chosen->candidate);
  for (const TuneEntry& e : a.sigma_entries) {
    CHECK(e.sigma >= o.sigma_min * (1 - 1e-12));
    CHECK(e.sigma <= o.sigma_max * (1 + 1e-12));
    if (e.candidate) CHECK(chosen->max_cv <= e.max_cv);
    CHECK(e.mean_rel_distance >= 1.0 - 1e-6);  // nothing is closer than the projection
  }
  // Iteration budget comes from the grid; the chosen one meets the thresholds.
  bool on_grid = false;
  for (int k : o.iteration_grid) on_grid |= k == a.chosen_iterations;
  CHECK(on_grid);
  for (const TuneEntry& e : a.iteration_entries) {
    if (e.iterations == a.chosen_iterations) CHECK(e.candidate);
    if (e.iterations < a.chosen_iterations) CHECK_FALSE(e.candidate);
  }
  const DRSettings applied = a.apply(DRSettings{});
  CHECK(applied.sigma == a.chosen_sigma);
  CHECK(applied.n_iter_fwd == a.chosen_iterations);
  CHECK(applied.omega == 1.7);

  TuneOptions other = o;
  other.seed = 6;
  CHECK(tune(g, rhs, DRSettings{}, other).to_json().dump() != a.to_json().dump());
}

TEST_CASE("tuning cost stays within the documented bound") {
  const Dataset ds = gen_dc3_family(10, 4, 4, 20, 2, Dc3Options{false, 1.0, 0.0, false, std::nullopt});
  TuneOptions o;
  o.reference_iterations = 1000;
  const TuneReport rep = tune(DRGeometry::plain(ds.constraint), ds.rhs_batch(ds.train), DRSettings{}, o);
  CHECK(rep.sigma_entries.size() == 100);
  CHECK(rep.projection_iterations > 0);
  CHECK(rep.projection_iterations <= 100LL * 150 * 100 + 8LL * 150 * 400);
}

TEST_CASE("impossible thresholds give a flagged best effort") {
  const Dataset ds = gen_dc3_family(10, 4, 4, 10, 3, Dc3Options{false, 1.0, 0.0, false, std::nullopt});
  TuneOptions o = small_options();
  o.max_cv = -1.0;
  const TuneReport rep = tune(DRGeometry::plain(ds.constraint), ds.rhs_batch(ds.train), DRSettings{}, o);
  CHECK(rep.no_sigma_candidate);
  CHECK(rep.no_iteration_candidate);
  CHECK(rep.chosen_iterations == o.iteration_grid.back());
  double best = std::numeric_limits<double>::infinity();
  for (const TuneEntry& e : rep.sigma_entries) best = std::min(best, e.max_cv);
  for (const TuneEntry& e : rep.sigma_entries) {
    if (e.sigma == rep.chosen_sigma) CHECK(e.max_cv == best);
  }
}

TEST_CASE("tuned settings need no more iterations than defaults on an ill-conditioned family") {
  Dc3Options opts{false, 1.0, 5.0, false, std::nullopt};
  const Dataset ds = gen_dc3_family(20, 8, 8, 60, 4, opts);
  REQUIRE(condition_number(ds.constraint.a()) >= 1e5);
  for (bool equilibrated : {false, true}) {
    const EquilibratedConstraint ec = equilibrate(ds.constraint);
    const DRGeometry g = equilibrated ? DRGeometry::equilibrated(ec) : DRGeometry::plain(ds.constraint);
    TuneOptions o = small_options();
    o.seed = 9;
    const TuneReport rep = tune(g, ds.rhs_batch(ds.val), DRSettings{}, o);
    // Fresh probes on the test contexts.
    std::mt19937_64 rng(10);
    const Matrix points = oracle::random_matrix(rng, 20, static_cast<Eigen::Index>(ds.test.size()));
    const Matrix rhs = ds.rhs_batch(ds.test);
    const int tuned = iterations_to(g, rhs, points, rep.apply(DRSettings{}), 1e-3);
    const int plain = iterations_to(g, rhs, points, DRSettings{}, 1e-3);
    INFO("equilibrated " << equilibrated << " sigma " << rep.chosen_sigma << " tuned " << tuned << " default " << plain);
    CHECK(tuned <= plain);
  }
}

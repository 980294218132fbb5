#include "pinet/autotune.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pinet/errors.hpp"
#include "pinet/problems.hpp"

namespace pinet {

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

struct Score {
  double max_cv = 0.0;
  double mean_ratio = 0.0;
};

Score score(const BatchProjection& bp, const Matrix& y_raw, const Vector& ref_dist) {
  Score s;
  s.max_cv = bp.cv.size() ? bp.cv.maxCoeff() : 0.0;
  // Probes that are already feasible have no defined ratio and are left out.
  double sum = 0.0;
  Eigen::Index counted = 0;
  for (Eigen::Index j = 0; j < y_raw.cols(); ++j) {
    if (ref_dist(j) <= 1e-12) continue;
    sum += (bp.y.col(j) - y_raw.col(j)).norm() / ref_dist(j);
    ++counted;
  }
  s.mean_ratio = counted ? sum / static_cast<double>(counted) : 1.0;
  return s;
}

}  // namespace

DRSettings TuneReport::apply(DRSettings base) const {
  base.sigma = chosen_sigma;
  base.n_iter_fwd = chosen_iterations;
  return base;
}

nlohmann::json TuneReport::to_json() const {
  auto entries = [](const std::vector<TuneEntry>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) {
      a.push_back({{"sigma", e.sigma},
                   {"iterations", e.iterations},
                   {"max_cv", e.max_cv},
                   {"mean_rel_distance", e.mean_rel_distance},
                   {"candidate", e.candidate}});
    }
    return a;
  };
  return {{"sigma_grid", sigma_grid},
          {"sigma_entries", entries(sigma_entries)},
          {"iteration_entries", entries(iteration_entries)},
          {"chosen_sigma", chosen_sigma},
          {"chosen_iterations", chosen_iterations},
          {"no_sigma_candidate", no_sigma_candidate},
          {"no_iteration_candidate", no_iteration_candidate},
          {"projection_iterations", projection_iterations}};
}

std::vector<double> sigma_grid(const TuneOptions& o) {
  if (o.sigma_points < 1 || !(o.sigma_min > 0.0) || o.sigma_max < o.sigma_min) {
    throw Error("tune: invalid sigma grid");
  }
  std::vector<double> g;
  const double lo = std::log10(o.sigma_min), hi = std::log10(o.sigma_max);
  for (int i = 0; i < o.sigma_points; ++i) {
    const double t = o.sigma_points == 1 ? 0.0 : static_cast<double>(i) / (o.sigma_points - 1);
    g.push_back(std::pow(10.0, lo + t * (hi - lo)));
  }
  return g;
}

TuneReport tune(const DRGeometry& g, const Matrix& rhs, const DRSettings& base,
                const TuneOptions& o) {
  if (rhs.cols() < 1) throw Error("tune: at least one context is required");
  if (o.probes < 1) throw Error("tune: at least one probe point is required");
  const Eigen::Index np = idx(o.probes);
  const Eigen::Index d = idx(g.d());

  std::mt19937_64 rng = instance_rng(o.seed, 0);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix y_raw(d, np);
  for (Eigen::Index j = 0; j < np; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) y_raw(i, j) = nd(rng);
  }
  Matrix b(rhs.rows(), np);
  for (Eigen::Index j = 0; j < np; ++j) b.col(j) = rhs.col(j % rhs.cols());

  DRSettings ref_st = base;
  ref_st.sigma = 1.0;
  const BatchProjection ref = dr_project_batch(g, b, y_raw, ref_st, o.reference_iterations);
  const Vector ref_dist = (ref.y - y_raw).colwise().norm().transpose();

  TuneReport rep;
  rep.sigma_grid = sigma_grid(o);
  int best = -1, best_any = -1;
  for (std::size_t k = 0; k < rep.sigma_grid.size(); ++k) {
    DRSettings st = base;
    st.sigma = rep.sigma_grid[k];
    const BatchProjection bp = dr_project_batch(g, b, y_raw, st, o.probe_iterations);
    rep.projection_iterations += static_cast<long long>(o.probe_iterations) * np;
    const Score s = score(bp, y_raw, ref_dist);
    TuneEntry e{st.sigma, o.probe_iterations, s.max_cv, s.mean_ratio,
                s.max_cv <= o.max_cv && s.mean_ratio <= o.max_rel_distance};
    rep.sigma_entries.push_back(e);
    const int ki = static_cast<int>(k);
    if (best_any < 0 || e.max_cv < rep.sigma_entries[static_cast<std::size_t>(best_any)].max_cv) {
      best_any = ki;
    }
    if (e.candidate &&
        (best < 0 || e.max_cv < rep.sigma_entries[static_cast<std::size_t>(best)].max_cv)) {
      best = ki;
    }
  }
  rep.no_sigma_candidate = best < 0;
  rep.chosen_sigma = rep.sigma_entries[static_cast<std::size_t>(best < 0 ? best_any : best)].sigma;

  // One run continued across the ascending iteration grid.
  DRSettings st = base;
  st.sigma = rep.chosen_sigma;
  Matrix s;
  int done = 0;
  int chosen = -1;
  std::vector<int> grid = o.iteration_grid;
  std::sort(grid.begin(), grid.end());
  for (int k_target : grid) {
    if (k_target <= done) continue;
    const BatchProjection bp =
        dr_project_batch(g, b, y_raw, st, k_target - done, done ? &s : nullptr);
    rep.projection_iterations += static_cast<long long>(k_target - done) * np;
    s = bp.s_final;
    done = k_target;
    const Score sc = score(bp, y_raw, ref_dist);
    TuneEntry e{st.sigma, k_target, sc.max_cv, sc.mean_ratio,
                sc.max_cv <= o.max_cv && sc.mean_ratio <= o.max_rel_distance};
    rep.iteration_entries.push_back(e);
    if (e.candidate && chosen < 0) chosen = k_target;
  }
  rep.no_iteration_candidate = chosen < 0;
  rep.chosen_iterations = chosen > 0 ? chosen : (grid.empty() ? base.n_iter_fwd : grid.back());
  return rep;
}

}  // namespace pinet

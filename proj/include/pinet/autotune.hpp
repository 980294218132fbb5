#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "pinet/projection.hpp"
#include "pinet/tensor.hpp"

namespace pinet {

struct TuneOptions {
  std::size_t probes = 150;
  int sigma_points = 100;
  double sigma_min = 1e-3;
  double sigma_max = 5.05;
  int probe_iterations = 100;
  std::vector<int> iteration_grid{50, 100, 150, 200, 250, 300, 350, 400};
  int reference_iterations = 5000;
  double max_cv = 1e-3;
  double max_rel_distance = 1.05;
  std::uint64_t seed = 0;
};

struct TuneEntry {
  double sigma = 0.0;
  int iterations = 0;
  double max_cv = 0.0;
  double mean_rel_distance = 0.0;
  bool candidate = false;
};

struct TuneReport {
  std::vector<double> sigma_grid;
  std::vector<TuneEntry> sigma_entries;
  std::vector<TuneEntry> iteration_entries;
  double chosen_sigma = 1.0;
  int chosen_iterations = 100;
  bool no_sigma_candidate = false;  // best effort (min CV) was returned
  bool no_iteration_candidate = false;
  long long projection_iterations = 0;  // excluding the reference runs

  /// `base` with sigma and n_iter_fwd replaced.
  DRSettings apply(DRSettings base) const;
  nlohmann::json to_json() const;
};

/// 100 log-spaced values in [sigma_min, sigma_max].
std::vector<double> sigma_grid(const TuneOptions& options);

/**
 * Picks sigma and the forward iteration budget from standard-normal probe
 * points paired with the given right-hand sides (one column per context,
 * reused cyclically).
 *
 * Each sigma is scored by the worst constraint violation after
 * probe_iterations and by the mean ratio ||y - y_raw|| / ||P(y_raw) - y_raw||,
 * where P(y_raw) comes from a long reference run. Among sigmas under both
 * thresholds the one with the lowest violation wins (ties go to the smaller
 * sigma). With that sigma the smallest iteration budget from the grid that
 * meets both thresholds is chosen; omega stays at its given value.
 */
TuneReport tune(const DRGeometry& g, const Matrix& rhs, const DRSettings& base,
                const TuneOptions& options = {});

}  // namespace pinet

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pinet/autotune.hpp"
#include "pinet/problems.hpp"
#include "pinet/projection.hpp"
#include "pinet/training.hpp"

namespace pinet {

/// Max constraint violation over a batch after each checkpoint, from one
/// continued run (checkpoints ascending).
std::vector<std::pair<int, double>> batch_cv_curve(const DRGeometry& g, const Matrix& b,
                                                   const Matrix& y_raw, const DRSettings& settings,
                                                   const std::vector<int>& checkpoints);

/// Smallest iteration count, probed every `stride` iterations up to
/// `max_iterations`, at which the max violation over the batch is <=
/// threshold; nullopt when it never gets there.
std::optional<int> iterations_to_threshold(const DRGeometry& g, const Matrix& b,
                                           const Matrix& y_raw, const DRSettings& settings,
                                           double threshold, int max_iterations, int stride = 5);

struct ProjectionConfigResult {
  std::string name;
  bool equilibrated = false;
  bool tuned = false;
  DRSettings settings;
  double setup_seconds = 0.0;
  std::vector<std::pair<int, double>> curve;  // (K, max CV)
  std::optional<int> iterations_to_threshold;
  double condition_number = 0.0;  // of the operator the iteration runs on
};

struct EquilibrationAblation {
  std::vector<ProjectionConfigResult> configs;  // Default, Auto, Pinet
  double threshold = kCvThreshold;

  const ProjectionConfigResult& get(const std::string& name) const;
  nlohmann::json to_json() const;
  std::string table() const;
};

struct EquilibrationAblationOptions {
  std::size_t eval_instances = 128;
  std::vector<int> checkpoints{25, 50, 100, 150, 200, 250, 300, 350, 400};
  int max_iterations = 2000;
  int stride = 5;
  double threshold = kCvThreshold;
  TuneOptions tune;
  RuizOptions ruiz;
  std::uint64_t seed = 0;
};

/**
 * Default (plain geometry, default settings), Auto (plain geometry, tuned
 * settings) and Pinet (equilibrated geometry, tuned settings) projecting
 * standard-normal points for test-split right-hand sides.
 */
EquilibrationAblation run_equilibration_ablation(const Dataset& ds,
                                                 const EquilibrationAblationOptions& options = {});

struct TrainModeResult {
  TrainMode mode;
  Metrics test;
  RunLog log;
};

struct TrainModeAblation {
  std::vector<TrainModeResult> runs;
  double budget_seconds = 0.0;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Trains one model per mode from the same initialization under the same
/// wall-clock budget (config.max_seconds) and scores each on `test_ids`.
TrainModeAblation run_train_mode_ablation(const Dataset& ds, const TrainConfig& config,
                                          const std::vector<TrainMode>& modes,
                                          const std::vector<std::size_t>& test_ids);

}  // namespace pinet

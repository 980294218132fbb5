#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pinet/autotune.hpp"
#include "pinet/layer.hpp"
#include "pinet/problems.hpp"

namespace pinet {

/// Run configuration. Read from a `key = value` file; `#` starts a comment.
struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  double lr_final_fraction = 1.0;  // cosine decay to lr * fraction; 1 keeps lr fixed
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  DRSettings settings;
  KrylovSettings krylov;
  bool equilibrate = false;
  bool reduce_equalities = true;
  bool standardize_inputs = true;  // fitted on the training contexts
  bool tune = false;
  std::size_t tune_probes = 150;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::ProjectAtTrain;
  double penalty_weight = 1.0;
  std::vector<std::size_t> hidden{200, 200};
  double max_seconds = 0.0;      // training wall-clock budget, 0 = none
  std::size_t val_cap = 0;       // validation instances per check, 0 = all
  std::size_t val_every = 1;     // epochs between validation checks

  /// Throws FormatError on an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  nlohmann::json to_json() const;

  static TrainConfig from_text(const std::string& text);
  /// MissingArtifactError when absent, FormatError when malformed.
  static TrainConfig from_file(const std::string& path);
};

/// Bias-corrected adaptive-moment optimizer over the backbone parameters.
class Adam {
 public:
  Adam(const Backbone& backbone, double beta1, double beta2, double eps);

  /// grads ordered as Backbone::bind.
  void step(Backbone& backbone, const std::vector<Tensor>& grads, double lr);
  long long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Eigen::ArrayXd> m_, v_;
};

struct Metrics {
  std::vector<std::size_t> ids;
  Vector j;
  Vector j_star;  // NaN where no oracle value exists
  Vector rs;      // NaN where no oracle value exists
  Vector cv;
  double mean_rs = 0.0;
  double max_rs = 0.0;
  double mean_cv = 0.0;
  double max_cv = 0.0;
  double mean_j = 0.0;
  double feasible_fraction = 0.0;  // CV <= cv_threshold
  double optimal_fraction = 0.0;   // CV <= cv_threshold and RS <= rs_threshold
  std::size_t rs_count = 0;
  double seconds = 0.0;

  nlohmann::json summary() const;
  void write_csv(const std::string& path) const;
};

inline constexpr double kCvThreshold = 1e-3;
inline constexpr double kRsThreshold = 0.05;

/// Metrics of given predictions (d x |ids|, one column per instance).
Metrics score_predictions(const Dataset& ds, const std::vector<std::size_t>& ids, const Matrix& y);

/// Predicts in chunks and scores; RS is only computed where an oracle exists.
Metrics evaluate(const PinetModel& model, const Dataset& ds, const std::vector<std::size_t>& ids);

struct EpochRecord {
  std::size_t epoch = 0;
  double elapsed = 0.0;  // seconds since setup started
  double train_loss = 0.0;
  double val_mean_rs = 0.0;
  double val_mean_cv = 0.0;
  double val_max_cv = 0.0;
  double val_optimal_fraction = 0.0;
  double krylov_converged = 1.0;
};

struct RunLog {
  double setup_seconds = 0.0;
  double train_seconds = 0.0;
  std::size_t steps = 0;
  bool time_budget_hit = false;
  std::vector<EpochRecord> epochs;

  void write_csv(const std::string& path) const;
};

struct ModelSetup {
  PinetModel model;
  std::optional<TuneReport> tune;
  double setup_seconds = 0.0;
};

/// Builds the backbone (hidden widths from the config), equilibrates and
/// tunes when requested. Tuning probes the validation right-hand sides.
ModelSetup make_model(const TrainConfig& config, const Dataset& ds);

/// Minibatch training on the train split with per-epoch validation.
/// Throws NumericalFailure when the loss stops being finite.
RunLog train(const TrainConfig& config, const Dataset& ds, PinetModel& model,
             double setup_seconds = 0.0);

/// Mean training loss over a batch of instances (no update).
double batch_loss(const TrainConfig& config, const Dataset& ds, const PinetModel& model,
                  const std::vector<std::size_t>& ids);

}  // namespace pinet

#include "pinet/ablation.hpp"

#include <chrono>
#include <cstdio>
#include <random>
#include <sstream>

#include "pinet/errors.hpp"

namespace pinet {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::vector<std::pair<int, double>> batch_cv_curve(const DRGeometry& g, const Matrix& b,
                                                   const Matrix& y_raw, const DRSettings& settings,
                                                   const std::vector<int>& checkpoints) {
  std::vector<std::pair<int, double>> out;
  Matrix s;
  int done = 0;
  for (int k : checkpoints) {
    if (k <= done) throw Error("batch_cv_curve: checkpoints must be positive and ascending");
    BatchProjection bp = dr_project_batch(g, b, y_raw, settings, k - done, done ? &s : nullptr);
    s = bp.s_final;
    done = k;
    out.emplace_back(k, bp.cv.maxCoeff());
  }
  return out;
}

std::optional<int> iterations_to_threshold(const DRGeometry& g, const Matrix& b,
                                           const Matrix& y_raw, const DRSettings& settings,
                                           double threshold, int max_iterations, int stride) {
  if (stride <= 0) throw Error("iterations_to_threshold: stride must be positive");
  Matrix s;
  for (int done = 0; done < max_iterations;) {
    const int step = std::min(stride, max_iterations - done);
    BatchProjection bp = dr_project_batch(g, b, y_raw, settings, step, done ? &s : nullptr);
    done += step;
    s = bp.s_final;
    if (bp.cv.maxCoeff() <= threshold) return done;
  }
  return std::nullopt;
}

const ProjectionConfigResult& EquilibrationAblation::get(const std::string& name) const {
  for (const auto& c : configs) {
    if (c.name == name) return c;
  }
  throw Error("ablation: no configuration named " + name);
}

nlohmann::json EquilibrationAblation::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : configs) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& [k, cv] : c.curve) curve.push_back({k, cv});
    out.push_back({{"name", c.name},
                   {"equilibrated", c.equilibrated},
                   {"tuned", c.tuned},
                   {"sigma", c.settings.sigma},
                   {"n_iter_fwd", c.settings.n_iter_fwd},
                   {"setup_seconds", c.setup_seconds},
                   {"condition_number", c.condition_number},
                   {"iterations_to_threshold",
                    c.iterations_to_threshold ? nlohmann::json(*c.iterations_to_threshold)
                                              : nlohmann::json(nullptr)},
                   {"curve", curve}});
  }
  return {{"threshold", threshold}, {"configs", out}};
}

std::string EquilibrationAblation::table() const {
  std::ostringstream os;
  os << "config,sigma,n_iter,cond,iters_to_cv";
  if (!configs.empty()) {
    for (const auto& [k, cv] : configs.front().curve) os << ",cv@" << k;
  }
  os << '\n';
  for (const auto& c : configs) {
    os << c.name << ',' << fmt("%.4g", c.settings.sigma) << ',' << c.settings.n_iter_fwd << ','
       << fmt("%.3e", c.condition_number) << ','
       << (c.iterations_to_threshold ? std::to_string(*c.iterations_to_threshold) : "none");
    for (const auto& [k, cv] : c.curve) os << ',' << fmt("%.3e", cv);
    os << '\n';
  }
  return os.str();
}

EquilibrationAblation run_equilibration_ablation(const Dataset& ds,
                                                 const EquilibrationAblationOptions& options) {
  std::vector<std::size_t> eval_ids = ds.test.empty() ? ds.train : ds.test;
  if (eval_ids.size() > options.eval_instances) eval_ids.resize(options.eval_instances);
  std::vector<std::size_t> probe_ids = ds.val.empty() ? ds.train : ds.val;
  if (probe_ids.size() > options.tune.probes) probe_ids.resize(options.tune.probes);
  if (eval_ids.empty() || probe_ids.empty()) throw Error("ablation: dataset has no instances");

  const Matrix b_eval = ds.rhs_batch(eval_ids);
  const Matrix b_probe = ds.rhs_batch(probe_ids);
  std::mt19937_64 rng = instance_rng(options.seed, ~std::uint64_t{2});
  std::normal_distribution<double> normal;
  Matrix y_raw(static_cast<Eigen::Index>(ds.constraint.d()), static_cast<Eigen::Index>(eval_ids.size()));
  for (Eigen::Index j = 0; j < y_raw.cols(); ++j) {
    for (Eigen::Index i = 0; i < y_raw.rows(); ++i) y_raw(i, j) = normal(rng);
  }

  EquilibrationAblation out;
  out.threshold = options.threshold;
  struct Spec {
    const char* name;
    bool equilibrate;
    bool tune;
  };
  for (const Spec spec : {Spec{"Default", false, false}, Spec{"Auto", false, true},
                          Spec{"Pinet", true, true}}) {
    ProjectionConfigResult r;
    r.name = spec.name;
    r.equilibrated = spec.equilibrate;
    r.tuned = spec.tune;
    const auto t0 = Clock::now();
    const DRGeometry g = spec.equilibrate
                             ? DRGeometry::equilibrated(equilibrate(ds.constraint, options.ruiz))
                             : DRGeometry::plain(ds.constraint);
    if (spec.tune) {
      TuneOptions to = options.tune;
      to.seed = options.seed;
      r.settings = tune(g, b_probe, DRSettings{}, to).apply(DRSettings{});
    }
    r.setup_seconds = seconds_since(t0);
    r.condition_number = condition_number(g.op().a());
    r.curve = batch_cv_curve(g, b_eval, y_raw, r.settings, options.checkpoints);
    r.iterations_to_threshold = iterations_to_threshold(g, b_eval, y_raw, r.settings,
                                                        options.threshold, options.max_iterations,
                                                        options.stride);
    out.configs.push_back(std::move(r));
  }
  return out;
}

nlohmann::json TrainModeAblation::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : runs) {
    nlohmann::json s = r.test.summary();
    s["mode"] = to_string(r.mode);
    s["steps"] = r.log.steps;
    s["train_seconds"] = r.log.train_seconds;
    out.push_back(s);
  }
  return {{"budget_seconds", budget_seconds}, {"runs", out}};
}

std::string TrainModeAblation::table() const {
  std::ostringstream os;
  os << "mode,steps,train_seconds,mean_rs,max_rs,mean_cv,max_cv,optimal_fraction\n";
  for (const auto& r : runs) {
    os << to_string(r.mode) << ',' << r.log.steps << ',' << fmt("%.1f", r.log.train_seconds) << ','
       << fmt("%.5g", r.test.mean_rs) << ',' << fmt("%.5g", r.test.max_rs) << ','
       << fmt("%.3e", r.test.mean_cv) << ',' << fmt("%.3e", r.test.max_cv) << ','
       << fmt("%.3f", r.test.optimal_fraction) << '\n';
  }
  return os.str();
}

TrainModeAblation run_train_mode_ablation(const Dataset& ds, const TrainConfig& config,
                                          const std::vector<TrainMode>& modes,
                                          const std::vector<std::size_t>& test_ids) {
  TrainModeAblation out;
  out.budget_seconds = config.max_seconds;
  for (TrainMode mode : modes) {
    TrainConfig c = config;
    c.mode = mode;
    ModelSetup setup = make_model(c, ds);
    RunLog log = train(c, ds, setup.model, setup.setup_seconds);
    out.runs.push_back({mode, evaluate(setup.model, ds, test_ids), std::move(log)});
  }
  return out;
}

}  // namespace pinet

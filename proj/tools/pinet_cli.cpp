#include <cstdio>
#include <fstream>
#include <random>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pinet/ablation.hpp"
#include "pinet/autotune.hpp"
#include "pinet/container.hpp"
#include "pinet/errors.hpp"
#include "pinet/problems.hpp"
#include "pinet/projection.hpp"
#include "pinet/training.hpp"

using namespace pinet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitMissing = 4;

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw MissingArtifactError("cannot open for writing: " + path);
  f << text;
}

TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  TrainConfig c = path.empty() ? TrainConfig{} : TrainConfig::from_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw FormatError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.validate();
  return c;
}

const std::vector<std::size_t>& split_ids(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") return ds.val;
  if (split == "test") return ds.test;
  throw FormatError("unknown split '" + split + "' (train, val or test)");
}

std::vector<std::size_t> capped(std::vector<std::size_t> ids, std::size_t cap) {
  if (cap > 0 && ids.size() > cap) ids.resize(cap);
  return ids;
}

/// One point per line, comma or whitespace separated.
Matrix read_points(const std::string& path, std::size_t d) {
  std::ifstream f(path);
  if (!f) throw MissingArtifactError("point file not found: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    for (char& ch : line) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream in(line);
    std::vector<double> row;
    std::string tok;
    while (in >> tok) {
      try {
        row.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw FormatError("point file line " + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    if (row.empty()) continue;
    if (row.size() != d) {
      throw FormatError("point file line " + std::to_string(lineno) + ": expected " +
                        std::to_string(d) + " values, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  Matrix out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (std::size_t i = 0; i < d; ++i) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i];
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw FormatError("expected a comma-separated list of integers, got '" + s + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projection-layer training harness"};
  app.require_subcommand(1);

  // generate
  std::string family, out_path;
  std::size_t samples = 2000, dim = 100, n_eq = 50, n_ineq = 50, horizon = 10, d1 = 50, d2 = 50,
              vehicles = 1;
  std::uint64_t seed = 0;
  double lambda = 0.0, nu = 0.0, scale_decades = 0.0;
  bool no_oracle = false;
  auto* gen = app.add_subcommand("generate", "Write a benchmark dataset");
  gen->add_option("--family", family, "dc3 | dc3-nonconvex | mpc | soc | trajectory")->required();
  gen->add_option("--samples", samples, "Instances (batch size for soc)");
  gen->add_option("--dim", dim, "Variables (dc3)");
  gen->add_option("--eq", n_eq, "Equality rows (dc3)");
  gen->add_option("--ineq", n_ineq, "Inequality rows (dc3)");
  gen->add_option("--scale-decades", scale_decades, "Ill-conditioning spread (dc3)");
  gen->add_option("--horizon", horizon, "Horizon (mpc, trajectory)");
  gen->add_option("--d1", d1, "Free block size (soc)");
  gen->add_option("--d2", d2, "Cone size (soc)");
  gen->add_option("--vehicles", vehicles, "Vehicles (trajectory)");
  gen->add_option("--lambda", lambda, "Preference weight (trajectory)");
  gen->add_option("--nu", nu, "Coverage weight (trajectory)");
  gen->add_option("--seed", seed, "Generation seed");
  gen->add_flag("--no-oracle", no_oracle, "Skip the oracle solves");
  gen->add_option("--out", out_path, "Dataset file")->required();

  // shared
  std::string data_path, config_path, model_path, log_path, report_path, split = "test";
  std::vector<std::string> overrides;
  std::size_t cap = 0;

  auto* tun = app.add_subcommand("tune", "Pick sigma and the forward iteration budget");
  tun->add_option("--data", data_path, "Dataset file")->required();
  tun->add_option("--config", config_path, "Run config (key = value)");
  tun->add_option("--set", overrides, "Override a config entry, key=value");
  tun->add_option("--out", report_path, "Report JSON (default stdout)");

  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--data", data_path, "Dataset file")->required();
  trn->add_option("--config", config_path, "Run config (key = value)");
  trn->add_option("--set", overrides, "Override a config entry, key=value");
  trn->add_option("--out", model_path, "Checkpoint file")->required();
  trn->add_option("--log", log_path, "Learning-curve CSV");
  trn->add_option("--report", report_path, "Run summary JSON");

  std::string metrics_path;
  int iterations = 0;
  auto* evl = app.add_subcommand("eval", "Score a checkpoint on a split");
  evl->add_option("--model", model_path, "Checkpoint file")->required();
  evl->add_option("--data", data_path, "Dataset file")->required();
  evl->add_option("--split", split, "train | val | test");
  evl->add_option("--limit", cap, "Use at most this many instances");
  evl->add_option("--out", metrics_path, "Per-instance CSV");
  evl->add_option("--iterations", iterations, "Override the test-time iteration count");

  std::string points_path;
  std::size_t instance = 0;
  double sigma = 1.0, omega = 1.7;
  bool equilibrated = false;
  auto* prj = app.add_subcommand("project", "Project points onto an instance's feasible set");
  prj->add_option("--data", data_path, "Dataset file")->required();
  prj->add_option("--instance", instance, "Instance whose constraint set is used");
  prj->add_option("--points", points_path, "One point per line")->required();
  prj->add_option("--iterations", iterations, "Iterations (default 100)");
  prj->add_option("--sigma", sigma, "Step size");
  prj->add_option("--omega", omega, "Relaxation");
  prj->add_flag("--equilibrate", equilibrated, "Run on the equilibrated operator");
  prj->add_option("--out", out_path, "Output CSV (default stdout)");

  std::string checkpoints = "25,50,100,200,400";
  auto* bch = app.add_subcommand("bench", "Constraint violation versus iteration count");
  bch->add_option("--data", data_path, "Dataset file")->required();
  bch->add_option("--checkpoints", checkpoints, "Comma-separated iteration counts");
  bch->add_option("--limit", cap, "Instances (default 64)");
  bch->add_option("--sigma", sigma, "Step size");
  bch->add_option("--omega", omega, "Relaxation");
  bch->add_flag("--equilibrate", equilibrated, "Run on the equilibrated operator");
  bch->add_option("--seed", seed, "Seed for the raw points");
  bch->add_option("--out", out_path, "Output CSV (default stdout)");

  std::string kind = "equilibration";
  double budget = 0.0;
  auto* abl = app.add_subcommand("ablate", "Configuration comparisons");
  abl->add_option("--kind", kind, "equilibration | train-mode");
  abl->add_option("--data", data_path, "Dataset file")->required();
  abl->add_option("--config", config_path, "Run config for train-mode");
  abl->add_option("--set", overrides, "Override a config entry, key=value");
  abl->add_option("--budget", budget, "Wall-clock training budget per mode, seconds");
  abl->add_option("--limit", cap, "Evaluation instances");
  abl->add_option("--seed", seed, "Seed");
  abl->add_option("--out", out_path, "Comparison table CSV (default stdout)");
  abl->add_option("--report", report_path, "Full JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) {
      Dataset ds;
      if (family == "dc3" || family == "dc3-nonconvex") {
        Dc3Options o;
        o.nonconvex = family == "dc3-nonconvex";
        o.solve_oracle = !no_oracle;
        o.scale_decades = scale_decades;
        ds = gen_dc3_family(dim, n_eq, n_ineq, samples, seed, o);
      } else if (family == "mpc") {
        MpcOptions o;
        o.solve_oracle = !no_oracle;
        ds = gen_toy_mpc(samples, horizon, seed, o);
      } else if (family == "soc") {
        ds = gen_soc_family(d1, d2, samples, seed);
      } else if (family == "trajectory") {
        TrajectoryOptions o;
        o.lambda = lambda;
        o.nu = nu;
        o.solve_oracle = !no_oracle;
        ds = gen_trajectory_family(vehicles, horizon, samples, seed, o);
      } else {
        throw FormatError("unknown family '" + family + "'");
      }
      save_dataset(out_path, ds);
      std::size_t ok = 0;
      for (auto f : ds.oracle_ok) ok += f;
      std::cerr << "wrote " << ds.size() << " instances (" << ds.train.size() << "/" << ds.val.size()
                << "/" << ds.test.size() << "), oracle ok " << ok << "\n";
    } else if (*tun) {
      const Dataset ds = load_dataset(data_path);
      TrainConfig c = load_config(config_path, overrides);
      c.tune = true;
      ModelSetup setup = make_model(c, ds);
      nlohmann::json j = setup.tune->to_json();
      j["config"] = c.to_json();
      j["setup_seconds"] = setup.setup_seconds;
      write_text(report_path, j.dump(2) + "\n");
    } else if (*trn) {
      const Dataset ds = load_dataset(data_path);
      const TrainConfig c = load_config(config_path, overrides);
      ModelSetup setup = make_model(c, ds);
      RunLog log = train(c, ds, setup.model, setup.setup_seconds);
      save_model(model_path, setup.model);
      if (!log_path.empty()) log.write_csv(log_path);
      const Metrics m = evaluate(setup.model, ds, ds.val);
      nlohmann::json j = {{"config", c.to_json()},
                          {"setup_seconds", log.setup_seconds},
                          {"train_seconds", log.train_seconds},
                          {"steps", log.steps},
                          {"time_budget_hit", log.time_budget_hit},
                          {"validation", m.summary()}};
      if (setup.tune) j["tune"] = setup.tune->to_json();
      if (!report_path.empty()) write_text(report_path, j.dump(2) + "\n");
      std::cerr << "val mean RS " << m.mean_rs << ", max CV " << m.max_cv << "\n";
    } else if (*evl) {
      const Dataset ds = load_dataset(data_path);
      PinetModel model = load_model(model_path);
      if (iterations > 0) model.mutable_options().settings.n_iter_test = iterations;
      const Metrics m = evaluate(model, ds, capped(split_ids(ds, split), cap));
      if (!metrics_path.empty()) m.write_csv(metrics_path);
      std::cout << m.summary().dump(2) << "\n";
    } else if (*prj) {
      const Dataset ds = load_dataset(data_path);
      if (instance >= ds.size()) throw FormatError("instance index out of range");
      const Matrix pts = read_points(points_path, ds.constraint.d());
      DRSettings st;
      st.sigma = sigma;
      st.omega = omega;
      st.validate();
      const int k = iterations > 0 ? iterations : st.n_iter_fwd;
      const DRGeometry g = equilibrated ? DRGeometry::equilibrated(equilibrate(ds.constraint))
                                        : DRGeometry::plain(ds.constraint);
      const Vector b = ds.rhs_for(instance);
      const BatchProjection bp = dr_project_batch(g, b, pts, st, k);
      std::ostringstream os;
      os.precision(17);
      for (std::size_t i = 0; i < ds.constraint.d(); ++i) os << "y" << i << ',';
      os << "cv,distance\n";
      for (Eigen::Index j = 0; j < pts.cols(); ++j) {
        for (Eigen::Index i = 0; i < bp.y.rows(); ++i) os << bp.y(i, j) << ',';
        os << bp.cv(j) << ',' << (bp.y.col(j) - pts.col(j)).norm() << '\n';
      }
      write_text(out_path, os.str());
    } else if (*bch) {
      const Dataset ds = load_dataset(data_path);
      std::vector<std::size_t> ids = capped(ds.test.empty() ? ds.train : ds.test, cap ? cap : 64);
      DRSettings st;
      st.sigma = sigma;
      st.omega = omega;
      st.validate();
      const DRGeometry g = equilibrated ? DRGeometry::equilibrated(equilibrate(ds.constraint))
                                        : DRGeometry::plain(ds.constraint);
      std::mt19937_64 rng = instance_rng(seed, 0);
      std::normal_distribution<double> normal;
      Matrix y_raw(static_cast<Eigen::Index>(ds.constraint.d()), static_cast<Eigen::Index>(ids.size()));
      for (Eigen::Index j = 0; j < y_raw.cols(); ++j) {
        for (Eigen::Index i = 0; i < y_raw.rows(); ++i) y_raw(i, j) = normal(rng);
      }
      const auto curve = batch_cv_curve(g, ds.rhs_batch(ids), y_raw, st, parse_ints(checkpoints));
      std::ostringstream os;
      os << "iterations,max_cv\n";
      os.precision(10);
      for (const auto& [k, cv] : curve) os << k << ',' << cv << '\n';
      write_text(out_path, os.str());
    } else if (*abl) {
      const Dataset ds = load_dataset(data_path);
      if (kind == "equilibration") {
        EquilibrationAblationOptions o;
        o.seed = seed;
        if (cap) o.eval_instances = cap;
        const EquilibrationAblation r = run_equilibration_ablation(ds, o);
        write_text(out_path, r.table());
        if (!report_path.empty()) write_text(report_path, r.to_json().dump(2) + "\n");
      } else if (kind == "train-mode") {
        TrainConfig c = load_config(config_path, overrides);
        if (budget > 0) c.max_seconds = budget;
        if (c.max_seconds <= 0) throw FormatError("train-mode ablation needs a wall-clock budget");
        const auto r = run_train_mode_ablation(
            ds, c, {TrainMode::ProjectAtTrain, TrainMode::InferenceOnly}, capped(ds.test, cap));
        write_text(out_path, r.table());
        if (!report_path.empty()) write_text(report_path, r.to_json().dump(2) + "\n");
      } else {
        throw FormatError("unknown ablation kind '" + kind + "'");
      }
    }
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissing;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

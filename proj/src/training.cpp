#include "pinet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "pinet/errors.hpp"
#include "pinet/parallel.hpp"

namespace pinet {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw FormatError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  const double x = parse_double(key, v);
  if (x < 0 || x != std::floor(x)) {
    throw FormatError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw FormatError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

RowMatrix context_rows(const Dataset& ds, const std::vector<std::size_t>& ids) {
  return ds.context_batch(ids).transpose();
}

}  // namespace

// ---------------------------------------------------------------------------

void TrainConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "epochs") epochs = parse_count(key, v);
  else if (key == "batch_size") batch_size = parse_count(key, v);
  else if (key == "learning_rate") learning_rate = parse_double(key, v);
  else if (key == "lr_final_fraction") lr_final_fraction = parse_double(key, v);
  else if (key == "beta1") beta1 = parse_double(key, v);
  else if (key == "beta2") beta2 = parse_double(key, v);
  else if (key == "adam_eps") adam_eps = parse_double(key, v);
  else if (key == "sigma") settings.sigma = parse_double(key, v);
  else if (key == "omega") settings.omega = parse_double(key, v);
  else if (key == "n_iter_fwd") settings.n_iter_fwd = static_cast<int>(parse_count(key, v));
  else if (key == "n_iter_test") settings.n_iter_test = static_cast<int>(parse_count(key, v));
  else if (key == "n_iter_bwd") settings.n_iter_bwd = static_cast<int>(parse_count(key, v));
  else if (key == "krylov_tol") krylov.tol = parse_double(key, v);
  else if (key == "equilibrate") equilibrate = parse_bool(key, v);
  else if (key == "reduce_equalities") reduce_equalities = parse_bool(key, v);
  else if (key == "standardize_inputs") standardize_inputs = parse_bool(key, v);
  else if (key == "tune") tune = parse_bool(key, v);
  else if (key == "tune_probes") tune_probes = parse_count(key, v);
  else if (key == "seed") seed = parse_count(key, v);
  else if (key == "mode") {
    try {
      mode = train_mode_from_string(v);
    } catch (const Error& e) {
      throw FormatError(std::string("config: ") + e.what());
    }
  } else if (key == "penalty_weight") penalty_weight = parse_double(key, v);
  else if (key == "hidden") {
    hidden.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!trim(item).empty()) hidden.push_back(parse_count(key, trim(item)));
    }
  } else if (key == "max_seconds") max_seconds = parse_double(key, v);
  else if (key == "val_cap") val_cap = parse_count(key, v);
  else if (key == "val_every") val_every = parse_count(key, v);
  else throw FormatError("config: unknown key '" + key + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw FormatError("config: " + what); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (!(lr_final_fraction > 0 && lr_final_fraction <= 1)) fail("lr_final_fraction must be in (0, 1]");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must be in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (!(krylov.tol > 0)) fail("krylov_tol must be positive");
  if (!(penalty_weight >= 0)) fail("penalty_weight must be non-negative");
  if (max_seconds < 0) fail("max_seconds must be non-negative");
  if (val_every == 0) fail("val_every must be positive");
  if (tune_probes == 0) fail("tune_probes must be positive");
  for (std::size_t h : hidden) {
    if (h == 0) fail("hidden widths must be positive");
  }
  try {
    settings.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"lr_final_fraction", lr_final_fraction},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"sigma", settings.sigma},
          {"omega", settings.omega},
          {"n_iter_fwd", settings.n_iter_fwd},
          {"n_iter_test", settings.n_iter_test},
          {"n_iter_bwd", settings.n_iter_bwd},
          {"krylov_tol", krylov.tol},
          {"equilibrate", equilibrate},
          {"reduce_equalities", reduce_equalities},
          {"standardize_inputs", standardize_inputs},
          {"tune", tune},
          {"tune_probes", tune_probes},
          {"seed", seed},
          {"mode", to_string(mode)},
          {"penalty_weight", penalty_weight},
          {"hidden", hidden},
          {"max_seconds", max_seconds},
          {"val_cap", val_cap},
          {"val_every", val_every}};
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifactError("config file not found: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

// ---------------------------------------------------------------------------

Adam::Adam(const Backbone& backbone, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (std::size_t k = 0; k < backbone.layers(); ++k) {
    m_.push_back(Eigen::ArrayXd::Zero(backbone.weights[k].size()));
    v_.push_back(Eigen::ArrayXd::Zero(backbone.weights[k].size()));
    m_.push_back(Eigen::ArrayXd::Zero(backbone.biases[k].size()));
    v_.push_back(Eigen::ArrayXd::Zero(backbone.biases[k].size()));
  }
}

void Adam::step(Backbone& backbone, const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != m_.size()) throw DimensionError("Adam: gradient count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < grads.size(); ++k) {
    double* p = (k % 2 == 0) ? backbone.weights[k / 2].data() : backbone.biases[k / 2].data();
    const auto n = m_[k].size();
    if (static_cast<Eigen::Index>(grads[k].size()) != n) {
      throw DimensionError("Adam: gradient shape mismatch");
    }
    Eigen::Map<const Eigen::ArrayXd> g(grads[k].values().data(), n);
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g.square();
    Eigen::Map<Eigen::ArrayXd> theta(p, n);
    theta -= lr * (m_[k] / c1) / ((v_[k] / c2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------

nlohmann::json Metrics::summary() const {
  return {{"instances", ids.size()},
          {"rs_instances", rs_count},
          {"mean_rs", mean_rs},
          {"max_rs", max_rs},
          {"mean_cv", mean_cv},
          {"max_cv", max_cv},
          {"mean_objective", mean_j},
          {"feasible_fraction", feasible_fraction},
          {"optimal_fraction", optimal_fraction},
          {"seconds", seconds}};
}

void Metrics::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw MissingArtifactError("cannot open for writing: " + path);
  f.precision(17);
  f << "instance,objective,objective_star,rs,cv\n";
  for (std::size_t k = 0; k < ids.size(); ++k) {
    f << ids[k] << ',' << j[idx(k)] << ',' << j_star[idx(k)] << ',' << rs[idx(k)] << ','
      << cv[idx(k)] << '\n';
  }
}

Metrics score_predictions(const Dataset& ds, const std::vector<std::size_t>& ids, const Matrix& y) {
  const auto n = ids.size();
  if (static_cast<std::size_t>(y.cols()) != n || static_cast<std::size_t>(y.rows()) != ds.constraint.d()) {
    throw DimensionError("score_predictions: prediction shape mismatch");
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Metrics m;
  m.ids = ids;
  m.j.resize(idx(n));
  m.j_star = Vector::Constant(idx(n), nan);
  m.rs = Vector::Constant(idx(n), nan);
  m.cv.resize(idx(n));
  parallel_for(n, [&](std::size_t k) {
    const std::size_t i = ids[k];
    const Vector yi = y.col(idx(k));
    const Vector x = ds.contexts.col(idx(i));
    m.j[idx(k)] = evaluate_objective(ds.objective, yi, x);
    m.cv[idx(k)] = ds.constraint_for(i).feasibility_residual(yi);
    if (ds.has_oracle() && ds.oracle_ok.at(i)) {
      m.j_star[idx(k)] = ds.j_star[idx(i)];
      m.rs[idx(k)] = relative_suboptimality(m.j[idx(k)], ds.j_star[idx(i)]);
    }
  });
  std::size_t feasible = 0, optimal = 0;
  double rs_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const bool ok = m.cv[idx(k)] <= kCvThreshold;
    feasible += ok;
    const double r = m.rs[idx(k)];
    if (!std::isnan(r)) {
      ++m.rs_count;
      rs_sum += r;
      m.max_rs = std::max(m.max_rs, r);
      optimal += ok && r <= kRsThreshold;
    }
  }
  if (n > 0) {
    m.mean_cv = m.cv.mean();
    m.max_cv = m.cv.maxCoeff();
    m.mean_j = m.j.mean();
    m.feasible_fraction = static_cast<double>(feasible) / static_cast<double>(n);
  }
  if (m.rs_count > 0) {
    m.mean_rs = rs_sum / static_cast<double>(m.rs_count);
    m.optimal_fraction = static_cast<double>(optimal) / static_cast<double>(m.rs_count);
  } else {
    m.mean_rs = nan;
    m.max_rs = nan;
    m.optimal_fraction = nan;
  }
  return m;
}

Metrics evaluate(const PinetModel& model, const Dataset& ds, const std::vector<std::size_t>& ids) {
  const auto t0 = Clock::now();
  constexpr std::size_t kChunk = 1024;
  Matrix y(idx(ds.constraint.d()), idx(ids.size()));
  for (std::size_t begin = 0; begin < ids.size(); begin += kChunk) {
    const std::size_t end = std::min(ids.size(), begin + kChunk);
    const std::vector<std::size_t> chunk(ids.begin() + static_cast<std::ptrdiff_t>(begin),
                                         ids.begin() + static_cast<std::ptrdiff_t>(end));
    y.middleCols(idx(begin), idx(end - begin)) = model.predict(context_rows(ds, chunk)).transpose();
  }
  const double predict_seconds = seconds_since(t0);
  Metrics m = score_predictions(ds, ids, y);
  m.seconds = predict_seconds;
  return m;
}

// ---------------------------------------------------------------------------

void RunLog::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw MissingArtifactError("cannot open for writing: " + path);
  f.precision(10);
  f << "epoch,elapsed_seconds,train_loss,val_mean_rs,val_mean_cv,val_max_cv,val_optimal_fraction,"
       "krylov_converged\n";
  for (const auto& e : epochs) {
    f << e.epoch << ',' << e.elapsed << ',' << e.train_loss << ',' << e.val_mean_rs << ','
      << e.val_mean_cv << ',' << e.val_max_cv << ',' << e.val_optimal_fraction << ','
      << e.krylov_converged << '\n';
  }
}

ModelSetup make_model(const TrainConfig& config, const Dataset& ds) {
  config.validate();
  const auto t0 = Clock::now();
  const std::size_t in = ds.context_dim();
  const std::size_t out = ds.completion ? static_cast<std::size_t>(ds.completion->input_map.cols())
                                        : ds.constraint.d();
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(out);
  LayerOptions opts;
  opts.settings = config.settings;
  opts.krylov = config.krylov;
  opts.mode = config.mode;
  opts.equilibrate = config.equilibrate;
  opts.penalty_weight = config.penalty_weight;
  opts.reduce_equalities = config.reduce_equalities;
  Backbone backbone = Backbone::he_uniform(dims, config.seed);
  if (config.standardize_inputs && !ds.train.empty()) {
    backbone.fit_standardization(ds.context_batch(ds.train).transpose());
  }
  PinetModel model(std::move(backbone), ConstraintSource::from_dataset(ds), opts, ds.completion);
  std::optional<TuneReport> report;
  if (config.tune) {
    std::vector<std::size_t> probe_ids = ds.val.empty() ? ds.train : ds.val;
    if (probe_ids.empty()) throw FormatError("tune: dataset has no instances to probe");
    if (probe_ids.size() > config.tune_probes) probe_ids.resize(config.tune_probes);
    TuneOptions to;
    to.probes = config.tune_probes;
    to.seed = config.seed;
    report = tune(model.geometry(), ds.rhs_batch(probe_ids), config.settings, to);
    model.mutable_options().settings = report->apply(config.settings);
  }
  return {std::move(model), std::move(report), seconds_since(t0)};
}

double batch_loss(const TrainConfig& config, const Dataset& ds, const PinetModel& model,
                  const std::vector<std::size_t>& ids) {
  const RowMatrix x = context_rows(ds, ids);
  ad::Tape tape;
  const auto params = model.backbone().bind(tape);
  ad::Var y = model.forward_taped(tape, params, x);
  ad::Var loss = ad::mean(objective_batch(ds.objective, y, x));
  if (config.mode == TrainMode::SoftPenalty) {
    loss = ad::add(loss, ad::scale(ad::mean(model.violation_penalty(y, x)), config.penalty_weight));
  }
  return loss.value().item();
}

RunLog train(const TrainConfig& config, const Dataset& ds, PinetModel& model, double setup_seconds) {
  config.validate();
  if (ds.train.empty() && config.epochs > 0) throw FormatError("train: dataset has no train split");
  RunLog log;
  log.setup_seconds = setup_seconds;
  const auto t0 = Clock::now();
  auto elapsed = [&] { return setup_seconds + seconds_since(t0); };

  std::vector<std::size_t> val_ids = ds.val;
  if (config.val_cap > 0 && val_ids.size() > config.val_cap) val_ids.resize(config.val_cap);

  auto record = [&](std::size_t epoch, double loss, double krylov) {
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = loss;
    r.krylov_converged = krylov;
    if (!val_ids.empty()) {
      const Metrics m = evaluate(model, ds, val_ids);
      r.val_mean_rs = m.mean_rs;
      r.val_mean_cv = m.mean_cv;
      r.val_max_cv = m.max_cv;
      r.val_optimal_fraction = m.optimal_fraction;
    }
    r.elapsed = elapsed();
    log.epochs.push_back(r);
  };
  record(0, std::numeric_limits<double>::quiet_NaN(), 1.0);

  Adam adam(model.backbone(), config.beta1, config.beta2, config.adam_eps);
  std::mt19937_64 rng = instance_rng(config.seed, ~std::uint64_t{1});
  std::vector<std::size_t> order = ds.train;
  const std::size_t batches = (order.size() + config.batch_size - 1) / std::max<std::size_t>(1, config.batch_size);
  const double total_steps = static_cast<double>(config.epochs * batches);

  for (std::size_t epoch = 1; epoch <= config.epochs && !log.time_budget_hit; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    LayerStats stats;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const RowMatrix x = context_rows(ds, ids);
      ad::Tape tape;
      const auto params = model.backbone().bind(tape);
      ad::Var y = model.forward_taped(tape, params, x, &stats);
      ad::Var loss = ad::mean(objective_batch(ds.objective, y, x));
      if (config.mode == TrainMode::SoftPenalty) {
        loss = ad::add(loss, ad::scale(ad::mean(model.violation_penalty(y, x)), config.penalty_weight));
      }
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericalFailure("training loss is not finite at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(b),
                               static_cast<int>(log.steps));
      }
      ad::Gradients g = tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (const auto& p : params) grads.push_back(g.of(p));
      double lr = config.learning_rate;
      if (config.lr_final_fraction < 1.0 && total_steps > 1) {
        const double frac = static_cast<double>(log.steps) / (total_steps - 1);
        const double floor = config.lr_final_fraction;
        lr *= floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
      }
      adam.step(model.backbone(), grads, lr);
      ++log.steps;
      loss_sum += value * static_cast<double>(ids.size());
      loss_count += ids.size();
      if (config.max_seconds > 0 && seconds_since(t0) >= config.max_seconds) {
        log.time_budget_hit = true;
        break;
      }
    }
    const double mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    if (epoch % config.val_every == 0 || epoch == config.epochs || log.time_budget_hit) {
      record(epoch, mean_loss, stats.converged_fraction());
    }
  }
  log.train_seconds = seconds_since(t0);
  return log;
}

}  // namespace pinet

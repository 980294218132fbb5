#include "pinet/layer.hpp"

#include <cmath>
#include <random>

#include "pinet/errors.hpp"

namespace pinet {

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

Matrix columns(const RowMatrix& rows) { return rows.transpose(); }
RowMatrix rows_of(const Matrix& cols) { return cols.transpose(); }

// Residual state of the taped projection.
struct ProjectionResidual {
  std::shared_ptr<FixedPointResidualOp> op;
};

}  // namespace

// ---------------------------------------------------------------------------

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    n += static_cast<std::size_t>(weights[k].size() + biases[k].size());
  }
  return n;
}

Backbone Backbone::zeros(std::vector<std::size_t> dims) {
  if (dims.size() < 2) throw Error("Backbone: need at least input and output dimensions");
  Backbone b;
  b.dims = std::move(dims);
  for (std::size_t k = 0; k + 1 < b.dims.size(); ++k) {
    b.weights.push_back(RowMatrix::Zero(idx(b.dims[k]), idx(b.dims[k + 1])));
    b.biases.push_back(Vector::Zero(idx(b.dims[k + 1])));
  }
  return b;
}

Backbone Backbone::he_uniform(std::vector<std::size_t> dims, std::uint64_t seed) {
  Backbone b = zeros(std::move(dims));
  for (std::size_t k = 0; k < b.weights.size(); ++k) {
    std::mt19937_64 rng = instance_rng(seed, k);
    const double lim = std::sqrt(6.0 / static_cast<double>(b.dims[k]));
    std::uniform_real_distribution<double> ud(-lim, lim);
    RowMatrix& w = b.weights[k];
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = ud(rng);
    }
  }
  return b;
}

void Backbone::fit_standardization(const RowMatrix& x) {
  if (x.cols() != idx(input_dim()) || x.rows() == 0) {
    throw DimensionError("Backbone: standardization needs samples of the input width");
  }
  input_shift = x.colwise().mean().transpose();
  input_scale.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double sd = std::sqrt((x.col(j).array() - input_shift(j)).square().mean());
    input_scale(j) = sd > 1e-12 ? sd : 1.0;
  }
}

RowMatrix Backbone::standardize(const RowMatrix& x) const {
  if (x.cols() != idx(input_dim())) throw DimensionError("Backbone: input width mismatch");
  if (input_shift.size() == 0) return x;
  RowMatrix out = x.rowwise() - input_shift.transpose();
  out.array().rowwise() /= input_scale.transpose().array();
  return out;
}

RowMatrix Backbone::forward(const RowMatrix& x) const {
  RowMatrix h = standardize(x);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    RowMatrix next = h * weights[k];
    next.rowwise() += biases[k].transpose();
    if (k + 1 < weights.size()) next = next.cwiseMax(0.0);
    h = std::move(next);
  }
  return h;
}

std::vector<ad::Var> Backbone::bind(ad::Tape& tape) const {
  std::vector<ad::Var> p;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    p.push_back(tape.leaf(Tensor::from_matrix(weights[k])));
    p.push_back(tape.leaf(Tensor::from_vector(biases[k])));
  }
  return p;
}

ad::Var Backbone::forward(const std::vector<ad::Var>& params, const ad::Var& x) const {
  if (params.size() != 2 * weights.size()) throw DimensionError("Backbone: parameter count");
  ad::Var h = x;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    h = ad::add_row(ad::matmul(h, params[2 * k]), params[2 * k + 1]);
    if (k + 1 < weights.size()) h = ad::relu(h);
  }
  return h;
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::ProjectAtTrain: return "project_at_train";
    case TrainMode::InferenceOnly: return "inference_only";
    case TrainMode::SoftPenalty: return "soft_penalty";
  }
  return "unknown";
}

TrainMode train_mode_from_string(const std::string& s) {
  for (TrainMode m : {TrainMode::ProjectAtTrain, TrainMode::InferenceOnly, TrainMode::SoftPenalty}) {
    if (to_string(m) == s) return m;
  }
  throw FormatError("unknown training mode '" + s + "'");
}

Matrix ConstraintSource::rhs_columns(const RowMatrix& x) const {
  return rhs.batch(x.transpose());
}

// ---------------------------------------------------------------------------

PinetModel::PinetModel(Backbone backbone, ConstraintSource source, LayerOptions options,
                       std::optional<AffineCompletion> completion)
    : backbone_(std::move(backbone)),
      source_(std::move(source)),
      options_(options),
      completion_(std::move(completion)) {
  options_.settings.validate();
  const std::size_t d = source_.nominal.d();
  const std::size_t head = completion_ ? static_cast<std::size_t>(completion_->input_map.cols()) : d;
  if (backbone_.output_dim() != head) {
    throw DimensionError("PinetModel: backbone output does not match the layer input");
  }
  if (completion_ && (completion_->input_map.rows() != idx(d) || completion_->bias.size() != idx(d))) {
    throw DimensionError("PinetModel: completion head does not produce d outputs");
  }
  if (options_.equilibrate) {
    EquilibratedConstraint ec = equilibrate(source_.nominal, options_.ruiz);
    scaling_ = ec.scaling();
    geometry_ = DRGeometry::equilibrated(ec);
  } else {
    geometry_ = DRGeometry::plain(source_.nominal);
  }
  if (options_.reduce_equalities && source_.nominal.eq_rows() > 0) {
    eq_ = source_.nominal.structure().eq;
    eq_pinv_ = pinv(eq_).matrix();
  }
  if (source_.nominal.k1().all_box_or_free() && source_.nominal.k2().all_box_or_free()) {
    penalty_rows_ = qp_rows(source_.nominal);
    penalty_eq_rows_ = source_.nominal.eq_rows();
    penalty_ready_ = true;
  }
}

RowMatrix PinetModel::raw_output(const RowMatrix& x) const {
  RowMatrix u = backbone_.forward(x);
  if (!completion_) return u;
  RowMatrix y = u * completion_->input_map.transpose();
  if (completion_->context_map.size()) y += x * completion_->context_map.transpose();
  y.rowwise() += completion_->bias.transpose();
  return y;
}

Matrix PinetModel::reduce_to_equalities(const Matrix& y_cols, const Matrix& b_cols) const {
  if (eq_pinv_.size() == 0) return y_cols;
  const Matrix gap = eq_ * y_cols - b_cols.topRows(eq_.rows());
  return y_cols - eq_pinv_ * gap;
}

LayerOutput PinetModel::project(const RowMatrix& x, const RowMatrix& y_raw, int iterations) const {
  const Matrix b = source_.rhs_columns(x);
  BatchProjection bp = dr_project_batch(geometry_, b, reduce_to_equalities(columns(y_raw), b),
                                        options_.settings, iterations);
  LayerOutput out;
  out.y = rows_of(bp.y);
  out.y_raw = y_raw;
  out.s_final = std::move(bp.s_final);
  out.cv = bp.cv;
  return out;
}

LayerOutput PinetModel::forward(const RowMatrix& x, int iterations) const {
  return project(x, raw_output(x), iterations);
}

RowMatrix PinetModel::predict(const RowMatrix& x) const {
  if (options_.mode == TrainMode::SoftPenalty) return raw_output(x);
  return forward(x, options_.settings.n_iter_test).y;
}

ad::Var PinetModel::project_taped(const ad::Var& y_raw, const RowMatrix& x,
                                  LayerStats* stats) const {
  const DRGeometry g = geometry_;
  const DRSettings st = options_.settings;
  KrylovSettings ks = options_.krylov;
  ks.max_iter = st.n_iter_bwd;
  const Matrix b = source_.rhs_columns(x);
  const Matrix eq = eq_, eq_pinv = eq_pinv_;
  ad::CustomOp op(
      [this, g, st, b, stats](std::span<const Tensor> in) -> std::pair<Tensor, std::any> {
        const Matrix yr = reduce_to_equalities(in[0].as_matrix().transpose(), b);
        BatchProjection bp = dr_project_batch(g, b, yr, st, st.n_iter_fwd);
        if (stats) ++stats->forward_calls;
        ProjectionResidual res{std::make_shared<FixedPointResidualOp>(g, b, yr, bp.s_final, st)};
        return {Tensor::from_matrix(rows_of(bp.y)), std::any(std::move(res))};
      },
      [ks, stats, eq, eq_pinv](const std::any& residual, const Tensor& cot) -> std::vector<Tensor> {
        const auto& res = std::any_cast<const ProjectionResidual&>(residual);
        const Matrix c = cot.as_matrix().transpose();
        VjpResult v = projection_vjp_batch(*res.op, c, ks);
        if (stats) {
          const auto& conv = v.krylov.converged;
          stats->backward_columns += conv.size();
          for (bool f : conv) stats->converged_columns += f ? 1 : 0;
          if (v.krylov.residual_norm.size()) {
            stats->max_krylov_residual =
                std::max(stats->max_krylov_residual, v.krylov.residual_norm.maxCoeff());
          }
        }
        // The reduction is the orthogonal projector I - E^+E, which is symmetric.
        if (eq_pinv.size()) v.grad -= eq_pinv * (eq * v.grad);
        return {Tensor::from_matrix(rows_of(v.grad))};
      });
  return op(y_raw);
}

ad::Var PinetModel::forward_taped(ad::Tape& tape, const std::vector<ad::Var>& params,
                                  const RowMatrix& x, LayerStats* stats) const {
  ad::Var xin = tape.constant(Tensor::from_matrix(backbone_.standardize(x)));
  ad::Var u = backbone_.forward(params, xin);
  ad::Var y_raw = u;
  if (completion_) {
    const RowMatrix mt = completion_->input_map.transpose();
    y_raw = ad::matmul(u, tape.constant(Tensor::from_matrix(mt)));
    RowMatrix offset = RowMatrix::Zero(x.rows(), idx(output_dim()));
    if (completion_->context_map.size()) offset = x * completion_->context_map.transpose();
    offset.rowwise() += completion_->bias.transpose();
    y_raw = ad::add_const(y_raw, Tensor::from_matrix(offset));
  }
  if (options_.mode != TrainMode::ProjectAtTrain) return y_raw;
  return project_taped(y_raw, x, stats);
}

ad::Var PinetModel::violation_penalty(const ad::Var& y, const RowMatrix& x) const {
  if (!penalty_ready_) throw Error("violation_penalty: only box and free factors are supported");
  const Matrix b = source_.rhs_columns(x);
  const Vector b0 = source_.nominal.b();
  const QpRows rows = penalty_rows_;
  const std::size_t m_eq = penalty_eq_rows_;
  const Eigen::Index shifted = b0.size();
  ad::CustomOp op(
      [rows, b, b0, m_eq, shifted](std::span<const Tensor> in) -> std::pair<Tensor, std::any> {
        const auto ym = in[0].as_matrix();
        const Eigen::Index batch = ym.rows();
        Tensor out({static_cast<std::size_t>(batch)});
        RowMatrix grad = RowMatrix::Zero(batch, ym.cols());
        for (Eigen::Index r = 0; r < batch; ++r) {
          Vector l = rows.l, u = rows.u;
          const Vector delta = b.col(r) - b0;
          l.head(shifted) += delta;
          u.head(shifted) += delta;
          const Vector ay = rows.a * ym.row(r).transpose();
          double eq = 0.0, ineq = 0.0;
          Eigen::Index eq_arg = -1, in_arg = -1;
          double eq_sign = 0.0, in_sign = 0.0;
          for (Eigen::Index i = 0; i < ay.size(); ++i) {
            if (static_cast<std::size_t>(i) < m_eq) {
              const double v = std::abs(ay(i) - l(i));
              if (v > eq) {
                eq = v;
                eq_arg = i;
                eq_sign = ay(i) > l(i) ? 1.0 : -1.0;
              }
            } else {
              if (ay(i) - u(i) > ineq) {
                ineq = ay(i) - u(i);
                in_arg = i;
                in_sign = 1.0;
              }
              if (l(i) - ay(i) > ineq) {
                ineq = l(i) - ay(i);
                in_arg = i;
                in_sign = -1.0;
              }
            }
          }
          out[static_cast<std::size_t>(r)] = eq + ineq;
          if (eq_arg >= 0) grad.row(r) += eq_sign * rows.a.row(eq_arg);
          if (in_arg >= 0) grad.row(r) += in_sign * rows.a.row(in_arg);
        }
        return {std::move(out), std::any(std::move(grad))};
      },
      [](const std::any& res, const Tensor& cot) -> std::vector<Tensor> {
        RowMatrix g = std::any_cast<const RowMatrix&>(res);
        for (Eigen::Index r = 0; r < g.rows(); ++r) g.row(r) *= cot[static_cast<std::size_t>(r)];
        return {Tensor::from_matrix(g)};
      });
  return op(y);
}

std::vector<Tensor> PinetModel::backward_step(const RowMatrix& x, const RowMatrix& dl_dy,
                                              LayerStats* stats) const {
  ad::Tape tape;
  const std::vector<ad::Var> params = backbone_.bind(tape);
  ad::Var y = forward_taped(tape, params, x, stats);
  if (y.value().rows() != static_cast<std::size_t>(dl_dy.rows()) ||
      y.value().cols() != static_cast<std::size_t>(dl_dy.cols())) {
    throw DimensionError("backward_step: cotangent shape mismatch");
  }
  ad::Gradients g = tape.backward(y, Tensor::from_matrix(dl_dy));
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(g.of(p));
  return out;
}

}  // namespace pinet

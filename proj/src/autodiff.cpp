#include "pinet/autodiff.hpp"

#include <cmath>
#include <string>

#include "pinet/errors.hpp"

namespace pinet::ad {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) throw DimensionError(std::string(op) + ": shape mismatch");
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a rank-2 tensor");
}

// Elementwise unary op with derivative f'(x) evaluated from the input value.
template <typename F, typename DF>
Var unary(const Var& x, F f, DF df) {
  Tape& tape = x.tape();
  const Tensor& in = x.value();
  Tensor out = Tensor::zeros_like(in);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  const std::size_t id = x.id();
  return tape.record(std::move(out), {x}, [&tape, id, df](const Tensor& g) {
    const Tensor& in = tape.value(id);
    Tensor gx = Tensor::zeros_like(in);
    for (std::size_t i = 0; i < in.size(); ++i) gx[i] = g[i] * df(in[i]);
    return std::vector<Tensor>{std::move(gx)};
  });
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

Tensor Gradients::of(const Var& v) const {
  const auto& g = grads_.at(v.id());
  if (g) return *g;
  return Tensor::zeros_like(tape_->value(v.id()));
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, VjpFn vjp) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error("tape: input recorded on a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.vjp = std::move(vjp);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& output, const Tensor& seed) const {
  if (!seed.same_shape(output.value())) {
    throw DimensionError("backward: seed shape does not match the output");
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[output.id()] = seed;
  for (std::size_t k = output.id() + 1; k-- > 0;) {
    const Node& node = nodes_[k];
    if (!grads[k] || !node.vjp) continue;
    std::vector<Tensor> in_grads = node.vjp(*grads[k]);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const std::size_t in = node.inputs[j];
      if (!nodes_[in].requires_grad) continue;
      auto& slot = grads[in];
      if (!slot) {
        slot = std::move(in_grads[j]);
      } else {
        slot->as_matrix() += in_grads[j].as_matrix();
      }
    }
  }
  return Gradients(std::move(grads), this);
}

Gradients Tape::backward(const Var& output) const {
  return backward(output, Tensor(output.value().shape(), 1.0));
}

Var matmul(const Var& a, const Var& b) {
  Tape& tape = a.tape();
  Tensor out = pinet::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [&tape, ia, ib](const Tensor& g) {
    const Tensor& av = tape.value(ia);
    const Tensor& bv = tape.value(ib);
    Tensor ga = Tensor::zeros_like(av);
    Tensor gb = Tensor::zeros_like(bv);
    ga.as_matrix().noalias() = g.as_matrix() * bv.as_matrix().transpose();
    gb.as_matrix().noalias() = av.as_matrix().transpose() * g.as_matrix();
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.as_matrix() += b.value().as_matrix();
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g) {
    return std::vector<Tensor>{g, g};
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out.as_matrix() -= b.value().as_matrix();
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g) {
    Tensor neg = g;
    neg.as_matrix() *= -1.0;
    return std::vector<Tensor>{g, std::move(neg)};
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tape& tape = a.tape();
  Tensor out = a.value();
  out.as_matrix().array() *= b.value().as_matrix().array();
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [&tape, ia, ib](const Tensor& g) {
    Tensor ga = g, gb = g;
    ga.as_matrix().array() *= tape.value(ib).as_matrix().array();
    gb.as_matrix().array() *= tape.value(ia).as_matrix().array();
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  });
}

Var add_row(const Var& x, const Var& bias) {
  require_rank2(x.value(), "add_row");
  if (bias.value().size() != x.value().cols()) {
    throw DimensionError("add_row: bias length does not match the column count");
  }
  Tensor out = x.value();
  const auto b = bias.value().as_matrix();  // 1 x n view
  out.as_matrix().rowwise() += b.row(0);
  const std::vector<std::size_t> bias_shape = bias.value().shape();
  return x.tape().record(std::move(out), {x, bias}, [bias_shape](const Tensor& g) {
    Tensor gb(bias_shape);
    gb.as_matrix().row(0) = g.as_matrix().colwise().sum();
    return std::vector<Tensor>{g, std::move(gb)};
  });
}

Var mul_row(const Var& x, const Tensor& row) {
  require_rank2(x.value(), "mul_row");
  if (row.size() != x.value().cols()) {
    throw DimensionError("mul_row: row length does not match the column count");
  }
  Tensor out = x.value();
  const Eigen::Map<const Eigen::RowVectorXd> r(row.values().data(),
                                               static_cast<Eigen::Index>(row.size()));
  out.as_matrix().array().rowwise() *= r.array();
  return x.tape().record(std::move(out), {x}, [row](const Tensor& g) {
    Tensor gx = g;
    const Eigen::Map<const Eigen::RowVectorXd> r(row.values().data(),
                                                 static_cast<Eigen::Index>(row.size()));
    gx.as_matrix().array().rowwise() *= r.array();
    return std::vector<Tensor>{std::move(gx)};
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  out.as_matrix() *= factor;
  return x.tape().record(std::move(out), {x}, [factor](const Tensor& g) {
    Tensor gx = g;
    gx.as_matrix() *= factor;
    return std::vector<Tensor>{std::move(gx)};
  });
}

Var add_const(const Var& x, const Tensor& c) {
  require_same_shape(x.value(), c, "add_const");
  Tensor out = x.value();
  out.as_matrix() += c.as_matrix();
  return x.tape().record(std::move(out), {x},
                         [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Var add_scalar(const Var& x, double c) {
  Tensor out = x.value();
  out.as_matrix().array() += c;
  return x.tape().record(std::move(out), {x},
                         [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sin(const Var& x) {
  return unary(
      x, [](double v) { return std::sin(v); }, [](double v) { return std::cos(v); });
}

Var cos(const Var& x) {
  return unary(
      x, [](double v) { return std::cos(v); }, [](double v) { return -std::sin(v); });
}

Var exp(const Var& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var square(const Var& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var clamp_max(const Var& x, double cap) {
  return unary(
      x, [cap](double v) { return v < cap ? v : cap; },
      [cap](double v) { return v < cap ? 1.0 : 0.0; });
}

Var sum(const Var& x) {
  const std::vector<std::size_t> shape = x.value().shape();
  double total = x.value().as_matrix().sum();
  return x.tape().record(Tensor::scalar(total), {x}, [shape](const Tensor& g) {
    return std::vector<Tensor>{Tensor(shape, g.item())};
  });
}

Var mean(const Var& x) {
  const std::size_t count = x.value().size();
  return scale(sum(x), count ? 1.0 / static_cast<double>(count) : 0.0);
}

Var sum_cols(const Var& x) {
  require_rank2(x.value(), "sum_cols");
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  Tensor out({rows});
  Eigen::Map<Vector>(out.values().data(), static_cast<Eigen::Index>(rows)) =
      x.value().as_matrix().rowwise().sum();
  return x.tape().record(std::move(out), {x}, [rows, cols](const Tensor& g) {
    Tensor gx({rows, cols});
    const Eigen::Map<const Vector> gv(g.values().data(), static_cast<Eigen::Index>(rows));
    gx.as_matrix().colwise() = gv;
    return std::vector<Tensor>{std::move(gx)};
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  require_rank2(x.value(), "slice_cols");
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  if (begin + count > cols) throw DimensionError("slice_cols: range exceeds the column count");
  Tensor out({rows, count});
  out.as_matrix() = x.value().as_matrix().middleCols(static_cast<Eigen::Index>(begin),
                                                     static_cast<Eigen::Index>(count));
  return x.tape().record(std::move(out), {x}, [rows, cols, begin, count](const Tensor& g) {
    Tensor gx({rows, cols});
    gx.as_matrix().middleCols(static_cast<Eigen::Index>(begin),
                              static_cast<Eigen::Index>(count)) = g.as_matrix();
    return std::vector<Tensor>{std::move(gx)};
  });
}

Var CustomOp::operator()(std::span<const Var> inputs) const {
  if (inputs.empty()) throw Error("custom op needs at least one input");
  Tape& tape = inputs.front().tape();
  std::vector<Tensor> values;
  values.reserve(inputs.size());
  for (const Var& v : inputs) values.push_back(v.value());
  auto [out, residual] = forward_(values);
  auto vjp = vjp_;
  return tape.record(std::move(out), std::vector<Var>(inputs.begin(), inputs.end()),
                     [vjp, residual = std::move(residual)](const Tensor& g) {
                       return vjp(residual, g);
                     });
}

CustomOp register_custom_vjp(CustomOp::Forward forward, CustomOp::Backward vjp) {
  return CustomOp(std::move(forward), std::move(vjp));
}

}  // namespace pinet::ad

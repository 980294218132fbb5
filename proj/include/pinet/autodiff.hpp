#pragma once

#include <any>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "pinet/tensor.hpp"

namespace pinet::ad {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Maps an output cotangent to one cotangent per recorded input.
using VjpFn = std::function<std::vector<Tensor>(const Tensor& cotangent)>;

/// Result of Tape::backward; detached nodes report zero gradients.
class Gradients {
 public:
  explicit Gradients(std::vector<std::optional<Tensor>> grads,
                     const Tape* tape)
      : grads_(std::move(grads)), tape_(tape) {}

  Tensor of(const Var& v) const;
  bool reached(const Var& v) const { return grads_.at(v.id()).has_value(); }

 private:
  std::vector<std::optional<Tensor>> grads_;
  const Tape* tape_;
};

/**
 * Define-by-run reverse-mode tape.
 *
 * Nodes are appended in evaluation order, so the node vector is already a
 * topological order and backward is a single reverse sweep. Gradients are
 * summed where a value fans out to several consumers. A tape is meant to be
 * rebuilt for every forward pass and used from one thread.
 */
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op output. The vjp is dropped when no input needs gradients.
  Var record(Tensor value, std::vector<Var> inputs, VjpFn vjp);

  Gradients backward(const Var& output, const Tensor& seed) const;
  Gradients backward(const Var& output) const;

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(const Var& v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    VjpFn vjp;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Primitive ops. Shapes follow the backbone's needs: rank-2 batches of
// row vectors plus rank-1 biases broadcast across rows.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// x (B x n) + bias (n), broadcast over rows.
Var add_row(const Var& x, const Var& bias);
/// x (B x n) .* row (n), with a constant row.
Var mul_row(const Var& x, const Tensor& row);
Var scale(const Var& x, double factor);
Var add_const(const Var& x, const Tensor& c);
Var add_scalar(const Var& x, double c);
Var relu(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
Var exp(const Var& x);
Var square(const Var& x);
/// Elementwise min(x, cap); the gradient is passed where x < cap.
Var clamp_max(const Var& x, double cap);
/// Sum of all entries, rank-0 result.
Var sum(const Var& x);
/// Mean of all entries, rank-0 result.
Var mean(const Var& x);
/// Row sums of a B x n tensor, result of shape (B).
Var sum_cols(const Var& x);
/// Columns [begin, begin + count) of a B x n tensor.
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);

/**
 * An operation whose backward pass is supplied by the caller instead of
 * being traced.
 *
 * The forward callback returns the output together with arbitrary residual
 * state; the vjp callback receives that state and the output cotangent and
 * returns one cotangent per input.
 */
class CustomOp {
 public:
  using Forward = std::function<std::pair<Tensor, std::any>(std::span<const Tensor>)>;
  using Backward =
      std::function<std::vector<Tensor>(const std::any& residual, const Tensor& cotangent)>;

  CustomOp(Forward forward, Backward vjp)
      : forward_(std::move(forward)), vjp_(std::move(vjp)) {}

  Var operator()(std::span<const Var> inputs) const;
  Var operator()(const Var& input) const { return (*this)(std::span<const Var>(&input, 1)); }

 private:
  Forward forward_;
  Backward vjp_;
};

CustomOp register_custom_vjp(CustomOp::Forward forward, CustomOp::Backward vjp);

}  // namespace pinet::ad

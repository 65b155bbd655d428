#pragma once

// Reverse-mode differentiation over a recorded tape.
//
// Every op appends a node holding its forward value and a backward rule.
// Backward rules are written with the same differentiable ops, so running
// backward with `create_graph` records the gradient computation itself and
// the result can be differentiated again (needed by the gradient penalty).
// Ops whose rule is computed on raw tensors are flagged first-order only
// and raise UnsupportedOpError when a second-order pass reaches them.

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specmix/tensor.hpp"

namespace specmix {

using NodeId = std::size_t;
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  explicit operator bool() const noexcept { return valid(); }
  Tape& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t rank() const { return value().rank(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

struct BackwardContext {
  Var output;
  Var grad;  // gradient flowing into `output`
  std::span<const Var> inputs;
};

// Returns one gradient per input; an invalid Var means "no contribution".
using BackwardRule = std::function<std::vector<Var>(const BackwardContext&)>;

struct Node {
  std::string op;
  Tensor value;
  std::vector<Var> inputs;
  BackwardRule rule;
  bool requires_grad = false;
  bool second_order = true;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  // Appends an op node. Inputs and rule are dropped when no input needs a
  // gradient or recording is disabled. Throws NumericError on non-finite output.
  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardRule rule,
             bool second_order = true);

  const Node& node(NodeId id) const { return nodes_[id]; }
  std::size_t size() const noexcept { return nodes_.size(); }

  bool grad_enabled() const noexcept { return grad_enabled_; }
  void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }

 private:
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape, bool enable = false) : tape_(tape), prev_(tape.grad_enabled()) {
    tape_.set_grad_enabled(enable);
  }
  ~NoGradGuard() { tape_.set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

// node id -> gradient. Missing entries read as zeros of the node's shape.
class GradientMap {
 public:
  GradientMap(Tape& tape, std::vector<Var> grads) : tape_(&tape), grads_(std::move(grads)) {}

  bool has(Var v) const { return v.id() < grads_.size() && grads_[v.id()].valid(); }
  Var var(Var v) const;
  Tensor tensor(Var v) const;

 private:
  Tape* tape_;
  std::vector<Var> grads_;
};

struct BackwardOptions {
  // Record the backward pass so its results are differentiable.
  bool create_graph = false;
  // Restrict propagation to paths reaching these nodes. Empty: all nodes.
  std::vector<Var> targets;
};

// Gradients of a scalar output. Throws ContractError if output is not scalar.
GradientMap backward(Var output, const BackwardOptions& options = {});

namespace ad {

// Elementwise binary ops broadcast numpy-style over equal-rank operands
// (a size-1 extent stretches) or against a single-element operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var x);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);

Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var square(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var reciprocal(Var x);
// 1/x with 0 -> 0; used where a zero denominator carries a zero numerator.
Var reciprocal_safe(Var x);
Var abs(Var x);
// acos of the input clamped to [-1, 1]. First-order only.
Var acos_clamped(Var x);

// Reduce to `shape` (same rank, extents 1 or equal) by summation.
Var sum_to(Var x, const Shape& shape);
Var broadcast_to(Var x, const Shape& shape);
Var sum(Var x);
Var mean(Var x);
Var mean_to(Var x, const Shape& shape);
Var sum_axis(Var x, std::size_t axis);  // keeps the axis with extent 1

Var reshape(Var x, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);

// Per-channel ops over the last axis; channel vectors have shape [C].
// x * scale[c] + shift[c]. Either of scale and shift may be left invalid.
Var channel_affine(Var x, Var scale, Var shift);
// Sum of a * b over all but the last axis.
Var channel_dot(Var a, Var b);
Var channel_sum(Var x);
// Repeats v [C] along all but the last axis of `shape`.
Var channel_fill(Var v, const Shape& shape);
// x * mask for a constant mask shaped like x.
Var mask_mul(Var x, Tensor mask);

// op(a) . op(b) for rank-2 operands.
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);

// Cross-correlation, input [B, D, Cin], kernel [k, Cin, Cout], symmetric zero
// "same" padding; output length ceil(D / stride). No bias.
Var conv1d(Var input, Var kernel, std::size_t stride);
// Adjoints of conv1d with respect to its input and kernel.
Var conv1d_input_grad(Var grad, Var kernel, std::size_t stride, std::size_t input_length);
Var conv1d_weight_grad(Var input, Var grad, std::size_t stride, std::size_t kernel_size);

// Non-overlapping window means along axis 1 of [B, D, C]; a trailing
// partial window averages over its actual length.
Var avg_pool1d(Var input, std::size_t k);
Var avg_pool1d_adjoint(Var grad, std::size_t k, std::size_t input_length);

}  // namespace ad

// Padding used by conv1d: total zero padding and its left part.
struct SamePadding {
  std::size_t out_length;
  std::size_t left;
};
SamePadding same_padding(std::size_t length, std::size_t kernel, std::size_t stride);

}  // namespace specmix

namespace specmix::ad {

// mean over samples of (||d sum(scores) / d inputs[b]||_2 - 1)^2, where
// `inputs` is [B, ...] and must be a differentiable leaf feeding `scores`.
// Returned as a tape expression so it can be differentiated again.
Var gradient_norm_penalty(Var scores, Var inputs);

// Gradients of the penalty above with respect to every trainable node.
GradientMap grad_norm_penalty_backward(Var scores, Var inputs);

}  // namespace specmix::ad

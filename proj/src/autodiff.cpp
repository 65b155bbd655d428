#include "specmix/autodiff.hpp"

#include "specmix/errors.hpp"

namespace specmix {

const Tensor& Var::value() const { return tape_->node(id_).value; }

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("leaf tensor contains non-finite values");
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardRule rule,
                 bool second_order) {
  if (!value.all_finite()) throw NumericError("op '" + op + "' produced a non-finite value");
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  bool needs = false;
  if (grad_enabled_)
    for (const Var& v : inputs)
      if (v.requires_grad()) needs = true;
  n.requires_grad = needs;
  if (needs) {
    n.inputs = std::move(inputs);
    n.rule = std::move(rule);
    n.second_order = second_order;
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var GradientMap::var(Var v) const {
  if (has(v)) return grads_[v.id()];
  return tape_->constant(Tensor(v.shape()));
}

Tensor GradientMap::tensor(Var v) const {
  if (has(v)) return grads_[v.id()].value();
  return Tensor(v.shape());
}

GradientMap backward(Var output, const BackwardOptions& options) {
  Tape& tape = output.tape();
  if (output.value().size() != 1)
    throw ContractError("backward: output must be a scalar, got shape " + to_string(output.shape()));

  const std::size_t n = output.id() + 1;
  std::vector<char> needed(n, 0);
  if (options.targets.empty()) {
    for (std::size_t i = 0; i < n; ++i) needed[i] = tape.node(i).requires_grad;
  } else {
    for (const Var& t : options.targets)
      if (t.id() < n && t.requires_grad()) needed[t.id()] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (needed[i]) continue;
      const Node& node = tape.node(i);
      for (const Var& in : node.inputs)
        if (needed[in.id()]) {
          needed[i] = 1;
          break;
        }
    }
  }

  std::vector<Var> grads(n);
  if (!needed[output.id()]) return GradientMap(tape, std::move(grads));

  NoGradGuard guard(tape, options.create_graph);
  grads[output.id()] = tape.constant(Tensor(output.shape(), 1.0));

  for (std::size_t i = n; i-- > 0;) {
    if (!needed[i] || !grads[i].valid()) continue;
    const Node& node = tape.node(i);
    if (!node.rule) continue;
    if (options.create_graph && !node.second_order)
      throw UnsupportedOpError("op '" + node.op + "' has no second-order rule");

    BackwardContext ctx{Var(&tape, i), grads[i], node.inputs};
    std::vector<Var> in_grads = node.rule(ctx);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const Var& in = node.inputs[j];
      if (j >= in_grads.size() || !in_grads[j].valid() || !needed[in.id()]) continue;
      if (in_grads[j].shape() != in.shape())
        throw ShapeError("backward of '" + node.op + "' produced gradient " + to_string(in_grads[j].shape()) +
                         " for input " + to_string(in.shape()));
      Var& slot = grads[in.id()];
      slot = slot.valid() ? ad::add(slot, in_grads[j]) : in_grads[j];
    }
  }
  return GradientMap(tape, std::move(grads));
}

}  // namespace specmix

namespace specmix::ad {

Var gradient_norm_penalty(Var scores, Var inputs) {
  if (!inputs.requires_grad()) throw ContractError("gradient penalty inputs must be differentiable");
  if (inputs.rank() < 1) throw ShapeError("gradient penalty inputs need a batch axis");
  BackwardOptions opt;
  opt.create_graph = true;
  opt.targets = {inputs};
  GradientMap g = backward(sum(scores), opt);
  Var grad = g.var(inputs);
  const std::size_t B = inputs.dim(0);
  Var flat = reshape(grad, Shape{B, inputs.value().size() / B});
  Var norms = sqrt(sum_axis(square(flat), 1));
  return mean(square(add_scalar(norms, -1.0)));
}

GradientMap grad_norm_penalty_backward(Var scores, Var inputs) {
  return backward(gradient_norm_penalty(scores, inputs));
}

}  // namespace specmix::ad

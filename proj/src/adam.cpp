#include "specmix/adam.hpp"

#include <cmath>

#include "specmix/errors.hpp"

namespace specmix {

AdamState AdamState::for_group(const ParameterGroup& group) {
  AdamState s;
  for (const Tensor& t : group.values) {
    s.first.emplace_back(t.shape());
    s.second.emplace_back(t.shape());
  }
  return s;
}

void adam_step(ParameterGroup& group, const std::vector<Tensor>& grads, AdamState& state, const AdamConfig& c) {
  if (grads.size() != group.size() || state.first.size() != group.size())
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < group.size(); ++i) {
    Tensor& p = group[i];
    const Tensor& g = grads[i];
    if (g.shape() != p.shape()) throw ShapeError("adam_step: gradient shape mismatch for " + group.names[i]);
    auto m = state.first[i].data();
    auto v = state.second[i].data();
    auto pv = p.data();
    auto gv = g.data();
    for (std::size_t j = 0; j < pv.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gv[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gv[j] * gv[j];
      pv[j] -= c.learning_rate * (m[j] / corr1) / (std::sqrt(v[j] / corr2) + c.eps);
    }
  }
}

}  // namespace specmix

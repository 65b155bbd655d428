#include "specmix/params.hpp"

#include <cmath>

#include "specmix/errors.hpp"

namespace specmix {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 over the combined input
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::size_t ParameterGroup::add(std::string name, Tensor value) {
  names.push_back(std::move(name));
  values.push_back(std::move(value));
  return values.size() - 1;
}

std::size_t ParameterGroup::index(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw ParameterError("no parameter named '" + std::string(name) + "'");
}

std::size_t ParameterGroup::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : values) n += t.size();
  return n;
}

BoundGroup bind(Tape& tape, const ParameterGroup& group, bool trainable) {
  BoundGroup b;
  b.vars.reserve(group.size());
  for (const Tensor& t : group.values) b.vars.push_back(tape.leaf(t, trainable));
  return b;
}

std::vector<Tensor> collect_gradients(const GradientMap& grads, const BoundGroup& bound) {
  std::vector<Tensor> out;
  out.reserve(bound.vars.size());
  for (const Var& v : bound.vars) out.push_back(grads.tensor(v));
  return out;
}

Var squared_norm(const BoundGroup& bound) {
  Var acc;
  for (const Var& v : bound.vars) {
    Var s = ad::sum(ad::square(v));
    acc = acc ? ad::add(acc, s) : s;
  }
  return acc;
}

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor standard_normal(Shape shape, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace specmix

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "specmix/autodiff.hpp"

namespace specmix {

using Rng = std::mt19937_64;

// Independent, reproducible stream seed derived from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

// Named trainable tensors of one parameter group (one optimizer each).
struct ParameterGroup {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  std::size_t add(std::string name, Tensor value);
  std::size_t index(std::string_view name) const;
  std::size_t size() const noexcept { return values.size(); }
  Tensor& operator[](std::size_t i) { return values.at(i); }
  const Tensor& operator[](std::size_t i) const { return values.at(i); }
  std::size_t scalar_count() const;
};

// A group's tensors placed on a tape, in group order.
struct BoundGroup {
  std::vector<Var> vars;
  Var operator[](std::size_t i) const { return vars.at(i); }
};

BoundGroup bind(Tape& tape, const ParameterGroup& group, bool trainable);

// Gradients for each bound tensor, zeros where the output did not depend on it.
std::vector<Tensor> collect_gradients(const GradientMap& grads, const BoundGroup& bound);

// Sum of squared entries of all bound tensors, as a tape expression.
Var squared_norm(const BoundGroup& bound);

// Zero-mean Gaussian with std sqrt(2 / fan_in).
Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng);

Tensor standard_normal(Shape shape, Rng& rng);

}  // namespace specmix

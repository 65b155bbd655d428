#include "specmix/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "specmix/errors.hpp"

namespace specmix::nn {

Activation parse_activation(std::string_view name) {
  if (name == "lrelu") return Activation::lrelu;
  if (name == "prelu") return Activation::prelu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  throw ParameterError("unknown activation '" + std::string(name) + "'");
}

Var activation(Activation kind, Var x, Var slope) {
  switch (kind) {
    case Activation::lrelu:
      return leaky_relu(x);
    case Activation::prelu:
      if (!slope) throw ParameterError("prelu requires a slope parameter");
      return prelu(x, slope);
    case Activation::sigmoid:
      return ad::sigmoid(x);
    case Activation::tanh:
      return ad::tanh(x);
  }
  throw ParameterError("unknown activation kind");
}

Var leaky_relu(Var x, double slope) {
  Tensor factor(x.shape());
  auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) factor[i] = in[i] >= 0.0 ? 1.0 : slope;
  return ad::mask_mul(x, std::move(factor));
}

Var prelu(Var x, Var slope) {
  const std::size_t C = x.shape().back();
  if (slope.value().size() != C)
    throw ShapeError("prelu slope has " + std::to_string(slope.value().size()) + " entries for " +
                     std::to_string(C) + " channels");
  Tensor pos(x.shape()), negpart(x.shape());
  auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) (in[i] >= 0.0 ? pos[i] : negpart[i]) = 1.0;
  Var a = slope.rank() == 1 ? slope : ad::reshape(slope, Shape{C});
  return ad::add(ad::mask_mul(x, std::move(pos)), ad::channel_affine(ad::mask_mul(x, std::move(negpart)), a, {}));
}

Var conv1d(Var input, Var kernel, Var bias, std::size_t stride) {
  Var y = ad::conv1d(input, kernel, stride);
  if (!bias) return y;
  if (bias.value().size() != kernel.dim(2)) throw ShapeError("conv1d bias does not match output channels");
  return ad::channel_affine(y, {}, ad::reshape(bias, Shape{kernel.dim(2)}));
}

Var linear(Var input, Var weight, Var bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(0))
    throw ShapeError("linear: input " + to_string(input.shape()) + " vs weight " + to_string(weight.shape()));
  Var y = ad::matmul(input, weight);
  if (!bias) return y;
  if (bias.value().size() != weight.dim(1)) throw ShapeError("linear: bias does not match output width");
  return ad::channel_affine(y, {}, ad::reshape(bias, Shape{weight.dim(1)}));
}

Var softmax(Var x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range");
  Shape rshape = x.shape();
  rshape[axis] = 1;
  // Max along the axis, held constant: it cancels in the ratio.
  Tensor mx(rshape, -std::numeric_limits<double>::infinity());
  {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t n = x.dim(axis);
    auto v = x.value().data();
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < inner; ++i)
          mx[a * inner + i] = std::max(mx[a * inner + i], v[(a * n + j) * inner + i]);
  }
  Var e = ad::exp(ad::sub(x, x.tape().constant(std::move(mx))));
  return ad::div(e, ad::sum_to(e, rshape));
}

Var l1_normalize(Var x, std::size_t axis, double eps, std::size_t* degenerate) {
  if (axis >= x.rank()) throw ShapeError("l1_normalize: axis out of range");
  for (double v : x.value().data())
    if (v < 0.0) throw ContractError("l1_normalize: negative entry " + std::to_string(v));
  Var s = ad::sum_axis(x, axis);
  if (degenerate) {
    std::size_t n = 0;
    for (double v : s.value().data())
      if (v == 0.0) ++n;
    *degenerate = n;
  }
  return ad::div(x, ad::add_scalar(s, eps));
}

namespace {

void check_bn_inputs(Var x, Var gamma, Var beta) {
  if (x.rank() != 3) throw ShapeError("batch_norm input must be [B, D, C]");
  const std::size_t C = x.dim(2);
  if (gamma.value().size() != C || beta.value().size() != C)
    throw ShapeError("batch_norm scale/shift must have " + std::to_string(C) + " entries");
}

Var channel_vector(Var v) { return v.rank() == 1 ? v : ad::reshape(v, Shape{v.value().size()}); }

}  // namespace

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState* state, Mode mode) {
  check_bn_inputs(x, gamma, beta);
  if (mode == Mode::infer) {
    if (!state) throw ContractError("batch_norm infer mode needs running statistics");
    return batch_norm_infer(x, gamma, beta, *state);
  }
  if (x.dim(0) < 2) throw BatchError("batch_norm in train mode needs a batch of at least 2");
  const std::size_t C = x.dim(2);
  const double n = static_cast<double>(x.value().size() / C);
  const double eps = state ? state->eps : kBatchNormEps;
  Var mu = ad::scale(ad::channel_sum(x), 1.0 / n);
  Var centered = ad::channel_affine(x, {}, ad::neg(mu));
  Var var = ad::scale(ad::channel_dot(centered, centered), 1.0 / n);
  Var inv_std = ad::reciprocal(ad::sqrt(ad::add_scalar(var, eps)));
  if (state) {
    if (state->running_mean.size() != C) *state = BatchNormState(C);
    const double m = state->momentum;
    for (std::size_t c = 0; c < C; ++c) {
      state->running_mean[c] = m * state->running_mean[c] + (1.0 - m) * mu.value()[c];
      state->running_var[c] = m * state->running_var[c] + (1.0 - m) * var.value()[c];
    }
  }
  return ad::channel_affine(centered, ad::mul(inv_std, channel_vector(gamma)), channel_vector(beta));
}

Var batch_norm_infer(Var x, Var gamma, Var beta, const BatchNormState& state) {
  check_bn_inputs(x, gamma, beta);
  const std::size_t C = x.dim(2);
  if (state.running_mean.size() != C) throw ShapeError("batch_norm running statistics do not match channels");
  Tensor shift(Shape{C}), inv(Shape{C});
  for (std::size_t c = 0; c < C; ++c) {
    shift[c] = -state.running_mean[c];
    inv[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
  }
  Tape& t = x.tape();
  Var y = ad::channel_affine(x, {}, t.constant(std::move(shift)));
  return ad::channel_affine(y, ad::mul(t.constant(std::move(inv)), channel_vector(gamma)), channel_vector(beta));
}

Var spectral_norm(Var x, double eps) {
  if (x.rank() != 3) throw ShapeError("spectral_norm input must be [B, D, C]");
  if (x.dim(1) < 2) throw ContractError("spectral_norm needs at least 2 spectral positions");
  const Shape rshape{x.dim(0), 1, x.dim(2)};
  Var centered = ad::sub(x, ad::mean_to(x, rshape));
  Var var = ad::mean_to(ad::square(centered), rshape);
  return ad::mul(centered, ad::reciprocal(ad::sqrt(ad::add_scalar(var, eps))));
}

}  // namespace specmix::nn

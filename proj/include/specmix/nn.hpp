#pragma once

// Layer-level ops composed from the differentiable primitives in autodiff.hpp.
// Because they are compositions, every op here supports double backward.

#include <cstddef>
#include <string_view>

#include "specmix/autodiff.hpp"

namespace specmix::nn {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kPReluInit = 0.25;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kSpectralNormEps = 1e-8;

enum class Activation { lrelu, prelu, sigmoid, tanh };
Activation parse_activation(std::string_view name);

// For prelu, `slope` holds one trainable value per channel (last axis).
Var activation(Activation kind, Var x, Var slope = {});
Var leaky_relu(Var x, double slope = kLeakySlope);
Var prelu(Var x, Var slope);

// conv1d plus a per-output-channel bias [Cout].
Var conv1d(Var input, Var kernel, Var bias, std::size_t stride);
// input [B, F] . weight [F, O] + bias [O].
Var linear(Var input, Var weight, Var bias);

Var softmax(Var x, std::size_t axis);

// Divides each slice along `axis` by (sum + eps). Entries must be
// nonnegative. Slices summing to zero come back as zeros and are counted
// in `degenerate` when provided.
Var l1_normalize(Var x, std::size_t axis, double eps = 1e-12, std::size_t* degenerate = nullptr);

enum class Mode { train, infer };

struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double momentum = kBatchNormMomentum;
  double eps = kBatchNormEps;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

// Per-channel normalization of [B, D, C] over batch and position. Train mode
// uses batch statistics and, when `state` is given, folds them into the
// running averages (biased variance). Infer mode uses the running averages.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState* state, Mode mode);
Var batch_norm_infer(Var x, Var gamma, Var beta, const BatchNormState& state);

// Per sample and channel, standardizes [B, D, C] along the spectral axis.
Var spectral_norm(Var x, double eps = kSpectralNormEps);

}  // namespace specmix::nn

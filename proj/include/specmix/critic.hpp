#pragma once

// Patch critic for the Wasserstein loss with gradient penalty.
//
//   conv(5,21,stride 5) > bn > prelu
//   conv(10,5,stride 2) > bn > prelu
//   conv(20,5,stride 2) > bn > prelu
//   linear(5) per position > mean over the patch map
//
// Inputs are spectra scaled to unit l1 norm.

#include <array>

#include "specmix/nn.hpp"
#include "specmix/params.hpp"

namespace specmix {

inline constexpr std::size_t kCriticMinBands = 21;
inline constexpr double kPenaltyWeight = 10.0;

struct CriticConfig {
  std::size_t bands = 0;
};

namespace crit {
enum Param : std::size_t {
  conv1_w, conv1_b, bn1_gamma, bn1_beta, prelu1,
  conv2_w, conv2_b, bn2_gamma, bn2_beta, prelu2,
  conv3_w, conv3_b, bn3_gamma, bn3_beta, prelu3,
  fc_w, fc_b
};
}

struct CriticParams {
  CriticConfig config;
  ParameterGroup group;
  std::array<nn::BatchNormState, 3> bn{nn::BatchNormState(5), nn::BatchNormState(10), nn::BatchNormState(20)};

  static CriticParams init(const CriticConfig& config, Rng& rng);
};

// Patch-score map [B, ceil-length, 5] before aggregation.
Var critic_patch_scores(Var spectra, const BoundGroup& params, std::array<nn::BatchNormState, 3>* bn,
                        nn::Mode mode);

// spectra [B, D] -> scores [B]. In train mode `bn` (optional) receives the
// batch statistics; infer mode requires it.
Var discriminate(Var spectra, const BoundGroup& params, std::array<nn::BatchNormState, 3>* bn, nn::Mode mode);

// x / (sum |x| + eps) per row.
Var l1_normalize_spectra(Var x, double eps = 1e-12);

// u[b] * x[b] + (1 - u[b]) * x_hat[b]
Tensor interpolate_samples(const Tensor& x, const Tensor& x_hat, const std::vector<double>& u);

struct AdversarialTerms {
  Var loss;        // E[D(x)] - E[D(x_hat)] - lambda * penalty
  Var real_score;  // E[D(x)]
  Var fake_score;  // E[D(x_hat)]
  Var penalty;     // E[(||grad D(x_tilde)|| - 1)^2]
};

// x and x_hat are l1-normalized [B, D] batches. The interpolates are built
// from their values, so no gradient flows from the penalty into x_hat.
AdversarialTerms adversarial_loss(Var x, Var x_hat, const BoundGroup& params, double penalty_weight,
                                  const std::vector<double>& u, std::array<nn::BatchNormState, 3>* bn = nullptr);

}  // namespace specmix

#pragma once

// Multinomial mixture kernel: each of K abundances is a softmax-weighted sum
// of N sigmoid component responses of the latent feature z,
//
//   similarity[k,n] = 1 / (1 + exp(w1[k,n] . z + b1[k,n]))
//   weight[k,n]     = softmax_n(w2[k,n] . z + b2[k,n])
//   abundance[k]    = sum_n weight[k,n] * similarity[k,n], then l1-normalized over k.
//
// The linear term w1 . z + b1 stands in for the Mahalanobis distance of z to
// component (k,n); expanding (mu - z)^T S^-1 (mu - z) gives a quadratic in z
// whose affine part is what the linear layer learns.

#include "specmix/params.hpp"

namespace specmix {

inline constexpr double kAbundanceEps = 1e-12;

struct MixtureConfig {
  std::size_t materials = 4;   // K
  std::size_t components = 8;  // N
  std::size_t latent = 10;     // M

  void validate() const;
};

namespace mix {
enum Param : std::size_t { w1, b1, w2, b2 };
}

struct MixtureParams {
  MixtureConfig config;
  ParameterGroup group;  // w1 [K,N,M], b1 [K,N], w2 [K,N,M], b2 [K,N]

  static MixtureParams init(const MixtureConfig& config, Rng& rng);
};

// z [B, M] -> [B, K, N], entries in (0, 1).
Var component_similarity(Var z, const BoundGroup& params, const MixtureConfig& config);
// z [B, M] -> [B, K, N], each (b, k) row on the simplex.
Var mixture_weights(Var z, const BoundGroup& params, const MixtureConfig& config);

struct AbundanceResult {
  Var abundances;  // [B, K]
  std::size_t degenerate_rows = 0;  // rows whose mixture summed to zero; returned uniform
};

AbundanceResult abundances(Var z, const BoundGroup& params, const MixtureConfig& config);

}  // namespace specmix

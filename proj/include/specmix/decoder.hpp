#pragma once

// Reconstruction head:
//   x_hat = E^T y + alpha_r * U_r(y) + alpha_u * U_u(y, eta)
// U_r and U_u are independent two-layer nets (in > 20 > D, lrelu then tanh).
// The alphas are stored unconstrained and mapped through range * sigmoid(s).

#include "specmix/params.hpp"

namespace specmix {

inline constexpr std::size_t kUncertaintyHidden = 20;
inline constexpr double kAlphaUncertaintyMax = 0.1;
inline constexpr double kAlphaResidualMax = 0.05;

// Fixed K x D material spectra. Nonnegative, finite, no all-zero row.
class EndmemberMatrix {
 public:
  EndmemberMatrix() = default;
  explicit EndmemberMatrix(Tensor spectra);

  const Tensor& spectra() const noexcept { return spectra_; }
  std::size_t materials() const { return spectra_.dim(0); }
  std::size_t bands() const { return spectra_.dim(1); }

 private:
  Tensor spectra_;
};

struct DecoderConfig {
  std::size_t materials = 4;  // K
  std::size_t bands = 0;      // D
  std::size_t noise_dim = 4;  // L
  bool use_residual = true;
  bool use_uncertainty = true;
};

namespace dec {
// parameter order within each of the two groups
enum Param : std::size_t { w1, b1, w2, b2, alpha };
}

struct DecoderParams {
  DecoderConfig config;
  ParameterGroup residual;     // input K
  ParameterGroup uncertainty;  // input K + L

  static DecoderParams init(const DecoderConfig& config, Rng& rng);
};

// range * sigmoid(s) for a bound alpha parameter.
Var alpha_value(Var raw, double range);

Var uncertainty_forward(Var abundances, Var noise, const BoundGroup& params);
Var residual_forward(Var abundances, const BoundGroup& params);

struct DecoderVars {
  BoundGroup residual;
  BoundGroup uncertainty;
};

// abundances [B, K], noise [B, L] -> [B, D].
Var reconstruct(Var abundances, const EndmemberMatrix& endmembers, Var noise, const DecoderVars& params,
                const DecoderConfig& config);

}  // namespace specmix

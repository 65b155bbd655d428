#pragma once

#include "specmix/autodiff.hpp"

namespace specmix {

// 1 - angle(x, x_hat) / pi per row of [B, D]; 1 iff parallel, 0.5 if orthogonal.
// Throws ContractError on a zero row.
Var sad_similarity(Var x, Var x_hat);

struct ReconstructionWeights {
  double me = 0.0;        // lambda0: mean absolute error weight
  double sparsity = 0.4;  // lambda1
  double l2 = 1e-5;       // lambda2
};

// E[-log C(x, x_hat)] + l0 E[|x - x_hat|_1] + l1 |y|_1 / B + l2 * encoder_sq_norm.
// `encoder_sq_norm` may be invalid (no regularized parameters).
Var reconstruction_loss(Var x, Var x_hat, Var abundances, Var encoder_sq_norm, const ReconstructionWeights& w);

// Per-parameter-group loss coefficients applied to (L_re, L_adv_gen).
struct GroupCoefficients {
  double re;
  double adv;
};

struct GroupLossTable {
  static constexpr GroupCoefficients mixture{0.01, 0.1};
  static constexpr GroupCoefficients encoder{1.0, 0.0};
  static constexpr GroupCoefficients residual{0.001, 0.0};
  static constexpr GroupCoefficients uncertainty{0.0, 0.001};
};

// Adam step multiplier of a group: its largest loss coefficient.
constexpr double step_scale(GroupCoefficients c) { return c.re > c.adv ? c.re : c.adv; }

struct GroupLosses {
  double mixture;
  double encoder;
  double residual;
  double uncertainty;
  double critic;
};

// Scalar values of the five group objectives.
GroupLosses group_losses(double reconstruction, double adversarial_generator, double adversarial_critic);

}  // namespace specmix

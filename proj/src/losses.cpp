#include "specmix/losses.hpp"

#include <numbers>

#include "specmix/errors.hpp"

namespace specmix {

Var sad_similarity(Var x, Var x_hat) {
  if (x.shape() != x_hat.shape() || x.rank() != 2)
    throw ShapeError("sad_similarity: " + to_string(x.shape()) + " vs " + to_string(x_hat.shape()));
  for (const Var& v : {x, x_hat}) {
    const Tensor& t = v.value();
    for (std::size_t b = 0; b < t.dim(0); ++b) {
      bool nonzero = false;
      for (std::size_t d = 0; d < t.dim(1) && !nonzero; ++d) nonzero = t(b, d) != 0.0;
      if (!nonzero) throw ContractError("sad_similarity: zero spectrum in row " + std::to_string(b));
    }
  }
  Var dot = ad::sum_axis(ad::mul(x, x_hat), 1);
  Var nx = ad::sqrt(ad::sum_axis(ad::square(x), 1));
  Var ny = ad::sqrt(ad::sum_axis(ad::square(x_hat), 1));
  Var angle = ad::acos_clamped(ad::div(dot, ad::mul(nx, ny)));
  Var c = ad::add_scalar(ad::scale(angle, -1.0 / std::numbers::pi), 1.0);
  return ad::reshape(c, Shape{x.dim(0)});
}

Var reconstruction_loss(Var x, Var x_hat, Var abundances, Var encoder_sq_norm, const ReconstructionWeights& w) {
  if (w.me < 0 || w.sparsity < 0 || w.l2 < 0) throw ConfigError("loss weights must be nonnegative");
  const double B = static_cast<double>(x.dim(0));
  Var loss = ad::mean(ad::neg(ad::log(sad_similarity(x, x_hat))));
  if (w.me > 0) loss = ad::add(loss, ad::scale(ad::sum(ad::abs(ad::sub(x, x_hat))), w.me / B));
  if (w.sparsity > 0) loss = ad::add(loss, ad::scale(ad::sum(ad::abs(abundances)), w.sparsity / B));
  if (w.l2 > 0 && encoder_sq_norm) loss = ad::add(loss, ad::scale(encoder_sq_norm, w.l2));
  return loss;
}

GroupLosses group_losses(double re, double adv_gen, double adv_critic) {
  auto combine = [&](GroupCoefficients c) { return c.re * re + c.adv * adv_gen; };
  return {combine(GroupLossTable::mixture), combine(GroupLossTable::encoder), combine(GroupLossTable::residual),
          combine(GroupLossTable::uncertainty), adv_critic};
}

}  // namespace specmix

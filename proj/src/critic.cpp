#include "specmix/critic.hpp"

#include <cmath>

#include "specmix/errors.hpp"

namespace specmix {

CriticParams CriticParams::init(const CriticConfig& config, Rng& rng) {
  if (config.bands < kCriticMinBands)
    throw ConfigError("critic needs at least " + std::to_string(kCriticMinBands) + " bands, got " +
                      std::to_string(config.bands));
  CriticParams p;
  p.config = config;
  ParameterGroup& g = p.group;
  auto block = [&](const std::string& n, std::size_t k, std::size_t cin, std::size_t cout) {
    g.add(n + ".w", he_normal(Shape{k, cin, cout}, k * cin, rng));
    g.add(n + ".b", Tensor(Shape{cout}));
    g.add(n + ".bn.gamma", Tensor(Shape{cout}, 1.0));
    g.add(n + ".bn.beta", Tensor(Shape{cout}, 0.0));
    g.add(n + ".prelu", Tensor(Shape{cout}, nn::kPReluInit));
  };
  block("conv1", 21, 1, 5);
  block("conv2", 5, 5, 10);
  block("conv3", 5, 10, 20);
  g.add("fc.w", he_normal(Shape{20, 5}, 20, rng));
  g.add("fc.b", Tensor(Shape{5}));
  return p;
}

Var critic_patch_scores(Var spectra, const BoundGroup& p, std::array<nn::BatchNormState, 3>* bn, nn::Mode mode) {
  if (spectra.rank() != 2) throw ShapeError("discriminate expects [B, D], got " + to_string(spectra.shape()));
  const std::size_t B = spectra.dim(0), D = spectra.dim(1);
  if (D < kCriticMinBands)
    throw ConfigError("discriminate needs at least " + std::to_string(kCriticMinBands) + " bands");
  Var h = ad::reshape(spectra, Shape{B, D, 1});
  auto block = [&](Var x, std::size_t first, std::size_t stride, std::size_t layer) {
    Var y = nn::conv1d(x, p[first], p[first + 1], stride);
    y = nn::batch_norm(y, p[first + 2], p[first + 3], bn ? &(*bn)[layer] : nullptr, mode);
    return nn::prelu(y, p[first + 4]);
  };
  h = block(h, crit::conv1_w, 5, 0);
  h = block(h, crit::conv2_w, 2, 1);
  h = block(h, crit::conv3_w, 2, 2);
  const std::size_t L = h.dim(1);
  Var flat = ad::reshape(h, Shape{B * L, 20});
  return ad::reshape(nn::linear(flat, p[crit::fc_w], p[crit::fc_b]), Shape{B, L, 5});
}

Var discriminate(Var spectra, const BoundGroup& p, std::array<nn::BatchNormState, 3>* bn, nn::Mode mode) {
  Var patches = critic_patch_scores(spectra, p, bn, mode);
  return ad::reshape(ad::mean_to(patches, Shape{patches.dim(0), 1, 1}), Shape{patches.dim(0)});
}

Var l1_normalize_spectra(Var x, double eps) {
  return ad::div(x, ad::add_scalar(ad::sum_axis(ad::abs(x), 1), eps));
}

Tensor interpolate_samples(const Tensor& x, const Tensor& x_hat, const std::vector<double>& u) {
  if (x.shape() != x_hat.shape() || x.rank() != 2)
    throw ShapeError("interpolate_samples: " + to_string(x.shape()) + " vs " + to_string(x_hat.shape()));
  if (u.size() != x.dim(0)) throw ShapeError("interpolate_samples: one mixing weight per sample required");
  Tensor out(x.shape());
  for (std::size_t b = 0; b < x.dim(0); ++b)
    for (std::size_t d = 0; d < x.dim(1); ++d) out(b, d) = u[b] * x(b, d) + (1.0 - u[b]) * x_hat(b, d);
  return out;
}

AdversarialTerms adversarial_loss(Var x, Var x_hat, const BoundGroup& p, double penalty_weight,
                                  const std::vector<double>& u, std::array<nn::BatchNormState, 3>* bn) {
  Tape& t = x.tape();
  AdversarialTerms r;
  r.real_score = ad::mean(discriminate(x, p, bn, nn::Mode::train));
  r.fake_score = ad::mean(discriminate(x_hat, p, nullptr, nn::Mode::train));
  Var mixed = t.leaf(interpolate_samples(x.value(), x_hat.value(), u), true);
  r.penalty = ad::gradient_norm_penalty(discriminate(mixed, p, nullptr, nn::Mode::train), mixed);
  r.loss = ad::sub(ad::sub(r.real_score, r.fake_score), ad::scale(r.penalty, penalty_weight));
  return r;
}

}  // namespace specmix

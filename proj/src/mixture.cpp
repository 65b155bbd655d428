#include "specmix/mixture.hpp"

#include <algorithm>
#include <cmath>

#include "specmix/errors.hpp"
#include "specmix/nn.hpp"

namespace specmix {

void MixtureConfig::validate() const {
  if (materials < 2) throw ConfigError("mixture needs at least 2 materials");
  if (components < materials)
    throw ConfigError("mixture needs at least as many components (" + std::to_string(components) +
                      ") as materials (" + std::to_string(materials) + ")");
  if (latent == 0) throw ConfigError("mixture latent dimension must be positive");
}

MixtureParams MixtureParams::init(const MixtureConfig& config, Rng& rng) {
  config.validate();
  const std::size_t K = config.materials, N = config.components, M = config.latent;
  MixtureParams p;
  p.config = config;
  p.group.add("w1", he_normal(Shape{K, N, M}, M, rng));
  p.group.add("b1", Tensor(Shape{K, N}));
  p.group.add("w2", he_normal(Shape{K, N, M}, M, rng));
  p.group.add("b2", Tensor(Shape{K, N}));
  return p;
}

namespace {

// z [B, M] . w [K, N, M]^T + b -> [B, K, N]
Var affine_per_component(Var z, Var w, Var b, const MixtureConfig& c) {
  const std::size_t K = c.materials, N = c.components, M = c.latent;
  if (z.rank() != 2 || z.dim(1) != M)
    throw ShapeError("mixture expects z of shape [B, " + std::to_string(M) + "], got " + to_string(z.shape()));
  if (w.shape() != Shape{K, N, M} || b.shape() != Shape{K, N})
    throw ShapeError("mixture parameters do not match the configured K, N, M");
  Var logits = ad::matmul(z, ad::reshape(w, Shape{K * N, M}), false, true);
  logits = ad::add(logits, ad::reshape(b, Shape{1, K * N}));
  return ad::reshape(logits, Shape{z.dim(0), K, N});
}

}  // namespace

Var component_similarity(Var z, const BoundGroup& p, const MixtureConfig& c) {
  return ad::sigmoid(ad::neg(affine_per_component(z, p[mix::w1], p[mix::b1], c)));
}

Var mixture_weights(Var z, const BoundGroup& p, const MixtureConfig& c) {
  return nn::softmax(affine_per_component(z, p[mix::w2], p[mix::b2], c), 2);
}

AbundanceResult abundances(Var z, const BoundGroup& p, const MixtureConfig& c) {
  const std::size_t B = z.dim(0), K = c.materials;
  Var sim = component_similarity(z, p, c);
  Var pi = mixture_weights(z, p, c);
  Var mixed = ad::reshape(ad::sum_axis(ad::mul(pi, sim), 2), Shape{B, K});
  // rows scaled to unit max before normalizing
  Tensor row_max(Shape{B, 1});
  const Tensor& m = mixed.value();
  for (std::size_t b = 0; b < B; ++b) {
    double top = 0.0;
    for (std::size_t k = 0; k < K; ++k) top = std::max(top, m(b, k));
    row_max(b, 0) = top > 0.0 ? top : 1.0;
  }
  mixed = ad::div(mixed, z.tape().constant(std::move(row_max)));
  AbundanceResult r;
  Var y = nn::l1_normalize(mixed, 1, kAbundanceEps, &r.degenerate_rows);
  if (r.degenerate_rows) {
    // all-zero rows normalize to zeros; lift them to the uniform vector
    Tensor fix(Shape{B, K});
    const Tensor& s = mixed.value();
    for (std::size_t b = 0; b < B; ++b) {
      double row = 0.0;
      for (std::size_t k = 0; k < K; ++k) row += s(b, k);
      if (row == 0.0)
        for (std::size_t k = 0; k < K; ++k) fix(b, k) = 1.0 / static_cast<double>(K);
    }
    y = ad::add(y, z.tape().constant(std::move(fix)));
  }
  r.abundances = y;
  return r;
}

}  // namespace specmix

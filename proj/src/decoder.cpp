#include "specmix/decoder.hpp"

#include <cmath>

#include "specmix/errors.hpp"
#include "specmix/nn.hpp"

namespace specmix {

EndmemberMatrix::EndmemberMatrix(Tensor spectra) : spectra_(std::move(spectra)) {
  if (spectra_.rank() != 2 || spectra_.dim(0) == 0 || spectra_.dim(1) == 0)
    throw ShapeError("endmember matrix must be K x D");
  for (std::size_t k = 0; k < spectra_.dim(0); ++k) {
    bool nonzero = false;
    for (std::size_t d = 0; d < spectra_.dim(1); ++d) {
      const double v = spectra_(k, d);
      if (!std::isfinite(v)) throw ContractError("endmember " + std::to_string(k) + " has a non-finite value");
      if (v < 0.0) throw ContractError("endmember " + std::to_string(k) + " has a negative value");
      nonzero = nonzero || v != 0.0;
    }
    if (!nonzero) throw ContractError("endmember " + std::to_string(k) + " is all zeros");
  }
}

namespace {

ParameterGroup make_net(std::size_t in, std::size_t out, Rng& rng) {
  ParameterGroup g;
  g.add("w1", he_normal(Shape{in, kUncertaintyHidden}, in, rng));
  g.add("b1", Tensor(Shape{kUncertaintyHidden}));
  g.add("w2", he_normal(Shape{kUncertaintyHidden, out}, kUncertaintyHidden, rng));
  g.add("b2", Tensor(Shape{out}));
  // sigmoid(0) = 1/2 puts alpha at the middle of its range
  g.add("alpha", Tensor::scalar(0.0));
  return g;
}

Var two_layer(Var input, const BoundGroup& p) {
  Var h = nn::leaky_relu(nn::linear(input, p[dec::w1], p[dec::b1]));
  return ad::tanh(nn::linear(h, p[dec::w2], p[dec::b2]));
}

}  // namespace

DecoderParams DecoderParams::init(const DecoderConfig& config, Rng& rng) {
  if (config.materials < 2 || config.bands == 0) throw ConfigError("decoder needs K >= 2 and D >= 1");
  DecoderParams p;
  p.config = config;
  p.residual = make_net(config.materials, config.bands, rng);
  p.uncertainty = make_net(config.materials + config.noise_dim, config.bands, rng);
  return p;
}

Var alpha_value(Var raw, double range) { return ad::scale(ad::sigmoid(raw), range); }

Var uncertainty_forward(Var abundances, Var noise, const BoundGroup& params) {
  if (noise.rank() != 2 || noise.dim(0) != abundances.dim(0))
    throw ShapeError("uncertainty noise must be [B, L] matching the abundance batch");
  return two_layer(ad::concat({abundances, noise}, 1), params);
}

Var residual_forward(Var abundances, const BoundGroup& params) { return two_layer(abundances, params); }

Var reconstruct(Var abundances, const EndmemberMatrix& endmembers, Var noise, const DecoderVars& params,
                const DecoderConfig& config) {
  if (abundances.rank() != 2 || abundances.dim(1) != endmembers.materials())
    throw ShapeError("reconstruct: abundances " + to_string(abundances.shape()) + " vs " +
                     std::to_string(endmembers.materials()) + " endmembers");
  Tape& t = abundances.tape();
  Var x = ad::matmul(abundances, t.constant(endmembers.spectra()));
  if (config.use_residual) {
    Var a = alpha_value(params.residual[dec::alpha], kAlphaResidualMax);
    x = ad::add(x, ad::mul(a, residual_forward(abundances, params.residual)));
  }
  if (config.use_uncertainty) {
    Var a = alpha_value(params.uncertainty[dec::alpha], kAlphaUncertaintyMax);
    x = ad::add(x, ad::mul(a, uncertainty_forward(abundances, noise, params.uncertainty)));
  }
  return x;
}

}  // namespace specmix

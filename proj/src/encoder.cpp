#include "specmix/encoder.hpp"

#include "specmix/errors.hpp"

namespace specmix {
namespace {

constexpr std::size_t kChannels = 10;

void add_conv(ParameterGroup& g, const char* name, std::size_t k, std::size_t cin, std::size_t cout, Rng& rng) {
  g.add(std::string(name) + ".w", he_normal(Shape{k, cin, cout}, k * cin, rng));
  g.add(std::string(name) + ".b", Tensor(Shape{cout}));
}

}  // namespace

std::size_t encoder_flat_length(std::size_t bands) {
  const std::size_t d1 = (bands + 4) / 5;
  const std::size_t d2 = (d1 + 1) / 2;
  return (d2 + 1) / 2;
}

EncoderParams EncoderParams::init(const EncoderConfig& config, Rng& rng) {
  if (config.bands < kEncoderMinBands)
    throw ConfigError("encoder needs at least " + std::to_string(kEncoderMinBands) + " bands, got " +
                      std::to_string(config.bands));
  if (config.latent == 0) throw ConfigError("latent dimension must be positive");
  EncoderParams p;
  p.config = config;
  ParameterGroup& g = p.group;
  add_conv(g, "conv1", 21, 1, kChannels, rng);
  g.add("bn.gamma", Tensor(Shape{kChannels}, 1.0));
  g.add("bn.beta", Tensor(Shape{kChannels}, 0.0));
  add_conv(g, "inc3", 3, kChannels, kChannels, rng);
  add_conv(g, "inc5", 5, kChannels, kChannels, rng);
  add_conv(g, "inc7", 7, kChannels, kChannels, rng);
  add_conv(g, "conv2", 3, 3 * kChannels, kChannels, rng);
  const std::size_t flat = encoder_flat_length(config.bands) * kChannels;
  g.add("fc.w", he_normal(Shape{flat, config.latent}, flat, rng));
  g.add("fc.b", Tensor(Shape{config.latent}));
  p.bn = nn::BatchNormState(kChannels);
  return p;
}

Var encode(Var batch, const BoundGroup& p, const EncoderConfig& config, nn::BatchNormState* bn, nn::Mode mode,
           EncoderTrace* trace) {
  if (batch.rank() != 2) throw ShapeError("encode expects [B, D], got " + to_string(batch.shape()));
  const std::size_t B = batch.dim(0), D = batch.dim(1);
  if (D < kEncoderMinBands)
    throw ConfigError("encode needs at least " + std::to_string(kEncoderMinBands) + " bands, got " +
                      std::to_string(D));
  if (D != config.bands)
    throw ShapeError("encoder built for " + std::to_string(config.bands) + " bands, got " + std::to_string(D));

  auto note = [&](const std::string& name, Var v) {
    if (trace) trace->layers.emplace_back(name, v.shape());
    return v;
  };
  auto act = [&](Var v) {
    v = note("lrelu", nn::leaky_relu(v));
    if (trace) trace->activations.push_back(v);
    return v;
  };
  auto pool = [&](Var v, std::size_t k) { return note("avgpool(" + std::to_string(k) + ")", ad::avg_pool1d(v, k)); };
  auto bnorm = [&](Var v) { return note("batchnorm", nn::batch_norm(v, p[enc::bn_gamma], p[enc::bn_beta], bn, mode)); };
  auto snorm = [&](Var v) { return note("spectralnorm", nn::spectral_norm(v)); };
  const bool pre = config.placement == NormPlacement::pre;

  Var x = note("input", ad::reshape(batch, Shape{B, D, 1}));

  Var h = note("conv1d(10,21,1)", nn::conv1d(x, p[enc::conv1_w], p[enc::conv1_b], 1));
  h = pre ? bnorm(pool(act(h), 5)) : pool(act(bnorm(h)), 5);

  Var b3 = note("conv1d(10,3,1)", nn::conv1d(h, p[enc::inc3_w], p[enc::inc3_b], 1));
  Var b5 = note("conv1d(10,5,1)", nn::conv1d(h, p[enc::inc5_w], p[enc::inc5_b], 1));
  Var b7 = note("conv1d(10,7,1)", nn::conv1d(h, p[enc::inc7_w], p[enc::inc7_b], 1));
  h = note("concat", ad::concat({b3, b5, b7}, 2));
  h = pre ? snorm(pool(act(h), 2)) : pool(act(snorm(h)), 2);

  h = note("conv1d(10,3,1)", nn::conv1d(h, p[enc::conv2_w], p[enc::conv2_b], 1));
  h = pre ? snorm(pool(act(h), 2)) : pool(act(snorm(h)), 2);

  h = note("flatten", ad::reshape(h, Shape{B, h.dim(1) * h.dim(2)}));
  Var z = note("linear", nn::linear(h, p[enc::fc_w], p[enc::fc_b]));
  return note("lrelu", nn::leaky_relu(z));
}

double active_response_fraction(const Tensor& batch, const EncoderParams& params) {
  Tape tape;
  NoGradGuard guard(tape);
  BoundGroup bound = bind(tape, params.group, false);
  nn::BatchNormState scratch = params.bn;
  EncoderTrace trace;
  encode(tape.constant(batch), bound, params.config, &scratch, nn::Mode::train, &trace);
  std::size_t positive = 0, total = 0;
  for (const Var& a : trace.activations) {
    for (double v : a.value().data())
      if (v > 0.0) ++positive;
    total += a.value().size();
  }
  return total ? 100.0 * static_cast<double>(positive) / static_cast<double>(total) : 0.0;
}

}  // namespace specmix

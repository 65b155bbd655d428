#pragma once

// Spectral convolution feature extractor: a D-band spectrum to an
// M-dimensional latent feature.
//
//   conv(10,21) > lrelu > avgpool(5) > batchnorm
//   inception conv(10,{3,5,7}) > concat(30) > lrelu > avgpool(2) > spectralnorm
//   conv(10,3) > lrelu > avgpool(2) > spectralnorm
//   flatten > linear(M) > lrelu

#include <string>
#include <utility>
#include <vector>

#include "specmix/nn.hpp"
#include "specmix/params.hpp"

namespace specmix {

inline constexpr std::size_t kEncoderMinBands = 21;

// Where the normalization sits relative to each activation block. `pre` is the
// production layout; `post` (conv > norm > lrelu > pool) is kept for comparing
// active-response statistics.
enum class NormPlacement { pre, post };

struct EncoderConfig {
  std::size_t bands = 0;
  std::size_t latent = 10;
  NormPlacement placement = NormPlacement::pre;
};

namespace enc {
enum Param : std::size_t {
  conv1_w, conv1_b, bn_gamma, bn_beta,
  inc3_w, inc3_b, inc5_w, inc5_b, inc7_w, inc7_b,
  conv2_w, conv2_b, fc_w, fc_b
};
}

struct EncoderParams {
  EncoderConfig config;
  ParameterGroup group;
  nn::BatchNormState bn{10};

  static EncoderParams init(const EncoderConfig& config, Rng& rng);
};

// Spectral length after the three pooling stages (5, 2, 2).
std::size_t encoder_flat_length(std::size_t bands);

struct EncoderTrace {
  std::vector<std::pair<std::string, Shape>> layers;
  std::vector<Var> activations;  // the three lrelu outputs before pooling
};

// batch [B, D] -> [B, M]. Train mode uses batch statistics and updates `bn`
// when given; infer mode reads the running statistics from `bn`.
Var encode(Var batch, const BoundGroup& params, const EncoderConfig& config, nn::BatchNormState* bn, nn::Mode mode,
           EncoderTrace* trace = nullptr);

// Percentage of strictly positive lrelu outputs at the three activation blocks.
double active_response_fraction(const Tensor& batch, const EncoderParams& params);

}  // namespace specmix

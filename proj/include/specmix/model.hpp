#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "specmix/critic.hpp"
#include "specmix/decoder.hpp"
#include "specmix/encoder.hpp"
#include "specmix/mixture.hpp"

namespace specmix {

struct ModelConfig {
  std::size_t bands = 0;
  std::size_t materials = 4;   // K
  std::size_t components = 8;  // N
  std::size_t latent = 10;     // M
  std::size_t noise_dim = 0;   // L; 0 means "same as K"
  bool use_encoder = true;     // false feeds raw spectra to the mixture kernel
  bool use_uncertainty = true; // residual and uncertainty nets
  bool use_wgan = true;

  std::size_t effective_noise_dim() const { return noise_dim ? noise_dim : materials; }
  std::size_t mixture_input() const { return use_encoder ? latent : bands; }
};

// All trainable groups plus the fixed endmember matrix.
struct UnmixModel {
  ModelConfig config;
  EndmemberMatrix endmembers;
  std::optional<EncoderParams> encoder;
  MixtureParams mixture;
  DecoderParams decoder;
  CriticParams critic;

  static UnmixModel init(const ModelConfig& config, EndmemberMatrix endmembers, std::uint64_t seed);

  MixtureConfig mixture_config() const;
  DecoderConfig decoder_config() const;

  // Latent features in infer mode, [P, M] (raw spectra when the encoder is off).
  Tensor latent_features(const Tensor& pixels, std::size_t chunk = 512) const;
  // Abundances in infer mode, [P, K].
  Tensor infer_abundances(const Tensor& pixels, std::size_t chunk = 512) const;
};

// Versioned little-endian parameter dump, magic "DSCNPP01".
void save_checkpoint(const UnmixModel& model, std::uint64_t iteration, const std::filesystem::path& path);
std::string serialize_checkpoint(const UnmixModel& model, std::uint64_t iteration);

struct Checkpoint {
  UnmixModel model;
  std::uint64_t iteration = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(std::string_view bytes);

}  // namespace specmix

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "specmix/adam.hpp"
#include "specmix/data_io.hpp"
#include "specmix/losses.hpp"
#include "specmix/model.hpp"

namespace specmix {

struct TrainConfig {
  double lambda0 = 0.0;    // mean absolute error weight
  double lambda1 = 0.4;    // abundance sparsity
  double lambda2 = 1e-5;   // encoder l2
  double lambda_pq = kPenaltyWeight;
  double learning_rate = 0.002;
  double beta1 = 0.7;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t iterations = 10000;
  std::size_t materials = 4;   // K
  std::size_t components = 8;  // N
  std::size_t latent = 10;     // M
  std::size_t noise_dim = 0;   // L, 0 = K
  std::uint64_t seed = 0;
  bool use_encoder = true;
  bool use_uncertainty = true;
  bool use_wgan = true;
  std::size_t checkpoint_every = 1000;

  void validate() const;
  ModelConfig model_config(std::size_t bands) const;
  AdamConfig adam() const { return AdamConfig{learning_rate, beta1, beta2, adam_eps}; }
  ReconstructionWeights weights() const { return ReconstructionWeights{lambda0, lambda1, lambda2}; }
};

// Flat JSON object with one key per field.
std::string to_json(const TrainConfig& config);
// Overlays the keys present in `text` onto `config`. Unknown keys and type
// mismatches raise ConfigError.
void apply_json(TrainConfig& config, std::string_view text);

struct HistoryRow {
  std::size_t iteration = 0;
  double reconstruction = 0.0;  // L_re
  double adversarial = 0.0;     // L_adv as seen by the critic
  double penalty = 0.0;
};

struct RunOptions {
  std::filesystem::path run_dir;  // empty: nothing written
  std::function<void(const HistoryRow&)> on_iteration;
};

struct TrainResult {
  UnmixModel model;
  std::vector<HistoryRow> history;
  bool diverged = false;
  std::string message;                // divergence cause
  std::size_t checkpoint_iteration = 0;  // iteration of `model` when diverged
};

// Alternating critic / generator updates over seeded batches of `pixels`.
// On a non-finite value the run stops and returns the last snapshot.
TrainResult train(const PixelSet& pixels, const EndmemberMatrix& endmembers, const TrainConfig& config,
                  const RunOptions& options = {});

std::string format_history_row(const HistoryRow& row);
inline constexpr std::string_view kHistoryHeader = "iteration,L_re,L_adv,penalty";

}  // namespace specmix

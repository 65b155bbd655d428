#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "specmix/tensor.hpp"

namespace specmix {

// sqrt(mean over pixels of the squared per-pixel abundance error norm).
// Inputs share a shape whose last axis is K ([H, W, K] or [P, K]).
double rmse(const Tensor& truth, const Tensor& estimate);
// One value per material: sqrt(mean over pixels of the squared error).
std::vector<double> per_material_rmse(const Tensor& truth, const Tensor& estimate);

struct RunOutcome {
  double rmse = 0.0;
  std::vector<double> per_material;
  double active_response = -1.0;  // negative when not measured
  bool failed = false;
  std::string message;
};

struct EvalReport {
  std::size_t runs = 0;
  std::size_t failures = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> rmse;            // successful runs, in seed order
  std::vector<std::string> failure_messages;
  double mean = 0.0;
  double std = 0.0;                    // population standard deviation
  std::vector<double> per_material_mean;
  double active_response = -1.0;       // mean over runs that measured it
  double runtime_seconds = 0.0;
};

// Seed of run `index` in a repeated evaluation.
std::uint64_t run_seed(std::uint64_t master_seed, std::size_t index);

// Runs `train_fn` with `runs` derived seeds. Failed runs (flagged or thrown
// specmix::Error) are counted and excluded from the statistics.
EvalReport repeated_eval(const std::function<RunOutcome(std::uint64_t seed)>& train_fn, std::size_t runs,
                         std::uint64_t master_seed);

std::string report_json(const EvalReport& report);

// Euclidean projection of v onto the probability simplex.
std::vector<double> project_simplex(std::vector<double> v);

struct FclsResult {
  Tensor abundances;  // [P, K]
  bool rank_deficient = false;
  std::vector<double> objective;  // total squared residual per iteration (iteration 0 = start)
};

// Per-pixel min ||E^T y - x||^2 over the simplex, by projected gradient from
// the projected least-squares start.
FclsResult fcls_baseline(const Tensor& pixels, const Tensor& endmembers, std::size_t iterations = 500);

struct ExportSummary {
  std::vector<std::filesystem::path> files;
  std::size_t clamped = 0;
};

// One 8-bit PGM per material (<prefix>_k<k>.pgm) plus <prefix>.csv with
// "row,col,k,value" lines. Values outside [0, 1] are clamped and counted.
ExportSummary export_abundance_maps(const Tensor& abundances, const std::filesystem::path& prefix);
Tensor read_pgm(const std::filesystem::path& path);

struct PcaResult {
  Tensor coordinates;       // [B, 2]
  double variance[2] = {0.0, 0.0};
  bool degenerate = false;  // zero total variance
};

// Top-2 principal components by power iteration with deflation.
PcaResult pca_project(const Tensor& vectors, std::size_t iterations = 200, double tolerance = 1e-9);
void write_pca_csv(const PcaResult& pca, const std::filesystem::path& path);

}  // namespace specmix

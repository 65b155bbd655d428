#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "specmix/decoder.hpp"
#include "specmix/params.hpp"
#include "specmix/tensor.hpp"

namespace specmix {

// H x W x D reflectance raster, band-interleaved-by-pixel.
struct SpectralCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  Tensor data;                          // [H, W, D]
  std::vector<double> wavelengths;      // empty or D entries
  std::vector<std::uint32_t> band_ids;  // 1-based source band of each kept band; empty = identity

  static SpectralCube from_tensor(Tensor data);
  std::size_t pixels() const noexcept { return height * width; }
  // Pixels as rows of a [H*W, D] matrix.
  Tensor as_pixels() const;
};

struct GroundTruth {
  Tensor abundances;  // [H, W, K]
  Tensor endmembers;  // [K, D]
};

// HSC layout: 32-byte header ("HSC1", u32 H, u32 W, u32 D, u32 flags, 12
// zero bytes), then H*W*D little-endian float32 in BIP order. Flag bit 0
// appends D float32 wavelengths, bit 1 appends D u32 source band ids.
inline constexpr std::uint32_t kHscHasWavelengths = 1u;
inline constexpr std::uint32_t kHscHasBandIds = 2u;

SpectralCube load_cube(const std::filesystem::path& path);
void save_cube(const SpectralCube& cube, const std::filesystem::path& path);
SpectralCube parse_cube(std::string_view bytes);
std::string serialize_cube(const SpectralCube& cube);

// CSV of K rows by D comma-separated nonnegative values.
EndmemberMatrix load_endmembers(const std::filesystem::path& path);
EndmemberMatrix parse_endmembers(std::string_view text);
void save_endmembers(const Tensor& spectra, const std::filesystem::path& path);

// 1-based inclusive band range.
struct BandRange {
  std::size_t first;
  std::size_t last;
};
using BandRemoval = std::vector<BandRange>;

BandRemoval urban_band_removal();
BandRemoval jasper_band_removal();
// "urban", "jasper", "none", or an explicit list like "1-4,76,101-111".
BandRemoval parse_band_removal(std::string_view spec);

SpectralCube remove_bands(const SpectralCube& cube, const BandRemoval& removal);
// Same band selection applied to a K x D endmember matrix.
Tensor remove_bands(const Tensor& spectra, const BandRemoval& removal);

struct SceneParams {
  std::size_t height = 60;
  std::size_t width = 60;
  std::size_t materials = 4;
  std::size_t bands = 200;
  std::size_t blobs_per_material = 5;
  double blob_sigma = 6.0;
  double blob_peak = 0.9;
  double noise_snr_db = 30.0;  // infinity disables noise
  std::optional<Tensor> library;  // K x D override for the procedural spectra
};

struct SyntheticScene {
  SpectralCube cube;
  GroundTruth truth;
};

// Material 0 is the background with abundance 1 everywhere before the other
// materials add truncated Gaussian blobs; abundances are renormalized to the
// simplex and pixels mixed linearly with additive Gaussian noise.
SyntheticScene synthesize_scene(std::uint64_t seed, const SceneParams& params = {});

// Smooth random spectra: offsets plus sums of Gaussian bumps over the band axis.
Tensor procedural_spectra(std::size_t materials, std::size_t bands, Rng& rng);

// Flattened, l1-normalized pixels. All-zero pixels are skipped.
struct PixelSet {
  Tensor raw;                       // [P, D]
  Tensor normalized;                // [P, D], rows with unit l1 norm
  std::vector<double> scale;        // l1 norm of each raw row
  std::vector<std::size_t> source;  // index into the H*W pixel grid
  std::size_t skipped = 0;

  std::size_t size() const noexcept { return scale.size(); }
};

PixelSet preprocess(const SpectralCube& cube);

struct Batch {
  std::vector<std::size_t> rows;  // indices into the PixelSet
  Tensor raw;
  Tensor normalized;
};

// Seeded shuffled batches over a PixelSet. `next` draws a continuous stream
// that reshuffles at each epoch boundary, so every batch has full size.
class BatchStream {
 public:
  BatchStream(const PixelSet& pixels, std::size_t batch_size, std::uint64_t seed);

  Batch next();
  // One pass over a fresh permutation; the last batch may be short.
  std::vector<std::vector<std::size_t>> epoch();
  Batch gather(const std::vector<std::size_t>& rows) const;

 private:
  std::vector<std::size_t> permutation();

  const PixelSet* pixels_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace specmix

#include <algorithm>
#include <cmath>

#include "specmix/data_io.hpp"
#include "specmix/errors.hpp"

namespace specmix {

Tensor procedural_spectra(std::size_t materials, std::size_t bands, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double D = static_cast<double>(bands);
  Tensor out(Shape{materials, bands});
  for (std::size_t k = 0; k < materials; ++k) {
    const double base = 0.05 + 0.25 * unit(rng);
    const double tilt = 0.3 * (unit(rng) - 0.5);
    const std::size_t bumps = 3 + static_cast<std::size_t>(unit(rng) * 3.0);
    std::vector<double> center(bumps), width(bumps), amp(bumps);
    for (std::size_t j = 0; j < bumps; ++j) {
      center[j] = unit(rng) * D;
      width[j] = D / 30.0 + unit(rng) * D / 6.0;
      amp[j] = -0.15 + 0.75 * unit(rng);
    }
    for (std::size_t d = 0; d < bands; ++d) {
      const double pos = static_cast<double>(d);
      double v = base + tilt * (pos / D - 0.5);
      for (std::size_t j = 0; j < bumps; ++j) {
        const double t = (pos - center[j]) / width[j];
        v += amp[j] * std::exp(-0.5 * t * t);
      }
      out(k, d) = std::clamp(v, 0.01, 1.0);
    }
  }
  return out;
}

SyntheticScene synthesize_scene(std::uint64_t seed, const SceneParams& p) {
  if (p.materials < 2) throw ParameterError("synthetic scene needs at least 2 materials");
  if (p.height == 0 || p.width == 0 || p.bands == 0) throw ParameterError("synthetic scene extents must be positive");
  if (p.blob_sigma <= 0.0 || p.blob_peak <= 0.0) throw ParameterError("blob sigma and peak must be positive");
  const std::size_t H = p.height, W = p.width, K = p.materials, D = p.bands;

  Rng spectra_rng(derive_seed(seed, 0));
  Rng layout_rng(derive_seed(seed, 1));
  Rng noise_rng(derive_seed(seed, 2));

  Tensor library;
  if (p.library) {
    if (p.library->shape() != Shape{K, D})
      throw ParameterError("endmember library must be " + to_string(Shape{K, D}) + ", got " +
                           to_string(p.library->shape()));
    library = *p.library;
  } else {
    library = procedural_spectra(K, D, spectra_rng);
  }

  // raw material weights: background 1 everywhere, blobs truncated at 3 sigma
  Tensor weight(Shape{H, W, K});
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) weight(r, c, 0) = 1.0;
  std::uniform_real_distribution<double> row_pos(0.0, static_cast<double>(H));
  std::uniform_real_distribution<double> col_pos(0.0, static_cast<double>(W));
  const double cutoff = 3.0 * p.blob_sigma;
  for (std::size_t k = 1; k < K; ++k)
    for (std::size_t b = 0; b < p.blobs_per_material; ++b) {
      const double cr = row_pos(layout_rng), cc = col_pos(layout_rng);
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
          const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
          const double dist = std::sqrt(dr * dr + dc * dc);
          if (dist > cutoff) continue;
          weight(r, c, k) += p.blob_peak * std::exp(-0.5 * dist * dist / (p.blob_sigma * p.blob_sigma));
        }
    }

  SyntheticScene scene;
  scene.truth.endmembers = library;
  scene.truth.abundances = Tensor(Shape{H, W, K});
  Tensor clean(Shape{H, W, D});
  double power = 0.0;
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      double total = 0.0;
      for (std::size_t k = 0; k < K; ++k) total += weight(r, c, k);
      for (std::size_t k = 0; k < K; ++k) scene.truth.abundances(r, c, k) = weight(r, c, k) / total;
      for (std::size_t d = 0; d < D; ++d) {
        double v = 0.0;
        for (std::size_t k = 0; k < K; ++k) v += scene.truth.abundances(r, c, k) * library(k, d);
        clean(r, c, d) = v;
        power += v * v;
      }
    }
  power /= static_cast<double>(clean.size());

  if (std::isfinite(p.noise_snr_db)) {
    const double sigma = std::sqrt(power / std::pow(10.0, p.noise_snr_db / 10.0));
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& v : clean.data()) v += noise(noise_rng);
  }
  scene.cube = SpectralCube::from_tensor(std::move(clean));
  return scene;
}

}  // namespace specmix

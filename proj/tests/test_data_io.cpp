#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <set>

#include "specmix/data_io.hpp"
#include "specmix/errors.hpp"
#include "support.hpp"

using namespace specmix;
using namespace specmix::testing;

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& s, float v) { put_u32(s, std::bit_cast<std::uint32_t>(v)); }

std::string hsc_header(std::uint32_t h, std::uint32_t w, std::uint32_t d, std::uint32_t flags = 0) {
  std::string s = "HSC1";
  put_u32(s, h);
  put_u32(s, w);
  put_u32(s, d);
  put_u32(s, flags);
  s.append(12, '\0');
  return s;
}

Tensor float32_cube(std::size_t h, std::size_t w, std::size_t d, Rng& rng) {
  Tensor t = uniform(Shape{h, w, d}, rng, 0, 1);
  for (double& v : t.data()) v = static_cast<float>(v);
  return t;
}

}  // namespace

TEST_CASE("hand-written HSC file") {
  std::string bytes = hsc_header(2, 2, 3);
  for (int i = 0; i < 12; ++i) put_f32(bytes, 0.25f * static_cast<float>(i));
  SpectralCube c = parse_cube(bytes);
  CHECK(c.height == 2);
  CHECK(c.width == 2);
  CHECK(c.bands == 3);
  for (int i = 0; i < 12; ++i) CHECK(c.data[static_cast<std::size_t>(i)] == 0.25 * i);
  CHECK(c.data(1, 0, 2) == 0.25 * 8);
  CHECK(serialize_cube(c) == bytes);
}

TEST_CASE("HSC errors carry offsets") {
  std::string good = hsc_header(1, 2, 2);
  for (int i = 0; i < 4; ++i) put_f32(good, 1.0f);

  std::string bad = good;
  bad[0] = 'X';
  try {
    parse_cube(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset == 0);
  }
  const std::string truncated = good.substr(0, good.size() - 3);
  try {
    parse_cube(truncated);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected 16") != std::string::npos);
    CHECK(msg.find("got 13") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_cube(good.substr(0, 10)), FormatError);
  CHECK_THROWS_AS(parse_cube(hsc_header(0xFFFFFFFF, 0xFFFFFFFF, 0xFFFFFFFF)), FormatError);
  CHECK_THROWS_AS(parse_cube(hsc_header(1, 1, 1, 8) + std::string(4, '\0')), FormatError);
  std::string nan = hsc_header(1, 1, 1);
  put_f32(nan, std::numeric_limits<float>::quiet_NaN());
  CHECK_THROWS_AS(parse_cube(nan), FormatError);
}

TEST_CASE("HSC round trip is lossless at float32") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    SpectralCube c =
        SpectralCube::from_tensor(float32_cube(uniform_int(rng, 1, 5), uniform_int(rng, 1, 5), uniform_int(rng, 1, 9), rng));
    if (trial % 2) {
      for (std::size_t d = 0; d < c.bands; ++d) c.wavelengths.push_back(400.0 + 10.0 * static_cast<double>(d));
      for (std::size_t d = 0; d < c.bands; ++d) c.band_ids.push_back(static_cast<std::uint32_t>(2 * d + 1));
    }
    SpectralCube back = parse_cube(serialize_cube(c));
    CHECK(back.data == c.data);
    CHECK(back.wavelengths == c.wavelengths);
    CHECK(back.band_ids == c.band_ids);
  }
  const auto path = std::filesystem::temp_directory_path() / "specmix_test_cube.hsc";
  SpectralCube c = SpectralCube::from_tensor(float32_cube(3, 4, 5, rng));
  save_cube(c, path);
  CHECK(load_cube(path).data == c.data);
  std::filesystem::remove(path);
}

TEST_CASE("endmember CSV parsing") {
  EndmemberMatrix e = parse_endmembers("1,0,0\n0,1,0\n");
  CHECK(e.spectra().shape() == Shape{2, 3});
  CHECK(e.spectra().values() == std::vector<double>{1, 0, 0, 0, 1, 0});
  CHECK_THROWS_AS(parse_endmembers("1,0,0\n0,0,0\n"), FormatError);
  CHECK_THROWS_AS(parse_endmembers("1,0,0\n0,1\n"), FormatError);
  CHECK_THROWS_AS(parse_endmembers("1,-2,0\n"), FormatError);
  CHECK_THROWS_AS(parse_endmembers("1,abc,0\n"), FormatError);
  CHECK_THROWS_AS(parse_endmembers(""), FormatError);

  Rng rng(2);
  const Tensor jasper = uniform(Shape{4, 198}, rng, 0.01, 1);
  const auto path = std::filesystem::temp_directory_path() / "specmix_test_em.csv";
  save_endmembers(jasper, path);
  EndmemberMatrix back = load_endmembers(path);
  CHECK(back.spectra() == jasper);
  std::filesystem::remove(path);
}

TEST_CASE("band removal presets") {
  Rng rng(3);
  SpectralCube urban = SpectralCube::from_tensor(float32_cube(2, 3, 210, rng));
  SpectralCube u = remove_bands(urban, urban_band_removal());
  CHECK(u.bands == 162);
  CHECK(u.height == 2);
  CHECK(u.width == 3);
  CHECK(u.band_ids.front() == 5);
  SpectralCube jasper = SpectralCube::from_tensor(float32_cube(2, 2, 224, rng));
  CHECK(remove_bands(jasper, jasper_band_removal()).bands == 198);
  CHECK(remove_bands(jasper, {}).data == jasper.data);
  CHECK(parse_band_removal("none").empty());
  CHECK(parse_band_removal("urban").size() == urban_band_removal().size());
  const BandRemoval custom = parse_band_removal("1-4,76");
  REQUIRE(custom.size() == 2);
  CHECK(custom[0].first == 1);
  CHECK(custom[0].last == 4);
  CHECK(custom[1].first == 76);
  CHECK_THROWS_AS(remove_bands(jasper, BandRemoval{{220, 230}}), ParameterError);
  CHECK_THROWS_AS(parse_band_removal("5-2"), ParameterError);

  // pixel spectra keep their order and lose exactly the listed bands
  SpectralCube small = SpectralCube::from_tensor(float32_cube(1, 2, 6, rng));
  SpectralCube r = remove_bands(small, BandRemoval{{2, 3}, {6, 6}});
  CHECK(r.bands == 3);
  for (std::size_t w = 0; w < 2; ++w) {
    CHECK(r.data(0, w, 0) == small.data(0, w, 0));
    CHECK(r.data(0, w, 1) == small.data(0, w, 3));
    CHECK(r.data(0, w, 2) == small.data(0, w, 4));
  }
  CHECK(remove_bands(Tensor(Shape{2, 6}, 1.0), BandRemoval{{2, 3}}).shape() == Shape{2, 4});
}

TEST_CASE("synthetic scene") {
  SyntheticScene s = synthesize_scene(7);
  CHECK(s.cube.height == 60);
  CHECK(s.cube.width == 60);
  CHECK(s.cube.bands == 200);
  CHECK(s.truth.endmembers.shape() == Shape{4, 200});
  CHECK(s.truth.abundances.shape() == Shape{60, 60, 4});
  for (std::size_t p = 0; p < 3600; ++p) {
    double sum = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(s.truth.abundances[p * 4 + k] >= 0.0);
      sum += s.truth.abundances[p * 4 + k];
    }
    CHECK(std::abs(sum - 1) < 1e-9);
  }
  SyntheticScene again = synthesize_scene(7);
  CHECK(again.cube.data == s.cube.data);
  CHECK(again.truth.abundances == s.truth.abundances);
  CHECK(synthesize_scene(8).cube.data != s.cube.data);

  SceneParams quiet;
  quiet.noise_snr_db = std::numeric_limits<double>::infinity();
  SyntheticScene clean = synthesize_scene(3, quiet);
  std::size_t pure = 0;
  for (std::size_t p = 0; p < 3600; ++p)
    for (std::size_t k = 0; k < 4; ++k)
      if (clean.truth.abundances[p * 4 + k] == 1.0) {
        ++pure;
        for (std::size_t d = 0; d < 200; ++d)
          CHECK(clean.cube.data[p * 200 + d] == doctest::Approx(clean.truth.endmembers(k, d)).epsilon(1e-12));
      }
  CHECK(pure > 0);

  SceneParams one;
  one.materials = 1;
  CHECK_THROWS_AS(synthesize_scene(1, one), ParameterError);
}

TEST_CASE("preprocessing and batching") {
  Rng rng(4);
  Tensor data = float32_cube(5, 6, 8, rng);
  for (std::size_t d = 0; d < 8; ++d) data(0, 3, d) = 0.0;
  SpectralCube c = SpectralCube::from_tensor(data);
  PixelSet px = preprocess(c);
  CHECK(px.size() == 29);
  CHECK(px.skipped == 1);
  for (std::size_t p = 0; p < px.size(); ++p) {
    double s = 0, raw = 0;
    for (std::size_t d = 0; d < 8; ++d) {
      s += px.normalized(p, d);
      raw += px.raw(p, d);
    }
    CHECK(std::abs(s - 1) < 1e-9);
    CHECK(raw == doctest::Approx(px.scale[p]));
    CHECK(px.source[p] != 3);
  }

  BandRemoval none;
  BatchStream a(px, 4, 9), b(px, 4, 9);
  for (int i = 0; i < 10; ++i) CHECK(a.next().rows == b.next().rows);

  BatchStream s(px, 4, 10);
  std::multiset<std::size_t> seen;
  for (const auto& batch : s.epoch()) seen.insert(batch.begin(), batch.end());
  std::multiset<std::size_t> all;
  for (std::size_t i = 0; i < px.size(); ++i) all.insert(i);
  CHECK(seen == all);

  Batch g = s.gather({2, 5});
  CHECK(g.raw.shape() == Shape{2, 8});
  CHECK(g.normalized(1, 3) == px.normalized(5, 3));
  CHECK_THROWS_AS(BatchStream(px, 0, 1), ConfigError);
}

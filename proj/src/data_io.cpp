#include "specmix/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "specmix/errors.hpp"

namespace specmix {
namespace {

constexpr std::size_t kHeaderSize = 32;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

double get_f32(std::string_view bytes, std::size_t at) {
  return static_cast<double>(std::bit_cast<float>(get_u32(bytes, at)));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::size_t> kept_bands(std::size_t bands, const BandRemoval& removal) {
  std::vector<char> drop(bands, 0);
  for (const BandRange& r : removal) {
    if (r.first < 1 || r.last < r.first || r.last > bands)
      throw ParameterError("band range " + std::to_string(r.first) + "-" + std::to_string(r.last) +
                           " is invalid for " + std::to_string(bands) + " bands");
    for (std::size_t b = r.first; b <= r.last; ++b) drop[b - 1] = 1;
  }
  std::vector<std::size_t> keep;
  for (std::size_t b = 0; b < bands; ++b)
    if (!drop[b]) keep.push_back(b);
  if (keep.empty()) throw ParameterError("band removal leaves no bands");
  return keep;
}

}  // namespace

SpectralCube SpectralCube::from_tensor(Tensor data) {
  if (data.rank() != 3) throw ShapeError("cube data must be [H, W, D]");
  SpectralCube c;
  c.height = data.dim(0);
  c.width = data.dim(1);
  c.bands = data.dim(2);
  c.data = std::move(data);
  return c;
}

Tensor SpectralCube::as_pixels() const { return data.reshaped(Shape{height * width, bands}); }

std::string serialize_cube(const SpectralCube& cube) {
  if (cube.data.shape() != Shape{cube.height, cube.width, cube.bands})
    throw ShapeError("cube extents disagree with its data");
  std::uint32_t flags = 0;
  if (!cube.wavelengths.empty()) {
    if (cube.wavelengths.size() != cube.bands) throw ShapeError("wavelength list does not match band count");
    flags |= kHscHasWavelengths;
  }
  if (!cube.band_ids.empty()) {
    if (cube.band_ids.size() != cube.bands) throw ShapeError("band id list does not match band count");
    flags |= kHscHasBandIds;
  }
  std::string out = "HSC1";
  put_u32(out, static_cast<std::uint32_t>(cube.height));
  put_u32(out, static_cast<std::uint32_t>(cube.width));
  put_u32(out, static_cast<std::uint32_t>(cube.bands));
  put_u32(out, flags);
  out.append(kHeaderSize - out.size(), '\0');
  out.reserve(out.size() + 4 * cube.data.size());
  for (double v : cube.data.data()) put_f32(out, v);
  for (double w : cube.wavelengths) put_f32(out, w);
  for (std::uint32_t id : cube.band_ids) put_u32(out, id);
  return out;
}

SpectralCube parse_cube(std::string_view bytes) {
  if (bytes.size() < kHeaderSize)
    throw FormatError("HSC header needs " + std::to_string(kHeaderSize) + " bytes, file has " +
                          std::to_string(bytes.size()),
                      static_cast<long long>(bytes.size()));
  if (bytes.substr(0, 4) != "HSC1") throw FormatError("bad HSC magic", 0);
  const std::uint64_t H = get_u32(bytes, 4), W = get_u32(bytes, 8), D = get_u32(bytes, 12);
  const std::uint32_t flags = get_u32(bytes, 16);
  if (flags & ~(kHscHasWavelengths | kHscHasBandIds)) throw FormatError("unknown HSC flags", 16);
  if (H == 0 || W == 0 || D == 0) throw FormatError("HSC extents must be positive", 4);
  const std::uint64_t count = H * W * D;  // each factor < 2^32, so H*W fits; check the rest
  if (H * W > (std::uint64_t{1} << 40) / D) throw FormatError("HSC extents overflow", 4);
  std::uint64_t expected = kHeaderSize + 4 * count;
  if (flags & kHscHasWavelengths) expected += 4 * D;
  if (flags & kHscHasBandIds) expected += 4 * D;
  if (bytes.size() != expected)
    throw FormatError("HSC payload length mismatch: expected " + std::to_string(expected - kHeaderSize) +
                          " bytes, got " + std::to_string(bytes.size() - kHeaderSize),
                      static_cast<long long>(std::min<std::uint64_t>(bytes.size(), expected)));

  SpectralCube c;
  c.height = H;
  c.width = W;
  c.bands = D;
  c.data = Tensor(Shape{H, W, D});
  std::size_t at = kHeaderSize;
  for (double& v : c.data.data()) {
    v = get_f32(bytes, at);
    if (!std::isfinite(v)) throw FormatError("non-finite reflectance", static_cast<long long>(at));
    at += 4;
  }
  if (flags & kHscHasWavelengths)
    for (std::size_t i = 0; i < D; ++i, at += 4) c.wavelengths.push_back(get_f32(bytes, at));
  if (flags & kHscHasBandIds)
    for (std::size_t i = 0; i < D; ++i, at += 4) c.band_ids.push_back(get_u32(bytes, at));
  return c;
}

SpectralCube load_cube(const std::filesystem::path& path) { return parse_cube(read_file(path)); }

void save_cube(const SpectralCube& cube, const std::filesystem::path& path) {
  write_file(path, serialize_cube(cube));
}

EndmemberMatrix parse_endmembers(std::string_view text) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0, line_no = 0, offset = 0;
  while (offset <= text.size()) {
    const std::size_t nl = text.find('\n', offset);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    std::string_view line = trim(text.substr(offset, end - offset));
    ++line_no;
    if (!line.empty() && line.front() != '#') {
      std::size_t n = 0;
      std::size_t start = 0;
      while (start <= line.size()) {
        const std::size_t comma = line.find(',', start);
        const std::size_t stop = comma == std::string_view::npos ? line.size() : comma;
        std::string cell(trim(line.substr(start, stop - start)));
        char* parse_end = nullptr;
        const double v = std::strtod(cell.c_str(), &parse_end);
        if (cell.empty() || parse_end != cell.c_str() + cell.size() || !std::isfinite(v))
          throw FormatError("endmember line " + std::to_string(line_no) + ": bad value '" + cell + "'",
                            static_cast<long long>(offset + start));
        if (v < 0.0)
          throw FormatError("endmember line " + std::to_string(line_no) + ": negative value",
                            static_cast<long long>(offset + start));
        values.push_back(v);
        ++n;
        if (comma == std::string_view::npos) break;
        start = comma + 1;
      }
      if (rows == 0) cols = n;
      if (n != cols)
        throw FormatError("endmember line " + std::to_string(line_no) + " has " + std::to_string(n) +
                              " values, expected " + std::to_string(cols),
                          static_cast<long long>(offset));
      ++rows;
    }
    if (nl == std::string_view::npos) break;
    offset = nl + 1;
  }
  if (rows == 0) throw FormatError("endmember file is empty");
  try {
    return EndmemberMatrix(Tensor(Shape{rows, cols}, std::move(values)));
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  }
}

EndmemberMatrix load_endmembers(const std::filesystem::path& path) { return parse_endmembers(read_file(path)); }

void save_endmembers(const Tensor& spectra, const std::filesystem::path& path) {
  std::string out;
  char buf[32];
  for (std::size_t k = 0; k < spectra.dim(0); ++k) {
    for (std::size_t d = 0; d < spectra.dim(1); ++d) {
      std::snprintf(buf, sizeof buf, "%.17g", spectra(k, d));
      if (d) out += ',';
      out += buf;
    }
    out += '\n';
  }
  write_file(path, out);
}

BandRemoval urban_band_removal() { return {{1, 4}, {76, 76}, {87, 87}, {101, 111}, {136, 153}, {198, 210}}; }

BandRemoval jasper_band_removal() { return {{1, 3}, {108, 112}, {154, 166}, {220, 224}}; }

BandRemoval parse_band_removal(std::string_view spec) {
  spec = trim(spec);
  if (spec == "urban") return urban_band_removal();
  if (spec == "jasper") return jasper_band_removal();
  if (spec == "none" || spec.empty()) return {};
  BandRemoval out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t comma = spec.find(',', start);
    const std::string item(trim(spec.substr(start, (comma == std::string_view::npos ? spec.size() : comma) - start)));
    std::size_t first = 0, last = 0;
    char tail = 0;
    if (std::sscanf(item.c_str(), "%zu-%zu%c", &first, &last, &tail) == 2) {
    } else if (std::sscanf(item.c_str(), "%zu%c", &first, &tail) == 1) {
      last = first;
    } else {
      throw ParameterError("bad band range '" + item + "'");
    }
    if (first == 0 || last < first) throw ParameterError("band range '" + item + "' must be 1-based and ascending");
    out.push_back({first, last});
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

SpectralCube remove_bands(const SpectralCube& cube, const BandRemoval& removal) {
  if (removal.empty()) return cube;
  const std::vector<std::size_t> keep = kept_bands(cube.bands, removal);
  SpectralCube out;
  out.height = cube.height;
  out.width = cube.width;
  out.bands = keep.size();
  out.data = Tensor(Shape{cube.height, cube.width, keep.size()});
  const std::size_t P = cube.pixels();
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t j = 0; j < keep.size(); ++j)
      out.data[p * keep.size() + j] = cube.data[p * cube.bands + keep[j]];
  for (std::size_t j : keep) {
    if (!cube.wavelengths.empty()) out.wavelengths.push_back(cube.wavelengths[j]);
    out.band_ids.push_back(cube.band_ids.empty() ? static_cast<std::uint32_t>(j + 1) : cube.band_ids[j]);
  }
  return out;
}

Tensor remove_bands(const Tensor& spectra, const BandRemoval& removal) {
  if (removal.empty()) return spectra;
  const std::vector<std::size_t> keep = kept_bands(spectra.dim(1), removal);
  Tensor out(Shape{spectra.dim(0), keep.size()});
  for (std::size_t k = 0; k < spectra.dim(0); ++k)
    for (std::size_t j = 0; j < keep.size(); ++j) out(k, j) = spectra(k, keep[j]);
  return out;
}

PixelSet preprocess(const SpectralCube& cube) {
  const std::size_t P = cube.pixels(), D = cube.bands;
  PixelSet s;
  std::vector<double> raw, norm;
  raw.reserve(P * D);
  norm.reserve(P * D);
  for (std::size_t p = 0; p < P; ++p) {
    const double* row = cube.data.data().data() + p * D;
    double l1 = 0.0;
    for (std::size_t d = 0; d < D; ++d) l1 += std::abs(row[d]);
    if (l1 == 0.0) {
      ++s.skipped;
      continue;
    }
    for (std::size_t d = 0; d < D; ++d) {
      raw.push_back(row[d]);
      norm.push_back(row[d] / l1);
    }
    s.scale.push_back(l1);
    s.source.push_back(p);
  }
  const std::size_t n = s.scale.size();
  s.raw = Tensor(Shape{n, D}, std::move(raw));
  s.normalized = Tensor(Shape{n, D}, std::move(norm));
  return s;
}

BatchStream::BatchStream(const PixelSet& pixels, std::size_t batch_size, std::uint64_t seed)
    : pixels_(&pixels), batch_size_(batch_size), rng_(seed) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (pixels.size() == 0) throw ConfigError("no usable pixels");
}

std::vector<std::size_t> BatchStream::permutation() {
  std::vector<std::size_t> order(pixels_->size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Fisher-Yates with raw engine output, independent of library distributions
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_() % i]);
  return order;
}

Batch BatchStream::next() {
  std::vector<std::size_t> rows;
  rows.reserve(batch_size_);
  while (rows.size() < batch_size_) {
    if (cursor_ >= order_.size()) {
      order_ = permutation();
      cursor_ = 0;
    }
    rows.push_back(order_[cursor_++]);
  }
  return gather(rows);
}

std::vector<std::vector<std::size_t>> BatchStream::epoch() {
  const std::vector<std::size_t> order = permutation();
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size_)
    out.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + batch_size_));
  return out;
}

Batch BatchStream::gather(const std::vector<std::size_t>& rows) const {
  const std::size_t D = pixels_->raw.dim(1);
  Batch b;
  b.rows = rows;
  b.raw = Tensor(Shape{rows.size(), D});
  b.normalized = Tensor(Shape{rows.size(), D});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t d = 0; d < D; ++d) {
      b.raw(i, d) = pixels_->raw(rows[i], d);
      b.normalized(i, d) = pixels_->normalized(rows[i], d);
    }
  return b;
}

}  // namespace specmix

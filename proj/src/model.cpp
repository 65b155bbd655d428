#include "specmix/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "specmix/errors.hpp"

namespace specmix {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'C', 'N', 'P', 'P', '0', '1'};
constexpr std::uint32_t kVersion = 1;

enum : std::uint32_t { flag_encoder = 1u, flag_uncertainty = 2u, flag_wgan = 4u };

}  // namespace

MixtureConfig UnmixModel::mixture_config() const {
  return MixtureConfig{config.materials, config.components, config.mixture_input()};
}

DecoderConfig UnmixModel::decoder_config() const {
  DecoderConfig d;
  d.materials = config.materials;
  d.bands = config.bands;
  d.noise_dim = config.effective_noise_dim();
  d.use_residual = config.use_uncertainty;
  d.use_uncertainty = config.use_uncertainty;
  return d;
}

UnmixModel UnmixModel::init(const ModelConfig& config, EndmemberMatrix endmembers, std::uint64_t seed) {
  if (endmembers.spectra().rank() != 2) throw ConfigError("endmember matrix is empty");
  if (endmembers.materials() != config.materials)
    throw ConfigError("model expects " + std::to_string(config.materials) + " materials, endmember file has " +
                      std::to_string(endmembers.materials()));
  if (endmembers.bands() != config.bands)
    throw ConfigError("endmembers have " + std::to_string(endmembers.bands()) + " bands, data has " +
                      std::to_string(config.bands));
  UnmixModel m;
  m.config = config;
  m.endmembers = std::move(endmembers);
  Rng enc_rng(derive_seed(seed, 0));
  Rng mix_rng(derive_seed(seed, 1));
  Rng dec_rng(derive_seed(seed, 2));
  Rng crit_rng(derive_seed(seed, 3));
  if (config.use_encoder) m.encoder = EncoderParams::init(EncoderConfig{config.bands, config.latent}, enc_rng);
  m.mixture = MixtureParams::init(m.mixture_config(), mix_rng);
  m.decoder = DecoderParams::init(m.decoder_config(), dec_rng);
  m.critic = CriticParams::init(CriticConfig{config.bands}, crit_rng);
  return m;
}

Tensor UnmixModel::latent_features(const Tensor& pixels, std::size_t chunk) const {
  if (pixels.rank() != 2 || pixels.dim(1) != config.bands)
    throw ShapeError("expected pixels [P, " + std::to_string(config.bands) + "], got " + to_string(pixels.shape()));
  if (!encoder) return pixels;
  const std::size_t P = pixels.dim(0), D = config.bands, M = config.latent;
  Tensor out(Shape{P, M});
  nn::BatchNormState bn = encoder->bn;
  for (std::size_t start = 0; start < P; start += chunk) {
    const std::size_t n = std::min(chunk, P - start);
    Tape tape;
    tape.set_grad_enabled(false);
    std::vector<double> rows(pixels.data().begin() + start * D, pixels.data().begin() + (start + n) * D);
    Var x = tape.constant(Tensor(Shape{n, D}, std::move(rows)));
    BoundGroup params = bind(tape, encoder->group, false);
    Var z = encode(x, params, encoder->config, &bn, nn::Mode::infer);
    std::copy(z.value().data().begin(), z.value().data().end(), out.data().begin() + start * M);
  }
  return out;
}

Tensor UnmixModel::infer_abundances(const Tensor& pixels, std::size_t chunk) const {
  const Tensor z_all = latent_features(pixels, chunk);
  const std::size_t P = z_all.dim(0), F = z_all.dim(1), K = config.materials;
  Tensor out(Shape{P, K});
  const MixtureConfig mc = mixture_config();
  for (std::size_t start = 0; start < P; start += chunk) {
    const std::size_t n = std::min(chunk, P - start);
    Tape tape;
    tape.set_grad_enabled(false);
    std::vector<double> rows(z_all.data().begin() + start * F, z_all.data().begin() + (start + n) * F);
    Var z = tape.constant(Tensor(Shape{n, F}, std::move(rows)));
    BoundGroup params = bind(tape, mixture.group, false);
    AbundanceResult r = abundances(z, params, mc);
    std::copy(r.abundances.value().data().begin(), r.abundances.value().data().end(),
              out.data().begin() + start * K);
  }
  return out;
}

// ---- checkpoint encoding

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void tensor(const std::string& name, const Tensor& t) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n)
      throw FormatError("checkpoint truncated: needed " + std::to_string(n) + " more bytes", static_cast<long long>(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::vector<std::pair<std::string, Tensor*>> model_slots(UnmixModel& m) {
  std::vector<std::pair<std::string, Tensor*>> slots;
  auto group = [&](const std::string& prefix, ParameterGroup& g) {
    for (std::size_t i = 0; i < g.size(); ++i) slots.emplace_back(prefix + g.names[i], &g.values[i]);
  };
  auto bn = [&](const std::string& prefix, nn::BatchNormState& s) {
    slots.emplace_back(prefix + "running_mean", &s.running_mean);
    slots.emplace_back(prefix + "running_var", &s.running_var);
  };
  if (m.encoder) {
    group("encoder.", m.encoder->group);
    bn("encoder.bn.", m.encoder->bn);
  }
  group("mixture.", m.mixture.group);
  group("residual.", m.decoder.residual);
  group("uncertainty.", m.decoder.uncertainty);
  group("critic.", m.critic.group);
  for (std::size_t i = 0; i < m.critic.bn.size(); ++i) bn("critic.bn" + std::to_string(i + 1) + ".", m.critic.bn[i]);
  return slots;
}

}  // namespace

std::string serialize_checkpoint(const UnmixModel& model, std::uint64_t iteration) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u64(iteration);
  const ModelConfig& c = model.config;
  w.u64(c.bands);
  w.u64(c.materials);
  w.u64(c.components);
  w.u64(c.latent);
  w.u64(c.noise_dim);
  w.u32((c.use_encoder ? flag_encoder : 0u) | (c.use_uncertainty ? flag_uncertainty : 0u) |
        (c.use_wgan ? flag_wgan : 0u));

  UnmixModel& m = const_cast<UnmixModel&>(model);
  auto slots = model_slots(m);
  w.u32(static_cast<std::uint32_t>(slots.size() + 1));
  for (const auto& [name, t] : slots) w.tensor(name, *t);
  w.tensor("endmembers", model.endmembers.spectra());
  return w.take();
}

void save_checkpoint(const UnmixModel& model, std::uint64_t iteration, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model, iteration);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic))
    throw FormatError("not a checkpoint (bad magic)", 0);
  const std::size_t version_at = r.pos();
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), static_cast<long long>(version_at));
  Checkpoint cp;
  cp.iteration = r.u64();
  ModelConfig c;
  c.bands = r.u64();
  c.materials = r.u64();
  c.components = r.u64();
  c.latent = r.u64();
  c.noise_dim = r.u64();
  const std::uint32_t flags = r.u32();
  c.use_encoder = flags & flag_encoder;
  c.use_uncertainty = flags & flag_uncertainty;
  c.use_wgan = flags & flag_wgan;

  std::map<std::string, Tensor> tensors;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    const std::uint32_t name_len = r.u32();
    std::string name(r.bytes(name_len));
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("tensor '" + name + "' has implausible rank", static_cast<long long>(at));
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d != 0 && n > (bytes.size() / 8) / d)
        throw FormatError("tensor '" + name + "' extent overflows the file", static_cast<long long>(at));
      n *= d;
    }
    r.need(n * 8);
    std::vector<double> values(n);
    for (double& v : values) v = r.f64();
    tensors.insert_or_assign(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", static_cast<long long>(r.pos()));

  auto em = tensors.find("endmembers");
  if (em == tensors.end()) throw FormatError("checkpoint has no endmembers");
  cp.model = UnmixModel::init(c, EndmemberMatrix(em->second), 0);
  for (auto& [name, slot] : model_slots(cp.model)) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape() != slot->shape())
      throw FormatError("tensor '" + name + "' has shape " + to_string(it->second.shape()) + ", expected " +
                        to_string(slot->shape()));
    *slot = std::move(it->second);
  }
  return cp;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace specmix

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "specmix/errors.hpp"
#include "specmix/train.hpp"
#include "support.hpp"

using namespace specmix;
namespace fs = std::filesystem;

namespace {

struct SmallScene {
  SyntheticScene scene;
  PixelSet pixels;
};

const SmallScene& small_scene() {
  static const SmallScene s = [] {
    SceneParams p;
    p.height = 12;
    p.width = 12;
    p.bands = 40;
    p.blob_sigma = 3.0;
    SmallScene out{synthesize_scene(11, p), {}};
    out.pixels = preprocess(out.scene.cube);
    return out;
  }();
  return s;
}

TrainConfig small_config(std::size_t iterations) {
  TrainConfig c;
  c.batch_size = 16;
  c.iterations = iterations;
  c.seed = 5;
  c.checkpoint_every = 5;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool same_group(const ParameterGroup& a, const ParameterGroup& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i] == b[i]) || a.names[i] != b.names[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("config JSON round trip and validation") {
  TrainConfig c;
  c.lambda0 = 0.25;
  c.learning_rate = 0.001;
  c.iterations = 123;
  c.components = 16;
  c.use_wgan = false;
  c.seed = 99;
  TrainConfig back;
  apply_json(back, to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.lambda0 == 0.25);
  CHECK(back.components == 16);
  CHECK(!back.use_wgan);

  TrainConfig partial;
  apply_json(partial, R"({"lambda1": 0.2})");
  CHECK(partial.lambda1 == 0.2);
  CHECK(partial.lambda0 == 0.0);

  TrainConfig t;
  CHECK_THROWS_AS(apply_json(t, "{"), ConfigError);
  CHECK_THROWS_AS(apply_json(t, "[1]"), ConfigError);
  CHECK_THROWS_AS(apply_json(t, R"({"bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(apply_json(t, R"({"iterations": -3})"), ConfigError);
  CHECK_THROWS_AS(apply_json(t, R"({"use_wgan": 1})"), ConfigError);
  CHECK_THROWS_AS(apply_json(t, R"({"lambda0": "x"})"), ConfigError);

  TrainConfig bad;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.components = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.lambda1 = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  const SmallScene& s = small_scene();
  TrainConfig c = small_config(3);
  UnmixModel m = UnmixModel::init(c.model_config(40), EndmemberMatrix(s.scene.truth.endmembers), 3);
  const std::string bytes = serialize_checkpoint(m, 42);
  Checkpoint back = parse_checkpoint(bytes);
  CHECK(back.iteration == 42);
  CHECK(serialize_checkpoint(back.model, 42) == bytes);
  CHECK(back.model.infer_abundances(s.pixels.raw) == m.infer_abundances(s.pixels.raw));

  CHECK_THROWS_AS(parse_checkpoint("NOTACKPT"), FormatError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() / 2)), FormatError);
  std::string version = bytes;
  version[8] = static_cast<char>(99);
  CHECK_THROWS_AS(parse_checkpoint(version), FormatError);

  c.use_encoder = false;
  UnmixModel plain = UnmixModel::init(c.model_config(40), EndmemberMatrix(s.scene.truth.endmembers), 3);
  Checkpoint pb = parse_checkpoint(serialize_checkpoint(plain, 0));
  CHECK(!pb.model.encoder);
  CHECK(pb.model.infer_abundances(s.pixels.raw) == plain.infer_abundances(s.pixels.raw));
}

TEST_CASE("zero iterations leaves the initial model") {
  const SmallScene& s = small_scene();
  TrainConfig c = small_config(0);
  TrainResult r = train(s.pixels, EndmemberMatrix(s.scene.truth.endmembers), c);
  CHECK(r.history.empty());
  CHECK(!r.diverged);
  UnmixModel init = UnmixModel::init(c.model_config(40), EndmemberMatrix(s.scene.truth.endmembers),
                                     derive_seed(c.seed, 10));
  CHECK(serialize_checkpoint(r.model, 0) == serialize_checkpoint(init, 0));
}

TEST_CASE("short runs are deterministic and write the run directory") {
  const SmallScene& s = small_scene();
  const fs::path a = fs::temp_directory_path() / "specmix_train_a";
  const fs::path b = fs::temp_directory_path() / "specmix_train_b";
  fs::remove_all(a);
  fs::remove_all(b);
  TrainConfig c = small_config(10);
  TrainResult ra = train(s.pixels, EndmemberMatrix(s.scene.truth.endmembers), c, RunOptions{a, {}});
  TrainResult rb = train(s.pixels, EndmemberMatrix(s.scene.truth.endmembers), c, RunOptions{b, {}});
  CHECK(ra.history.size() == 10);
  CHECK(slurp(a / "history.csv") == slurp(b / "history.csv"));
  CHECK(slurp(a / "checkpoint_10.bin") == slurp(b / "checkpoint_10.bin"));
  CHECK(fs::exists(a / "checkpoint_5.bin"));
  CHECK(fs::exists(a / "config.json"));
  std::ifstream h(a / "history.csv");
  std::string line;
  std::getline(h, line);
  CHECK(line == kHistoryHeader);
  std::size_t rows = 0;
  while (std::getline(h, line)) ++rows;
  CHECK(rows == 10);
  Checkpoint last = load_checkpoint(a / "checkpoint_10.bin");
  CHECK(last.iteration == 10);
  CHECK(serialize_checkpoint(last.model, 10) == serialize_checkpoint(ra.model, 10));

  TrainConfig other = c;
  other.seed = 6;
  TrainResult rc = train(s.pixels, EndmemberMatrix(s.scene.truth.endmembers), other);
  CHECK(rc.history.back().reconstruction != ra.history.back().reconstruction);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("parameter groups only move under their own losses") {
  const SmallScene& s = small_scene();
  TrainConfig c = small_config(3);
  c.use_wgan = false;
  TrainResult r = train(s.pixels, EndmemberMatrix(s.scene.truth.endmembers), c);
  UnmixModel init = UnmixModel::init(c.model_config(40), EndmemberMatrix(s.scene.truth.endmembers),
                                     derive_seed(c.seed, 10));
  CHECK(same_group(r.model.critic.group, init.critic.group));
  CHECK(!same_group(r.model.mixture.group, init.mixture.group));
  CHECK(!same_group(r.model.encoder->group, init.encoder->group));
  CHECK(!same_group(r.model.decoder.residual, init.decoder.residual));

  TrainConfig full = small_config(3);
  TrainResult rf = train(s.pixels, EndmemberMatrix(s.scene.truth.endmembers), full);
  CHECK(!same_group(rf.model.critic.group, init.critic.group));
  CHECK(!same_group(rf.model.decoder.uncertainty, init.decoder.uncertainty));
}

TEST_CASE("first step sizes follow the group scales") {
  const SmallScene& s = small_scene();
  TrainConfig c = small_config(1);
  TrainResult r = train(s.pixels, EndmemberMatrix(s.scene.truth.endmembers), c);
  UnmixModel init = UnmixModel::init(c.model_config(40), EndmemberMatrix(s.scene.truth.endmembers),
                                     derive_seed(c.seed, 10));
  auto largest_step = [](const ParameterGroup& a, const ParameterGroup& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, max_abs_diff(a[i], b[i]));
    return m;
  };
  // a first Adam step moves every parameter with a nonzero gradient by about lr
  const double lr = c.learning_rate;
  CHECK(largest_step(r.model.encoder->group, init.encoder->group) == doctest::Approx(lr).epsilon(1e-3));
  CHECK(largest_step(r.model.mixture.group, init.mixture.group) == doctest::Approx(0.1 * lr).epsilon(1e-3));
  CHECK(largest_step(r.model.decoder.residual, init.decoder.residual) == doctest::Approx(1e-3 * lr).epsilon(1e-3));
  CHECK(largest_step(r.model.decoder.uncertainty, init.decoder.uncertainty) ==
        doctest::Approx(1e-3 * lr).epsilon(1e-3));
  CHECK(largest_step(r.model.critic.group, init.critic.group) == doctest::Approx(lr).epsilon(1e-3));
}

TEST_CASE("training rejects unusable inputs") {
  const SmallScene& s = small_scene();
  TrainConfig c = small_config(1);
  c.batch_size = 1000;
  CHECK_THROWS_AS(train(s.pixels, EndmemberMatrix(s.scene.truth.endmembers), c), ConfigError);
  c = small_config(1);
  c.materials = 3;
  CHECK_THROWS_AS(train(s.pixels, EndmemberMatrix(s.scene.truth.endmembers), c), ConfigError);
}

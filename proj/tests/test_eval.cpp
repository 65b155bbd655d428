#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "specmix/errors.hpp"
#include "specmix/eval.hpp"
#include "support.hpp"

using namespace specmix;
using namespace specmix::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("specmix_eval_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("rmse examples and properties") {
  CHECK(rmse(Tensor(Shape{1, 2}, {1, 0}), Tensor(Shape{1, 2}, {0, 1})) == doctest::Approx(std::sqrt(2.0)));
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = uniform(Shape{3, 4, 3}, rng), b = uniform(Shape{3, 4, 3}, rng);
    CHECK(rmse(a, a) == 0.0);
    CHECK(rmse(a, b) == doctest::Approx(rmse(b, a)).epsilon(1e-14));
    Tensor a2 = a, b2 = b;
    for (double& v : a2.data()) v *= 2.5;
    for (double& v : b2.data()) v *= 2.5;
    CHECK(rmse(a2, b2) == doctest::Approx(2.5 * rmse(a, b)).epsilon(1e-12));
    CHECK(rmse(a, b) >= 0.0);
  }
  CHECK_THROWS_AS(rmse(Tensor(Shape{2, 3}), Tensor(Shape{3, 2})), ShapeError);
  const std::vector<double> pm = per_material_rmse(Tensor(Shape{2, 2}, {1, 0, 1, 0}), Tensor(Shape{2, 2}, {0, 0, 1, 0}));
  CHECK(pm[0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(pm[1] == 0.0);
}

TEST_CASE("repeated evaluation statistics") {
  auto stub = [](std::uint64_t) {
    RunOutcome o;
    o.rmse = 0.04;
    o.per_material = {0.01, 0.02};
    return o;
  };
  EvalReport one = repeated_eval(stub, 1, 5);
  CHECK(one.std == 0.0);
  EvalReport twenty = repeated_eval(stub, 20, 5);
  CHECK(twenty.runs == 20);
  CHECK(twenty.std == 0.0);
  CHECK(twenty.mean == doctest::Approx(0.04));
  CHECK(twenty.seeds.size() == 20);
  std::set<std::uint64_t> distinct(twenty.seeds.begin(), twenty.seeds.end());
  CHECK(distinct.size() == 20);
  CHECK(repeated_eval(stub, 3, 5).seeds == repeated_eval(stub, 3, 5).seeds);
  CHECK(twenty.seeds[0] == run_seed(5, 0));

  std::size_t call = 0;
  auto flaky = [&](std::uint64_t) -> RunOutcome {
    ++call;
    if (call == 2) throw NumericError("loss became NaN");
    RunOutcome o;
    if (call == 4) {
      o.failed = true;
      o.message = "diverged";
      return o;
    }
    o.rmse = call == 1 ? 0.1 : 0.3;
    return o;
  };
  EvalReport r = repeated_eval(flaky, 5, 1);
  CHECK(r.failures == 2);
  CHECK(r.rmse.size() == 3);
  CHECK(r.mean == doctest::Approx((0.1 + 0.3 + 0.3) / 3));
  const double m = r.mean;
  CHECK(r.std == doctest::Approx(std::sqrt(((0.1 - m) * (0.1 - m) + 2 * (0.3 - m) * (0.3 - m)) / 3)));
  CHECK_THROWS_AS(repeated_eval(stub, 0, 1), ConfigError);

  const auto j = nlohmann::json::parse(report_json(r));
  CHECK(j["runs"] == 5);
  CHECK(j["failures"] == 2);
  CHECK(j["rmse"].size() == 3);
  CHECK(j["active_response_percent"].is_null());
  CHECK(j["failure_messages"].size() == 2);
}

TEST_CASE("simplex projection") {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(uniform_int(rng, 1, 8));
    for (double& x : v) x = uniform(Shape{1}, rng, -3, 3)[0];
    const std::vector<double> p = project_simplex(v);
    double s = 0;
    for (double x : p) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(std::abs(s - 1) < 1e-12);
    // projection is idempotent
    const std::vector<double> q = project_simplex(p);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(q[i] - p[i]) < 1e-12);
  }
}

TEST_CASE("fcls recovers pure pixels and exact mixtures") {
  Rng rng(3);
  const Tensor E = uniform(Shape{3, 12}, rng, 0.05, 1);
  Tensor X(Shape{3, 12});
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t d = 0; d < 12; ++d) X(k, d) = E(k, d);
  FclsResult r = fcls_baseline(X, E);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(r.abundances(k, j) - (k == j ? 1.0 : 0.0)) < 1e-4);

  const Tensor ortho(Shape{2, 3}, {1, 0, 0, 0, 1, 0});
  FclsResult half = fcls_baseline(Tensor(Shape{1, 3}, {0.5, 0.5, 0}), ortho);
  CHECK(std::abs(half.abundances(0, 0) - 0.5) < 1e-4);
  CHECK(std::abs(half.abundances(0, 1) - 0.5) < 1e-4);
  CHECK(!half.rank_deficient);
}

TEST_CASE("fcls output is on the simplex with a non-increasing objective") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t K = uniform_int(rng, 2, 5), D = uniform_int(rng, K, 20);
    const Tensor E = uniform(Shape{K, D}, rng, 0, 1);
    const Tensor X = uniform(Shape{30, D}, rng, -0.2, 1.5);
    FclsResult r = fcls_baseline(X, E, 200);
    CHECK(r.objective.size() == 201);
    for (std::size_t i = 1; i < r.objective.size(); ++i)
      CHECK(r.objective[i] <= r.objective[i - 1] * (1 + 1e-12) + 1e-15);
    for (std::size_t p = 0; p < 30; ++p) {
      double s = 0;
      for (std::size_t k = 0; k < K; ++k) {
        CHECK(r.abundances(p, k) >= -1e-6);
        s += r.abundances(p, k);
      }
      CHECK(std::abs(s - 1) < 1e-6);
    }
  }
}

TEST_CASE("fcls flags a rank-deficient endmember matrix") {
  const Tensor E(Shape{3, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 1, 1, 0, 0});
  FclsResult r = fcls_baseline(Tensor(Shape{1, 4}, {0.5, 0.5, 0, 0}), E);
  CHECK(r.rank_deficient);
  double s = 0;
  for (std::size_t k = 0; k < 3; ++k) s += r.abundances(0, k);
  CHECK(std::abs(s - 1) < 1e-6);
}

TEST_CASE("abundance map export") {
  const fs::path dir = scratch("export");
  Tensor half(Shape{3, 4, 2}, 0.5);
  ExportSummary s = export_abundance_maps(half, dir / "maps");
  CHECK(s.clamped == 0);
  CHECK(s.files.size() == 3);
  const Tensor pgm = read_pgm(dir / "maps_k0.pgm");
  CHECK(pgm.shape() == Shape{3, 4});
  for (double v : pgm.data()) CHECK((v * 255.0 == 127.0 || v * 255.0 == 128.0));

  std::ifstream csv(dir / "maps.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "row,col,k,value");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 3 * 4 * 2);

  Rng rng(5);
  Tensor y = uniform(Shape{5, 6, 3}, rng, 0, 1);
  export_abundance_maps(y, dir / "rand");
  for (std::size_t k = 0; k < 3; ++k) {
    const Tensor back = read_pgm(dir / ("rand_k" + std::to_string(k) + ".pgm"));
    for (std::size_t p = 0; p < 30; ++p) CHECK(std::abs(back[p] - y[p * 3 + k]) <= 1.0 / 255.0);
  }
  const std::string first = slurp(dir / "rand.csv");
  export_abundance_maps(y, dir / "rand");
  CHECK(slurp(dir / "rand.csv") == first);

  y[0] = 1.5;
  y[1] = -0.2;
  CHECK(export_abundance_maps(y, dir / "clamp").clamped == 2);
  CHECK(read_pgm(dir / "clamp_k0.pgm")[0] == 1.0);
  fs::remove_all(dir);
}

TEST_CASE("pca projection") {
  Rng rng(6);
  Tensor line(Shape{50, 4});
  for (std::size_t b = 0; b < 50; ++b) {
    const double t = uniform(Shape{1}, rng, -2, 2)[0];
    for (std::size_t f = 0; f < 4; ++f) line(b, f) = t * (1.0 + static_cast<double>(f)) + 3.0;
  }
  PcaResult r = pca_project(line);
  CHECK(r.coordinates.shape() == Shape{50, 2});
  for (std::size_t b = 0; b < 50; ++b) CHECK(std::abs(r.coordinates(b, 1)) < 1e-6);

  std::normal_distribution<double> n;
  Tensor iso(Shape{4000, 2});
  for (double& v : iso.data()) v = n(rng);
  PcaResult ri = pca_project(iso);
  const double share = ri.variance[0] / (ri.variance[0] + ri.variance[1]);
  CHECK(share > 0.4);
  CHECK(share < 0.6);

  PcaResult z = pca_project(Tensor(Shape{5, 3}, 2.0));
  CHECK(z.degenerate);
  for (double v : z.coordinates.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(pca_project(Tensor(Shape{2, 3})), ShapeError);
}

TEST_CASE("pca preserves distances at least as well as random rank-2 maps") {
  Rng rng(7);
  Tensor x = uniform(Shape{60, 6}, rng);
  for (std::size_t b = 0; b < 60; ++b) x(b, 0) *= 4.0, x(b, 3) *= 2.0;
  PcaResult r = pca_project(x);
  // residual energy of the projection vs random orthonormal rank-2 projections
  auto centered = x;
  for (std::size_t f = 0; f < 6; ++f) {
    double m = 0;
    for (std::size_t b = 0; b < 60; ++b) m += x(b, f);
    for (std::size_t b = 0; b < 60; ++b) centered(b, f) -= m / 60;
  }
  double total = 0, kept = 0;
  for (double v : centered.data()) total += v * v;
  for (double v : r.coordinates.data()) kept += v * v;
  for (int trial = 0; trial < 200; ++trial) {
    Tensor q = uniform(Shape{6, 2}, rng);
    // Gram-Schmidt
    double n0 = 0;
    for (std::size_t f = 0; f < 6; ++f) n0 += q(f, 0) * q(f, 0);
    for (std::size_t f = 0; f < 6; ++f) q(f, 0) /= std::sqrt(n0);
    double dot = 0;
    for (std::size_t f = 0; f < 6; ++f) dot += q(f, 0) * q(f, 1);
    for (std::size_t f = 0; f < 6; ++f) q(f, 1) -= dot * q(f, 0);
    double n1 = 0;
    for (std::size_t f = 0; f < 6; ++f) n1 += q(f, 1) * q(f, 1);
    for (std::size_t f = 0; f < 6; ++f) q(f, 1) /= std::sqrt(n1);
    double other = 0;
    for (std::size_t b = 0; b < 60; ++b)
      for (std::size_t c = 0; c < 2; ++c) {
        double v = 0;
        for (std::size_t f = 0; f < 6; ++f) v += centered(b, f) * q(f, c);
        other += v * v;
      }
    CHECK(total - kept <= total - other + 1e-9);
  }
  const fs::path dir = scratch("pca");
  write_pca_csv(r, dir / "pca.csv");
  std::ifstream in(dir / "pca.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "pc1,pc2");
  fs::remove_all(dir);
}

#include "specmix/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>
#include <json.hpp>

#include "specmix/errors.hpp"
#include "specmix/params.hpp"

namespace specmix {

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape() || a.rank() < 1 || a.size() == 0)
    throw ShapeError(std::string(what) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ");
}

}  // namespace

double rmse(const Tensor& truth, const Tensor& estimate) {
  check_same(truth, estimate, "rmse");
  const std::size_t K = truth.shape().back();
  const double pixels = static_cast<double>(truth.size() / K);
  double acc = 0.0;
  auto a = truth.data();
  auto b = estimate.data();
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / pixels);
}

std::vector<double> per_material_rmse(const Tensor& truth, const Tensor& estimate) {
  check_same(truth, estimate, "per_material_rmse");
  const std::size_t K = truth.shape().back();
  const std::size_t P = truth.size() / K;
  std::vector<double> acc(K, 0.0);
  auto a = truth.data();
  auto b = estimate.data();
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < K; ++k) {
      const double d = a[p * K + k] - b[p * K + k];
      acc[k] += d * d;
    }
  for (double& v : acc) v = std::sqrt(v / static_cast<double>(P));
  return acc;
}

std::uint64_t run_seed(std::uint64_t master_seed, std::size_t index) { return derive_seed(master_seed, 1000 + index); }

EvalReport repeated_eval(const std::function<RunOutcome(std::uint64_t)>& train_fn, std::size_t runs,
                         std::uint64_t master_seed) {
  if (runs == 0) throw ConfigError("repeated evaluation needs at least one run");
  const auto start = std::chrono::steady_clock::now();
  EvalReport report;
  report.runs = runs;
  std::vector<std::vector<double>> per_material;
  double active_sum = 0.0;
  std::size_t active_n = 0;
  for (std::size_t i = 0; i < runs; ++i) {
    const std::uint64_t seed = run_seed(master_seed, i);
    report.seeds.push_back(seed);
    RunOutcome out;
    try {
      out = train_fn(seed);
    } catch (const Error& e) {
      out.failed = true;
      out.message = e.what();
    }
    if (out.failed || !std::isfinite(out.rmse)) {
      ++report.failures;
      report.failure_messages.push_back(out.message.empty() ? "non-finite rmse" : out.message);
      continue;
    }
    report.rmse.push_back(out.rmse);
    if (!out.per_material.empty()) per_material.push_back(out.per_material);
    if (out.active_response >= 0.0) {
      active_sum += out.active_response;
      ++active_n;
    }
  }
  if (!report.rmse.empty()) {
    // Welford updates: exact for constant input
    double mean = 0.0, m2 = 0.0, n = 0.0;
    for (double r : report.rmse) {
      n += 1.0;
      const double delta = r - mean;
      mean += delta / n;
      m2 += delta * (r - mean);
    }
    report.mean = mean;
    report.std = std::sqrt(m2 / n);
  }
  if (!per_material.empty()) {
    report.per_material_mean.assign(per_material.front().size(), 0.0);
    for (const auto& v : per_material)
      for (std::size_t k = 0; k < v.size() && k < report.per_material_mean.size(); ++k)
        report.per_material_mean[k] += v[k] / static_cast<double>(per_material.size());
  }
  if (active_n) report.active_response = active_sum / static_cast<double>(active_n);
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["runs"] = r.runs;
  j["failures"] = r.failures;
  j["seeds"] = r.seeds;
  j["rmse"] = r.rmse;
  j["rmse_mean"] = r.mean;
  j["rmse_std"] = r.std;
  j["per_material_rmse"] = r.per_material_mean;
  if (r.active_response >= 0.0)
    j["active_response_percent"] = r.active_response;
  else
    j["active_response_percent"] = nullptr;
  j["failure_messages"] = r.failure_messages;
  j["runtime_seconds"] = r.runtime_seconds;
  return j.dump(2) + "\n";
}

std::vector<double> project_simplex(std::vector<double> v) {
  if (v.empty()) return v;
  std::vector<double> s = v;
  std::sort(s.begin(), s.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cum += s[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (s[i] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::max(x - theta, 0.0);
  return v;
}

FclsResult fcls_baseline(const Tensor& pixels, const Tensor& endmembers, std::size_t iterations) {
  if (pixels.rank() != 2 || endmembers.rank() != 2 || pixels.dim(1) != endmembers.dim(1))
    throw ShapeError("fcls: pixels " + to_string(pixels.shape()) + " and endmembers " +
                     to_string(endmembers.shape()) + " disagree");
  const std::size_t P = pixels.dim(0), K = endmembers.dim(0), D = endmembers.dim(1);
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> E(endmembers.data().data(), K, D);
  Eigen::Map<const Mat> X(pixels.data().data(), P, D);

  FclsResult res;
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(E.transpose());
  res.rank_deficient = cod.rank() < static_cast<Eigen::Index>(K);
  const Mat gram = E * E.transpose();  // K x K
  const double lipschitz = Eigen::SelfAdjointEigenSolver<Mat>(gram).eigenvalues().maxCoeff();
  const double step = lipschitz > 0.0 ? 1.0 / lipschitz : 0.0;
  const Mat ex = X * E.transpose();  // P x K, rows E x_p

  Mat Y = cod.solve(X.transpose()).transpose();  // P x K least-squares start
  std::vector<double> row(K);
  auto project_rows = [&] {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t k = 0; k < K; ++k) row[k] = Y(p, k);
      row = project_simplex(std::move(row));
      for (std::size_t k = 0; k < K; ++k) Y(p, k) = row[k];
    }
  };
  auto objective = [&] { return (Y * E - X).squaredNorm(); };
  project_rows();
  res.objective.push_back(objective());
  for (std::size_t it = 0; it < iterations; ++it) {
    Y -= step * (Y * gram - ex);
    project_rows();
    res.objective.push_back(objective());
  }
  res.abundances = Tensor(Shape{P, K});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < K; ++k) res.abundances(p, k) = Y(p, k);
  return res;
}

ExportSummary export_abundance_maps(const Tensor& y, const std::filesystem::path& prefix) {
  if (y.rank() != 3) throw ShapeError("abundance maps must be [H, W, K], got " + to_string(y.shape()));
  const std::size_t H = y.dim(0), W = y.dim(1), K = y.dim(2);
  ExportSummary out;
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  for (std::size_t k = 0; k < K; ++k) {
    std::filesystem::path path = prefix;
    path += "_k" + std::to_string(k) + ".pgm";
    std::string bytes = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        double v = y(r, c, k);
        if (!(v >= 0.0 && v <= 1.0)) {
          ++out.clamped;
          v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
        }
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.files.push_back(path);
  }
  std::filesystem::path csv = prefix;
  csv += ".csv";
  std::ofstream f(csv, std::ios::trunc);
  f << "row,col,k,value\n";
  char buf[96];
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      for (std::size_t k = 0; k < K; ++k) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g\n", r, c, k, y(r, c, k));
        f << buf;
      }
  out.files.push_back(csv);
  return out;
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || !in) throw FormatError("not an 8-bit binary PGM: " + path.string());
  in.get();
  std::string data(w * h, '\0');
  in.read(data.data(), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) throw FormatError("short PGM payload: " + path.string());
  Tensor out(Shape{h, w});
  for (std::size_t i = 0; i < data.size(); ++i) out.data()[i] = static_cast<unsigned char>(data[i]) / 255.0;
  return out;
}

PcaResult pca_project(const Tensor& vectors, std::size_t iterations, double tolerance) {
  if (vectors.rank() != 2 || vectors.dim(0) <= 2)
    throw ShapeError("pca_project needs more than two vectors, got " + to_string(vectors.shape()));
  const std::size_t B = vectors.dim(0), F = vectors.dim(1);
  std::vector<double> mean(F, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) mean[f] += vectors(b, f) / static_cast<double>(B);
  Tensor centered(Shape{B, F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) centered(b, f) = vectors(b, f) - mean[f];
  std::vector<double> cov(F * F, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < F; ++i)
      for (std::size_t j = 0; j < F; ++j) cov[i * F + j] += centered(b, i) * centered(b, j) / static_cast<double>(B - 1);

  PcaResult res;
  res.coordinates = Tensor(Shape{B, 2});
  double trace = 0.0;
  for (std::size_t i = 0; i < F; ++i) trace += cov[i * F + i];
  if (!(trace > 0.0)) {
    res.degenerate = true;
    return res;
  }

  for (std::size_t comp = 0; comp < 2 && comp < F; ++comp) {
    std::vector<double> v(F), next(F);
    for (std::size_t i = 0; i < F; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i % 7) + 0.01 * static_cast<double>(i);
    double lambda = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      for (double& x : v) x /= norm;
      for (std::size_t i = 0; i < F; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < F; ++j) s += cov[i * F + j] * v[j];
        next[i] = s;
      }
      double new_lambda = 0.0;
      for (std::size_t i = 0; i < F; ++i) new_lambda += v[i] * next[i];
      double delta = 0.0;
      double nn = 0.0;
      for (double x : next) nn += x * x;
      nn = std::sqrt(nn);
      for (std::size_t i = 0; i < F; ++i) {
        const double u = nn > 0.0 ? next[i] / nn : 0.0;
        delta = std::max(delta, std::abs(u - v[i]));
      }
      lambda = new_lambda;
      if (nn == 0.0) {
        std::fill(v.begin(), v.end(), 0.0);
        break;
      }
      for (std::size_t i = 0; i < F; ++i) v[i] = next[i] / nn;
      if (delta < tolerance) break;
    }
    if (lambda < 1e-15 * trace) {
      lambda = 0.0;
      std::fill(v.begin(), v.end(), 0.0);
    }
    res.variance[comp] = lambda;
    for (std::size_t b = 0; b < B; ++b) {
      double s = 0.0;
      for (std::size_t f = 0; f < F; ++f) s += centered(b, f) * v[f];
      res.coordinates(b, comp) = s;
    }
    for (std::size_t i = 0; i < F; ++i)
      for (std::size_t j = 0; j < F; ++j) cov[i * F + j] -= lambda * v[i] * v[j];
  }
  return res;
}

void write_pca_csv(const PcaResult& pca, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << "pc1,pc2\n";
  char buf[96];
  for (std::size_t b = 0; b < pca.coordinates.dim(0); ++b) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", pca.coordinates(b, 0), pca.coordinates(b, 1));
    f << buf;
  }
}

}  // namespace specmix

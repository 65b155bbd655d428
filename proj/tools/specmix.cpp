#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "specmix/data_io.hpp"
#include "specmix/encoder.hpp"
#include "specmix/errors.hpp"
#include "specmix/eval.hpp"
#include "specmix/model.hpp"
#include "specmix/train.hpp"

namespace fs = std::filesystem;
using namespace specmix;

namespace {

enum Exit : int { exit_ok = 0, exit_failure = 1, exit_config = 2, exit_format = 3, exit_divergence = 4 };

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// Training hyperparameters: --config JSON first, then explicit flags.
struct ConfigFlags {
  std::string config_path;
  std::optional<double> lambda0, lambda1, lambda2, learning_rate;
  std::optional<std::size_t> iterations, batch_size, materials, components, latent, noise_dim, checkpoint_every;
  bool no_encoder = false, no_uncertainty = false, no_wgan = false;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "JSON file with training settings")->check(CLI::ExistingFile);
    app.add_option("--lambda0", lambda0, "mean absolute error weight");
    app.add_option("--lambda1", lambda1, "abundance sparsity weight");
    app.add_option("--lambda2", lambda2, "encoder l2 weight");
    app.add_option("--learning-rate", learning_rate, "Adam step size");
    app.add_option("--iterations", iterations, "training iterations");
    app.add_option("--batch-size", batch_size, "pixels per batch");
    app.add_option("--materials,-K", materials, "number of endmembers");
    app.add_option("--components,-N", components, "mixture components");
    app.add_option("--latent,-M", latent, "latent feature size");
    app.add_option("--noise-dim,-L", noise_dim, "noise dimension (0 = K)");
    app.add_option("--checkpoint-every", checkpoint_every, "checkpoint interval");
    app.add_flag("--no-encoder", no_encoder, "feed raw spectra to the mixture kernel");
    app.add_flag("--no-uncertainty", no_uncertainty, "disable residual and uncertainty terms");
    app.add_flag("--no-wgan", no_wgan, "disable the adversarial critic");
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!config_path.empty()) apply_json(c, read_text(config_path));
    if (lambda0) c.lambda0 = *lambda0;
    if (lambda1) c.lambda1 = *lambda1;
    if (lambda2) c.lambda2 = *lambda2;
    if (learning_rate) c.learning_rate = *learning_rate;
    if (iterations) c.iterations = *iterations;
    if (batch_size) c.batch_size = *batch_size;
    if (materials) c.materials = *materials;
    if (components) c.components = *components;
    if (latent) c.latent = *latent;
    if (noise_dim) c.noise_dim = *noise_dim;
    if (checkpoint_every) c.checkpoint_every = *checkpoint_every;
    if (no_encoder) c.use_encoder = false;
    if (no_uncertainty) c.use_uncertainty = false;
    if (no_wgan) c.use_wgan = false;
    return c;
  }
};

// A cube plus endmembers, both reduced by the same band removal.
struct SceneInput {
  std::string cube_path, endmember_path, bands = "none";

  void attach(CLI::App& app, bool need_endmembers = true) {
    app.add_option("--cube", cube_path, "HSC cube")->required()->check(CLI::ExistingFile);
    auto* e = app.add_option("--endmembers", endmember_path, "endmember CSV (K rows x D)");
    if (need_endmembers) e->required();
    e->check(CLI::ExistingFile);
    app.add_option("--bands", bands, "band removal: urban, jasper, none, or a list like 1-4,76");
  }

  SpectralCube cube() const {
    SpectralCube c = load_cube(cube_path);
    const BandRemoval removal = parse_band_removal(bands);
    return removal.empty() ? c : remove_bands(c, removal);
  }

  // Endmembers may be given at the original or the reduced band count.
  EndmemberMatrix endmembers(std::size_t original_bands, std::size_t kept_bands) const {
    EndmemberMatrix e = load_endmembers(endmember_path);
    if (e.bands() == kept_bands) return e;
    const BandRemoval removal = parse_band_removal(bands);
    if (e.bands() == original_bands && !removal.empty()) return EndmemberMatrix(remove_bands(e.spectra(), removal));
    throw ConfigError("endmembers have " + std::to_string(e.bands()) + " bands, cube has " +
                      std::to_string(kept_bands) + " after band removal");
  }
};

std::size_t cube_bands(const std::string& path) {
  return load_cube(path).bands;
}

// [P, K] estimates at PixelSet rows -> [H, W, K] map; skipped pixels stay 0.
Tensor scatter_map(const Tensor& rows, const PixelSet& px, std::size_t height, std::size_t width) {
  const std::size_t K = rows.dim(1);
  Tensor out(Shape{height, width, K});
  auto src = rows.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < px.size(); ++p)
    for (std::size_t k = 0; k < K; ++k) dst[px.source[p] * K + k] = src[p * K + k];
  return out;
}

// Truth rows matching the PixelSet (skipped pixels dropped).
Tensor gather_truth(const Tensor& truth_map, const PixelSet& px) {
  const std::size_t K = truth_map.dim(truth_map.rank() - 1);
  Tensor out(Shape{px.size(), K});
  auto src = truth_map.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < px.size(); ++p)
    for (std::size_t k = 0; k < K; ++k) dst[p * K + k] = src[px.source[p] * K + k];
  return out;
}

Tensor load_truth(const std::string& path, const SpectralCube& cube, std::size_t materials) {
  SpectralCube t = load_cube(path);
  if (t.height != cube.height || t.width != cube.width)
    throw FormatError("truth map is " + std::to_string(t.height) + "x" + std::to_string(t.width) + ", cube is " +
                      std::to_string(cube.height) + "x" + std::to_string(cube.width));
  if (t.bands != materials)
    throw ConfigError("truth map has " + std::to_string(t.bands) + " materials, config has " +
                      std::to_string(materials));
  return t.data;
}

// ---- synth-gen

int run_synth_gen(std::uint64_t seed, const SceneParams& params, const std::string& library, const fs::path& out) {
  SceneParams p = params;
  if (!library.empty()) p.library = load_endmembers(library).spectra();
  SyntheticScene scene = synthesize_scene(seed, p);
  fs::create_directories(out);
  save_cube(scene.cube, out / "cube.hsc");
  save_endmembers(scene.truth.endmembers, out / "endmembers.csv");
  save_cube(SpectralCube::from_tensor(scene.truth.abundances), out / "abundances.hsc");
  std::printf("wrote %s: %zux%zu pixels, %zu bands, %zu materials\n", out.string().c_str(), scene.cube.height,
              scene.cube.width, scene.cube.bands, scene.truth.endmembers.dim(0));
  return exit_ok;
}

// ---- train

int run_train(const SceneInput& in, const TrainConfig& config, const fs::path& run_dir, bool quiet) {
  config.validate();
  const SpectralCube cube = in.cube();
  const EndmemberMatrix em = in.endmembers(cube_bands(in.cube_path), cube.bands);
  const PixelSet px = preprocess(cube);
  if (px.skipped) std::fprintf(stderr, "warning: skipped %zu all-zero pixels\n", px.skipped);
  RunOptions opts;
  opts.run_dir = run_dir;
  const std::size_t every = std::max<std::size_t>(1, config.iterations / 20);
  if (!quiet)
    opts.on_iteration = [&](const HistoryRow& r) {
      if (r.iteration % every == 0 || r.iteration == config.iterations)
        std::printf("iter %zu  L_re %.6g  L_adv %.6g  penalty %.6g\n", r.iteration, r.reconstruction, r.adversarial,
                    r.penalty);
    };
  TrainResult result = train(px, em, config, opts);
  if (result.diverged) {
    std::fprintf(stderr, "training diverged: %s (last checkpoint at iteration %zu)\n", result.message.c_str(),
                 result.checkpoint_iteration);
    return exit_divergence;
  }
  const Tensor map = scatter_map(result.model.infer_abundances(px.raw), px, cube.height, cube.width);
  save_cube(SpectralCube::from_tensor(map), run_dir / "abundances.hsc");
  std::printf("finished %zu iterations; run directory %s\n", config.iterations, run_dir.string().c_str());
  return exit_ok;
}

// ---- evaluate

int run_evaluate(const SceneInput& in, const TrainConfig& base, const std::string& truth_path,
                 const std::string& checkpoint, std::size_t runs, std::uint64_t master, const fs::path& report_path) {
  const SpectralCube cube = in.cube();
  const PixelSet px = preprocess(cube);
  EvalReport report;
  if (!checkpoint.empty()) {
    const Checkpoint cp = load_checkpoint(checkpoint);
    if (cp.model.config.bands != cube.bands)
      throw ConfigError("checkpoint expects " + std::to_string(cp.model.config.bands) + " bands, cube has " +
                        std::to_string(cube.bands));
    const Tensor truth = gather_truth(load_truth(truth_path, cube, cp.model.config.materials), px);
    const auto t0 = std::chrono::steady_clock::now();
    report = repeated_eval(
        [&](std::uint64_t) {
          RunOutcome o;
          const Tensor est = cp.model.infer_abundances(px.raw);
          o.rmse = rmse(truth, est);
          o.per_material = per_material_rmse(truth, est);
          if (cp.model.encoder) o.active_response = active_response_fraction(px.normalized, *cp.model.encoder);
          return o;
        },
        1, master);
    report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } else {
    base.validate();
    const EndmemberMatrix em = in.endmembers(cube_bands(in.cube_path), cube.bands);
    const Tensor truth = gather_truth(load_truth(truth_path, cube, base.materials), px);
    report = repeated_eval(
        [&](std::uint64_t seed) {
          TrainConfig c = base;
          c.seed = seed;
          TrainResult r = train(px, em, c);
          RunOutcome o;
          if (r.diverged) {
            o.failed = true;
            o.message = r.message;
            return o;
          }
          const Tensor est = r.model.infer_abundances(px.raw);
          o.rmse = rmse(truth, est);
          o.per_material = per_material_rmse(truth, est);
          if (r.model.encoder) o.active_response = active_response_fraction(px.normalized, *r.model.encoder);
          std::printf("run seed %llu: rmse %.6g\n", static_cast<unsigned long long>(seed), o.rmse);
          std::fflush(stdout);
          return o;
        },
        runs, master);
  }
  const std::string text = report_json(report);
  if (!report_path.empty()) {
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    write_text(report_path, text);
  }
  std::printf("rmse %.6g +- %.6g over %zu runs (%zu failed)\n", report.mean, report.std, report.rmse.size(),
              report.failures);
  if (report.rmse.empty()) return exit_divergence;
  return exit_ok;
}

// ---- baseline

int run_baseline(const SceneInput& in, const std::string& truth_path, std::size_t iterations, const fs::path& out) {
  const SpectralCube cube = in.cube();
  const EndmemberMatrix em = in.endmembers(cube_bands(in.cube_path), cube.bands);
  const PixelSet px = preprocess(cube);
  FclsResult r = fcls_baseline(px.raw, em.spectra(), iterations);
  if (r.rank_deficient) std::fprintf(stderr, "warning: endmember matrix is rank deficient\n");
  if (!truth_path.empty()) {
    const Tensor truth = gather_truth(load_truth(truth_path, cube, em.materials()), px);
    std::printf("fcls rmse %.6g\n", rmse(truth, r.abundances));
  }
  if (!out.empty()) {
    const Tensor map = scatter_map(r.abundances, px, cube.height, cube.width);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    ExportSummary s = export_abundance_maps(map, out);
    if (s.clamped) std::fprintf(stderr, "warning: clamped %zu values\n", s.clamped);
    std::printf("wrote %zu files\n", s.files.size());
  }
  return exit_ok;
}

// ---- export

int run_export(const std::string& checkpoint, const SceneInput& in, const fs::path& out, const fs::path& pca_path) {
  const Checkpoint cp = load_checkpoint(checkpoint);
  const SpectralCube cube = in.cube();
  if (cp.model.config.bands != cube.bands)
    throw ConfigError("checkpoint expects " + std::to_string(cp.model.config.bands) + " bands, cube has " +
                      std::to_string(cube.bands));
  const PixelSet px = preprocess(cube);
  const Tensor map = scatter_map(cp.model.infer_abundances(px.raw), px, cube.height, cube.width);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  ExportSummary s = export_abundance_maps(map, out);
  if (s.clamped) std::fprintf(stderr, "warning: clamped %zu values\n", s.clamped);
  std::printf("wrote %zu files\n", s.files.size());
  if (!pca_path.empty()) {
    PcaResult pca = pca_project(cp.model.latent_features(px.raw));
    if (pca.degenerate) std::fprintf(stderr, "warning: latent features have zero variance\n");
    if (pca_path.has_parent_path()) fs::create_directories(pca_path.parent_path());
    write_pca_csv(pca, pca_path);
    std::printf("wrote %s\n", pca_path.string().c_str());
  }
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"specmix: hyperspectral unmixing with a spectral convolution encoder and mixture kernel"};
  app.require_subcommand(1);

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "generate a synthetic scene");
  std::uint64_t synth_seed = 7;
  SceneParams scene;
  std::string synth_library, synth_config;
  fs::path synth_out = "synthetic";
  synth->add_option("--seed", synth_seed, "scene seed");
  synth->add_option("--config", synth_config, "JSON with scene settings")->check(CLI::ExistingFile);
  synth->add_option("--height", scene.height);
  synth->add_option("--width", scene.width);
  synth->add_option("--materials,-K", scene.materials);
  synth->add_option("--band-count", scene.bands, "number of spectral bands");
  synth->add_option("--blobs", scene.blobs_per_material, "blobs per non-background material");
  synth->add_option("--blob-sigma", scene.blob_sigma, "blob width in pixels");
  synth->add_option("--blob-peak", scene.blob_peak);
  synth->add_option("--snr", scene.noise_snr_db, "noise level in dB (inf disables noise)");
  synth->add_option("--library", synth_library, "endmember CSV replacing the procedural spectra")
      ->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output directory");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model and write a run directory");
  SceneInput train_in;
  ConfigFlags train_flags;
  std::uint64_t train_seed = 0;
  fs::path run_dir = "run";
  bool quiet = false;
  train_in.attach(*train_cmd);
  train_flags.attach(*train_cmd);
  train_cmd->add_option("--seed", train_seed, "training seed")->required();
  train_cmd->add_option("--run-dir", run_dir, "output directory");
  train_cmd->add_flag("--quiet", quiet);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "repeated training runs scored against ground truth");
  SceneInput eval_in;
  ConfigFlags eval_flags;
  std::string eval_truth, eval_checkpoint;
  std::size_t eval_runs = 20;
  std::uint64_t eval_seed = 0;
  fs::path report_path = "report.json";
  eval_cmd->add_option("--cube", eval_in.cube_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--endmembers", eval_in.endmember_path)->check(CLI::ExistingFile);
  eval_cmd->add_option("--bands", eval_in.bands);
  eval_flags.attach(*eval_cmd);
  eval_cmd->add_option("--truth", eval_truth, "ground-truth abundance map (HSC, K bands)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "score a trained checkpoint instead of training")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--runs", eval_runs, "number of training runs")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_seed, "master seed");
  eval_cmd->add_option("--report", report_path, "report.json path");

  // baseline
  auto* base_cmd = app.add_subcommand("baseline", "fully constrained least squares unmixing");
  SceneInput base_in;
  std::string base_truth, base_config;
  std::size_t base_iterations = 500;
  fs::path base_out;
  base_in.attach(*base_cmd);
  base_cmd->add_option("--config", base_config, "JSON with a 'fcls_iterations' key")->check(CLI::ExistingFile);
  base_cmd->add_option("--truth", base_truth, "ground-truth abundance map")->check(CLI::ExistingFile);
  base_cmd->add_option("--iterations", base_iterations, "projected gradient iterations");
  base_cmd->add_option("--out", base_out, "export prefix for abundance maps");

  // export
  auto* export_cmd = app.add_subcommand("export", "write abundance maps and latent PCA from a checkpoint");
  SceneInput export_in;
  std::string export_checkpoint, export_config;
  fs::path export_out = "abundance", export_pca;
  export_cmd->add_option("--checkpoint", export_checkpoint)->required()->check(CLI::ExistingFile);
  export_in.attach(*export_cmd, false);
  export_cmd->add_option("--config", export_config, "JSON with 'out' and 'pca' keys")->check(CLI::ExistingFile);
  export_cmd->add_option("--out", export_out, "output prefix");
  export_cmd->add_option("--pca", export_pca, "CSV of the 2-D PCA projection of latent features");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    if (*synth) {
      if (!synth_config.empty()) {
        const auto j = nlohmann::json::parse(read_text(synth_config));
        auto get = [&](const char* key, auto& field) {
          if (j.contains(key) && !synth->count(std::string("--") + key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("seed", synth_seed);
        get("height", scene.height);
        get("width", scene.width);
        get("materials", scene.materials);
        get("band_count", scene.bands);
        get("blobs", scene.blobs_per_material);
        get("blob_sigma", scene.blob_sigma);
        get("blob_peak", scene.blob_peak);
        get("snr", scene.noise_snr_db);
      }
      return run_synth_gen(synth_seed, scene, synth_library, synth_out);
    }
    if (*train_cmd) {
      TrainConfig c = train_flags.resolve();
      c.seed = train_seed;
      return run_train(train_in, c, run_dir, quiet);
    }
    if (*eval_cmd) {
      if (eval_checkpoint.empty() && eval_in.endmember_path.empty())
        throw ConfigError("evaluate needs --endmembers unless --checkpoint is given");
      return run_evaluate(eval_in, eval_flags.resolve(), eval_truth, eval_checkpoint, eval_runs, eval_seed,
                          report_path);
    }
    if (*base_cmd) {
      if (!base_config.empty()) {
        const auto j = nlohmann::json::parse(read_text(base_config));
        if (j.contains("fcls_iterations") && !base_cmd->count("--iterations"))
          base_iterations = j.at("fcls_iterations").get<std::size_t>();
      }
      return run_baseline(base_in, base_truth, base_iterations, base_out);
    }
    if (*export_cmd) {
      if (!export_config.empty()) {
        const auto j = nlohmann::json::parse(read_text(export_config));
        if (j.contains("out") && !export_cmd->count("--out")) export_out = j.at("out").get<std::string>();
        if (j.contains("pca") && !export_cmd->count("--pca")) export_pca = j.at("pca").get<std::string>();
      }
      return run_export(export_checkpoint, export_in, export_out, export_pca);
    }
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return exit_config;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return exit_config;
  } catch (const ParameterError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return exit_config;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return exit_format;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return exit_divergence;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return exit_divergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_failure;
  }
  return exit_ok;
}

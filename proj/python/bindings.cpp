#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "specmix/data_io.hpp"
#include "specmix/errors.hpp"
#include "specmix/eval.hpp"
#include "specmix/losses.hpp"
#include "specmix/model.hpp"
#include "specmix/train.hpp"

namespace py = pybind11;
using namespace specmix;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor require_rank(const Array& a, std::size_t rank, const char* name) {
  if (static_cast<std::size_t>(a.ndim()) != rank)
    throw ShapeError(std::string(name) + " must have " + std::to_string(rank) + " dimensions");
  return to_tensor(a);
}

struct PyTrainResult {
  UnmixModel model;
  Array history;
  bool diverged;
  std::string message;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Spectral unmixing with a learned mixture kernel and adversarial refinement";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lambda0", &TrainConfig::lambda0)
      .def_readwrite("lambda1", &TrainConfig::lambda1)
      .def_readwrite("lambda2", &TrainConfig::lambda2)
      .def_readwrite("lambda_pq", &TrainConfig::lambda_pq)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("beta1", &TrainConfig::beta1)
      .def_readwrite("beta2", &TrainConfig::beta2)
      .def_readwrite("adam_eps", &TrainConfig::adam_eps)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("iterations", &TrainConfig::iterations)
      .def_readwrite("materials", &TrainConfig::materials)
      .def_readwrite("components", &TrainConfig::components)
      .def_readwrite("latent", &TrainConfig::latent)
      .def_readwrite("noise_dim", &TrainConfig::noise_dim)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("use_encoder", &TrainConfig::use_encoder)
      .def_readwrite("use_uncertainty", &TrainConfig::use_uncertainty)
      .def_readwrite("use_wgan", &TrainConfig::use_wgan)
      .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
      .def("validate", &TrainConfig::validate)
      .def("to_json", [](const TrainConfig& c) { return to_json(c); })
      .def_static(
          "from_json",
          [](const std::string& text) {
            TrainConfig c;
            apply_json(c, text);
            return c;
          },
          py::arg("text"));

  py::class_<UnmixModel>(m, "Model")
      .def_property_readonly("bands", [](const UnmixModel& u) { return u.config.bands; })
      .def_property_readonly("materials", [](const UnmixModel& u) { return u.config.materials; })
      .def_property_readonly("has_encoder", [](const UnmixModel& u) { return u.encoder.has_value(); })
      .def(
          "abundances",
          [](const UnmixModel& u, const Array& pixels) {
            return to_array(u.infer_abundances(require_rank(pixels, 2, "pixels")));
          },
          py::arg("pixels"), "Abundances [P, K] for raw spectra [P, D].")
      .def(
          "latent",
          [](const UnmixModel& u, const Array& pixels) {
            return to_array(u.latent_features(require_rank(pixels, 2, "pixels")));
          },
          py::arg("pixels"))
      .def(
          "save", [](const UnmixModel& u, const std::filesystem::path& path,
                     std::uint64_t iteration) { save_checkpoint(u, iteration, path); },
          py::arg("path"), py::arg("iteration") = 0)
      .def_static(
          "load", [](const std::filesystem::path& path) { return load_checkpoint(path).model; }, py::arg("path"));

  py::class_<PyTrainResult>(m, "TrainResult")
      .def_readonly("model", &PyTrainResult::model)
      .def_readonly("history", &PyTrainResult::history, "[T, 4]: iteration, L_re, L_adv, penalty")
      .def_readonly("diverged", &PyTrainResult::diverged)
      .def_readonly("message", &PyTrainResult::message);

  m.def(
      "train",
      [](const Array& cube, const Array& endmembers, const TrainConfig& config,
         std::optional<std::filesystem::path> run_dir) {
        SpectralCube c = SpectralCube::from_tensor(require_rank(cube, 3, "cube"));
        EndmemberMatrix e(require_rank(endmembers, 2, "endmembers"));
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(preprocess(c), e, config, RunOptions{run_dir.value_or(std::filesystem::path{}), {}});
        }
        Tensor h(Shape{r.history.size(), 4});
        for (std::size_t i = 0; i < r.history.size(); ++i) {
          h(i, 0) = static_cast<double>(r.history[i].iteration);
          h(i, 1) = r.history[i].reconstruction;
          h(i, 2) = r.history[i].adversarial;
          h(i, 3) = r.history[i].penalty;
        }
        return PyTrainResult{std::move(r.model), to_array(h), r.diverged, r.message};
      },
      py::arg("cube"), py::arg("endmembers"), py::arg("config") = TrainConfig{}, py::arg("run_dir") = py::none(),
      "Train on an [H, W, D] cube with fixed [K, D] endmembers.");

  m.def(
      "synthesize_scene",
      [](std::uint64_t seed, std::size_t height, std::size_t width, std::size_t bands, std::size_t materials,
         double snr_db) {
        SceneParams p;
        p.height = height;
        p.width = width;
        p.bands = bands;
        p.materials = materials;
        p.noise_snr_db = snr_db;
        SyntheticScene s = synthesize_scene(seed, p);
        py::dict out;
        out["cube"] = to_array(s.cube.data);
        out["abundances"] = to_array(s.truth.abundances);
        out["endmembers"] = to_array(s.truth.endmembers);
        return out;
      },
      py::arg("seed"), py::arg("height") = 60, py::arg("width") = 60, py::arg("bands") = 200,
      py::arg("materials") = 4, py::arg("snr_db") = 30.0,
      "Synthetic scene as a dict with cube [H, W, D], abundances [H, W, K] and endmembers [K, D].");

  m.def(
      "load_cube", [](const std::filesystem::path& path) { return to_array(load_cube(path).data); },
      py::arg("path"));
  m.def(
      "save_cube",
      [](const Array& cube, const std::filesystem::path& path) {
        save_cube(SpectralCube::from_tensor(require_rank(cube, 3, "cube")), path);
      },
      py::arg("cube"), py::arg("path"));

  m.def(
      "fcls",
      [](const Array& pixels, const Array& endmembers, std::size_t iterations) {
        return to_array(
            fcls_baseline(require_rank(pixels, 2, "pixels"), require_rank(endmembers, 2, "endmembers"), iterations)
                .abundances);
      },
      py::arg("pixels"), py::arg("endmembers"), py::arg("iterations") = 500,
      "Fully constrained least squares abundances [P, K].");
  m.def(
      "rmse", [](const Array& truth, const Array& estimate) { return rmse(to_tensor(truth), to_tensor(estimate)); },
      py::arg("truth"), py::arg("estimate"));
  m.def("project_simplex", &project_simplex, py::arg("v"));
  m.def(
      "sad_similarity",
      [](const Array& x, const Array& x_hat) {
        Tape tape;
        Var c = sad_similarity(tape.constant(require_rank(x, 2, "x")), tape.constant(require_rank(x_hat, 2, "x_hat")));
        return to_array(c.value());
      },
      py::arg("x"), py::arg("x_hat"), "1 - angle / pi per row.");
}

"""Python bindings for the specmix spectral unmixing library."""

from ._core import (
    ConfigError,
    Error,
    FormatError,
    Model,
    NumericError,
    ShapeError,
    TrainConfig,
    fcls,
    load_cube,
    project_simplex,
    rmse,
    sad_similarity,
    save_cube,
    synthesize_scene,
    train,
)

__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "Model",
    "NumericError",
    "ShapeError",
    "TrainConfig",
    "fcls",
    "load_cube",
    "project_simplex",
    "rmse",
    "sad_similarity",
    "save_cube",
    "synthesize_scene",
    "train",
]

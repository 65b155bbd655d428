import json

import numpy as np
import pytest

import specmix


@pytest.fixture(scope="module")
def scene():
    return specmix.synthesize_scene(5, height=10, width=10, bands=40)


def test_scene_shapes(scene):
    assert scene["cube"].shape == (10, 10, 40)
    assert scene["abundances"].shape == (10, 10, 4)
    assert scene["endmembers"].shape == (4, 40)
    np.testing.assert_allclose(scene["abundances"].sum(axis=2), 1.0, atol=1e-9)


def test_fcls_recovers_exact_mixtures(scene):
    e = scene["endmembers"]
    y = scene["abundances"].reshape(-1, 4)
    est = specmix.fcls(y @ e, e, 2000)
    assert specmix.rmse(y, est) < 1e-4


def test_train_short_run(scene, tmp_path):
    cfg = specmix.TrainConfig()
    cfg.iterations = 4
    cfg.batch_size = 16
    cfg.seed = 3
    r = specmix.train(scene["cube"], scene["endmembers"], cfg, tmp_path / "run")
    assert not r.diverged
    assert r.history.shape == (4, 4)
    assert np.all(np.isfinite(r.history))
    y = r.model.abundances(scene["cube"].reshape(-1, 40))
    assert y.shape == (100, 4)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)
    assert (tmp_path / "run" / "history.csv").exists()

    r.model.save(tmp_path / "m.bin", 4)
    back = specmix.Model.load(tmp_path / "m.bin")
    np.testing.assert_array_equal(back.abundances(scene["cube"].reshape(-1, 40)), y)


def test_config_json_round_trip():
    cfg = specmix.TrainConfig()
    cfg.lambda0 = 1.0
    cfg.use_wgan = False
    back = specmix.TrainConfig.from_json(cfg.to_json())
    assert back.lambda0 == 1.0 and not back.use_wgan
    assert json.loads(cfg.to_json())["lambda0"] == 1.0
    with pytest.raises(specmix.ConfigError):
        specmix.TrainConfig.from_json('{"bogus": 1}')


def test_cube_file_round_trip(scene, tmp_path):
    specmix.save_cube(scene["cube"], tmp_path / "c.hsc")
    back = specmix.load_cube(tmp_path / "c.hsc")
    np.testing.assert_allclose(back, scene["cube"], rtol=1e-6)
    (tmp_path / "bad.hsc").write_bytes(b"HSC1")
    with pytest.raises(specmix.FormatError):
        specmix.load_cube(tmp_path / "bad.hsc")


def test_small_helpers():
    np.testing.assert_allclose(specmix.project_simplex([2.0, 0.0]), [1.0, 0.0])
    c = specmix.sad_similarity(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    np.testing.assert_allclose(c, [0.5])
    with pytest.raises(specmix.ShapeError):
        specmix.rmse(np.zeros((2, 3)), np.zeros((2, 4)))

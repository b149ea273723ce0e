import json
import os
import tempfile

import numpy as np
import pytest
from fdmod.grid import make_grid
from fdmod.model import (
    EarthModel,
    constant_model,
    lame_parameters,
    layered_model,
    load_model,
    save_model,
    taper_model,
)
from fdmod.utils import ConfigurationError, ModelFileError


def test_layered_default():
    grid = make_grid((10, 10, 20), 20.0)
    model = layered_model(grid)
    assert model.vmin == 1500.0
    assert model.vmax == 4500.0
    assert np.all(model.vp.interior[:, :, :10] == 1500.0)
    assert np.all(model.vp.interior[:, :, 10:] == 4500.0)
    assert model.rho is None


def test_physical_bounds():
    grid = make_grid(6, 10.0)
    with pytest.raises(ConfigurationError):
        constant_model(grid, 2000.0, vs=2500.0, rho=2000.0)
    with pytest.raises(ConfigurationError):
        constant_model(grid, -1.0)
    with pytest.raises(ConfigurationError):
        constant_model(grid, 2000.0, rho=0.0)
    vp = np.full(grid.n, 2000.0)
    vp[1, 2, 3] = np.nan
    with pytest.raises(ConfigurationError):
        EarthModel.from_arrays(grid, vp)


def test_lame_parameters():
    grid = make_grid(5, 10.0)
    model = constant_model(grid, 3000.0, vs=1500.0, rho=2000.0)
    lam, mu = lame_parameters(model)
    assert np.allclose(mu.interior, 2000.0 * 1500.0 ** 2)
    assert np.allclose(lam.interior, 2000.0 * (3000.0 ** 2 - 2 * 1500.0 ** 2))
    with pytest.raises(ConfigurationError):
        lame_parameters(constant_model(grid, 3000.0))


def test_taper_keeps_laterally_uniform_model():
    grid = make_grid((12, 12, 24), 20.0)
    model = layered_model(grid, components=("vp", "rho"))
    tapered = taper_model(model, 3)
    assert np.array_equal(tapered.vp.interior, model.vp.interior)
    assert np.array_equal(tapered.rho.interior, model.rho.interior)


def test_taper_blends_toward_inner_plane():
    grid = make_grid((12, 8, 8), 10.0)
    vp = np.full(grid.n, 2000.0, dtype=np.float32)
    vp[0] = 1000.0
    tapered = taper_model(EarthModel.from_arrays(grid, vp), 3)
    assert np.allclose(tapered.vp.interior[0], 2000.0)
    assert np.allclose(tapered.vp.interior[5], 2000.0)


def test_restrict_keeps_neighbour_ghosts():
    grid = make_grid((8, 8, 8), 10.0, radius=2)
    values = np.arange(512, dtype=np.float32).reshape(8, 8, 8) + 1000.0
    model = EarthModel.from_arrays(grid, values)
    sub = model.restrict((4, 0, 2), (4, 8, 3))
    assert sub.grid.n == (4, 8, 3)
    assert np.array_equal(sub.vp.interior, values[4:8, :, 2:5])
    assert np.array_equal(sub.vp.data[0, 2:-2, 2:-2], values[2, :, 2:5])


def test_restrict_widens_ghosts():
    grid = make_grid((8, 8, 8), 10.0, radius=2)
    values = np.arange(512, dtype=np.float32).reshape(8, 8, 8) + 1000.0
    model = EarthModel.from_arrays(grid, values)
    sub = model.restrict((2, 0, 0), (4, 8, 8), radius=4)
    assert sub.grid.radius == 4
    assert sub.grid.shape == (12, 16, 16)
    assert np.array_equal(sub.vp.interior, values[2:6])
    assert np.array_equal(sub.vp.data[0, 4:-4, 4:-4], values[0])
    assert np.array_equal(sub.vp.data[2, 4:-4, 4:-4], values[0])
    assert np.array_equal(sub.vp.data[6, 0, 4:-4], values[4, 0])


def test_bounds_under_clamping():
    grid = make_grid((6, 7, 8), 10.0)
    rng = np.random.default_rng(3)
    vp = rng.uniform(1000.0, 5000.0, grid.n)
    model = EarthModel.from_arrays(grid, vp)
    for lo, hi in [(1500.0, 4500.0), (2500.0, 2600.0), (500.0, 6000.0), (3000.0, 3000.0)]:
        clamped = EarthModel.from_arrays(grid, np.clip(vp, lo, hi))
        assert clamped.vmin >= model.vmin
        assert clamped.vmax <= model.vmax
        assert clamped.vmin == pytest.approx(max(model.vmin, lo), rel=1e-6)
        assert clamped.vmax == pytest.approx(min(model.vmax, hi), rel=1e-6)
        assert clamped.vmin <= clamped.vmax


def test_save_load_model():
    grid = make_grid((6, 5, 4), (10.0, 12.0, 8.0))
    rng = np.random.default_rng(1)
    vp = rng.uniform(2000.0, 3000.0, grid.n).astype(np.float32)
    model = EarthModel.from_arrays(grid, vp, rho=np.full(grid.n, 1800.0))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        save_model(model, path)
        loaded = load_model(path)
    assert loaded.grid.n == grid.n
    assert loaded.grid.d == grid.d
    assert np.array_equal(loaded.vp.interior, vp)
    assert np.array_equal(loaded.rho.interior, model.rho.interior)
    assert loaded.vs is None


def test_load_model_size_mismatch():
    with tempfile.TemporaryDirectory() as tmp:
        np.full(10, 2000.0, dtype="<f4").tofile(os.path.join(tmp, "vp.f32"))
        path = os.path.join(tmp, "model.json")
        with open(path, "w") as handle:
            json.dump({"n": [3, 3, 3], "d": [10, 10, 10], "components": {"vp": "vp.f32"}}, handle)
        with pytest.raises(ModelFileError):
            load_model(path)


def test_load_model_bad_manifest():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        with open(path, "w") as handle:
            handle.write("{not json")
        with pytest.raises(ModelFileError):
            load_model(path)
        with pytest.raises(ModelFileError):
            load_model(os.path.join(tmp, "missing.json"))

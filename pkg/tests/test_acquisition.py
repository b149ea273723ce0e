import os
import tempfile

import numpy as np
import pytest
from fdmod.acquisition import (
    AcquisitionGeometry,
    ShotRecord,
    default_receivers,
    inject_source,
    record,
    ricker,
)
from fdmod.grid import Box, Field, make_grid
from fdmod.utils import ConfigurationError


def test_ricker_peak_and_delay():
    fmax, dt = 25.0, 1e-3
    wavelet = ricker(fmax, dt, 400)
    assert np.isclose(wavelet.peak_frequency, 10.0)
    assert np.isclose(wavelet.t0, 0.15)
    assert np.argmax(wavelet.samples) == 150
    assert np.isclose(wavelet.samples.max(), 1.0)
    assert abs(wavelet.samples[0]) < 1e-7


def test_ricker_zero_mean():
    wavelet = ricker(25.0, 5e-4, 4000)
    assert abs(np.sum(wavelet.samples) * wavelet.dt) < 1e-8
    assert abs(wavelet.integrated().samples[-1]) < 1e-8


def test_ricker_band_limit():
    wavelet = ricker(25.0, 1e-3, 4000)
    freqs, amplitude = wavelet.spectrum()
    assert abs(freqs[np.argmax(amplitude)] - 10.0) <= 0.5
    at_fmax = amplitude[np.argmin(np.abs(freqs - 25.0))] / amplitude.max()
    assert at_fmax < 0.04
    assert at_fmax ** 2 < 0.01


def test_ricker_too_coarse():
    with pytest.raises(ConfigurationError):
        ricker(25.0, 0.03, 100)
    with pytest.raises(ConfigurationError):
        ricker(25.0, 1e-3, 0)


def test_inject_source_single_point():
    grid = make_grid(6, 10.0, radius=2)
    p = Field.zeros(grid, "p")
    inject_source(p, 2.0, (1, 2, 3), 0.5)
    assert p.interior[1, 2, 3] == 1.0
    assert np.count_nonzero(p.data) == 1
    with pytest.raises(ValueError):
        inject_source(p, 1.0, (6, 0, 0), 1.0)


def test_default_receivers():
    grid = make_grid((10, 8, 12), 20.0)
    geometry = default_receivers(grid, (2, 2, 3))
    assert geometry.nreceivers == 80
    assert np.all(geometry.receivers[:, 2] == 3)
    assert geometry.source_loc == (4, 3, 5)
    sparse = default_receivers(grid, (2, 2, 3), receiver_increment=(2, 4))
    assert sparse.nreceivers == 10
    with pytest.raises(ConfigurationError):
        default_receivers(grid, (2, 2, 3), receiver_increment=(0, 1))


def test_geometry_validate():
    grid = make_grid(6, 10.0)
    AcquisitionGeometry((0, 0, 0), [[5, 5, 5]]).validate(grid)
    with pytest.raises(ConfigurationError):
        AcquisitionGeometry((6, 0, 0), [[1, 1, 1]]).validate(grid)
    with pytest.raises(ConfigurationError):
        AcquisitionGeometry((0, 0, 0), [[1, -1, 1]]).validate(grid)


def test_geometry_restrict():
    geometry = AcquisitionGeometry((5, 5, 5), [[1, 1, 1], [6, 2, 3], [9, 9, 9]])
    local, rows = geometry.restrict(Box((4, 0, 0), (10, 5, 10)))
    assert list(rows) == [1]
    assert np.array_equal(local.receivers, [[2, 2, 3]])
    assert local.source_loc == (1, 5, 5)


def test_record_samples_receivers():
    grid = make_grid(5, 10.0, radius=1)
    p = Field.from_interior(grid, "p", np.arange(125, dtype=np.float32))
    geometry = AcquisitionGeometry((0, 0, 0), [[0, 0, 0], [4, 4, 4], [1, 2, 3]])
    shot = ShotRecord.empty(geometry, 3, 1e-3)
    record(p, geometry, 1, shot)
    assert np.array_equal(shot.traces[:, 1], [0.0, 124.0, 38.0])
    assert np.all(shot.traces[:, [0, 2]] == 0)
    with pytest.raises(IndexError):
        record(p, geometry, 3, shot)


def test_shot_record_file():
    geometry = AcquisitionGeometry((1, 2, 3), [[0, 0, 1], [2, 0, 1]], (2, 1))
    shot = ShotRecord.empty(geometry, 7, 2e-3)
    shot.traces[:] = np.random.rand(2, 7)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "shot.f32")
        shot.save(path)
        assert os.path.getsize(path) == 2 * 7 * 4
        loaded = ShotRecord.load(path)
    assert np.array_equal(loaded.traces, shot.traces)
    assert loaded.dt == shot.dt
    assert loaded.geometry.source_loc == (1, 2, 3)
    assert loaded.geometry.receiver_increment == (2, 1)

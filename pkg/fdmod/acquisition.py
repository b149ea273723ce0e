"""
© 2026, fdmod developers
"""

import dataclasses
import json

import numpy as np
import scipy.fft

from fdmod.utils import ConfigurationError, atomic_write

_RAW_DTYPE = np.dtype("<f4")


@dataclasses.dataclass
class Wavelet:
    samples: np.ndarray
    dt: float
    fmax: float
    t0: float

    @property
    def peak_frequency(self):
        return self.fmax / 2.5

    @property
    def times(self):
        return np.arange(len(self.samples)) * self.dt

    def integrated(self):
        """Running time integral, used as the source-time function of first-order systems."""
        return Wavelet(np.cumsum(self.samples) * self.dt, self.dt, self.fmax, self.t0)

    def scaled(self, factor):
        return Wavelet(self.samples * factor, self.dt, self.fmax, self.t0)

    def spectrum(self):
        """Amplitude spectrum on the non-negative frequencies, as ``(freqs, amplitude)``."""
        freqs = scipy.fft.rfftfreq(len(self.samples), self.dt)
        return freqs, np.abs(scipy.fft.rfft(self.samples))


def ricker(fmax, dt, nsteps):
    """Ricker wavelet with peak frequency `fmax / 2.5`, delayed by `1.5 / f_peak`.

    Parameters
    ----------
    fmax : float
        Maximum frequency of interest, in Hz.
    dt : float
        Sampling interval in seconds.
    nsteps : int
        Number of samples.

    Returns
    -------
    Wavelet
        Unit-peak wavelet sampled at ``n * dt``, n = 0..nsteps-1.

    Raises
    ------
    ConfigurationError
        If `dt` cannot sample `fmax` (``dt > 1 / (2 fmax)``) or an argument is non-positive.
    """
    if not fmax > 0 or not dt > 0:
        raise ConfigurationError(f"fmax and dt must be > 0, got fmax={fmax}, dt={dt}")
    if dt > 1.0 / (2.0 * fmax):
        raise ConfigurationError(f"dt={dt} s is too coarse to sample fmax={fmax} Hz")
    if nsteps < 1:
        raise ConfigurationError(f"nsteps must be >= 1, got {nsteps}")
    fpeak = fmax / 2.5
    t0 = 1.5 / fpeak
    arg = (np.pi * fpeak * (np.arange(nsteps) * dt - t0)) ** 2
    return Wavelet((1.0 - 2.0 * arg) * np.exp(-arg), float(dt), float(fmax), t0)


def inject_source(p, amplitude, loc, scale):
    """Adds `scale * amplitude` to `p` at interior index `loc`; nothing else changes."""
    if not p.grid.interior.contains(loc):
        raise ValueError(f"Source location {tuple(loc)} outside the interior {p.grid.n}")
    index = tuple(int(i) + p.grid.radius for i in loc)
    dtype = p.data.dtype
    p.data[index] += np.asarray(scale, dtype=dtype) * np.asarray(amplitude, dtype=dtype)


@dataclasses.dataclass
class AcquisitionGeometry:
    source_loc: tuple
    receivers: np.ndarray
    receiver_increment: tuple = (1, 1)
    source_increment: tuple = (1, 1, 0)
    nshots: int = 1
    time_rec: float = 0.0

    def __post_init__(self):
        self.source_loc = tuple(int(v) for v in self.source_loc)
        self.receivers = np.asarray(self.receivers, dtype=np.int64).reshape(-1, 3)

    @property
    def nreceivers(self):
        return len(self.receivers)

    def validate(self, grid):
        interior = grid.interior
        if not interior.contains(self.source_loc):
            raise ConfigurationError(f"Source {self.source_loc} outside the interior {grid.n}")
        lo, hi = np.asarray(interior.lo), np.asarray(interior.hi)
        if self.nreceivers and not np.all((self.receivers >= lo) & (self.receivers < hi)):
            raise ConfigurationError(f"Receivers outside the interior {grid.n}")

    def restrict(self, box):
        """Receivers inside `box` shifted to its origin, and their rows in the full list."""
        lo, hi = np.asarray(box.lo), np.asarray(box.hi)
        rows = np.flatnonzero(np.all((self.receivers >= lo) & (self.receivers < hi), axis=1))
        source = tuple(s - l for s, l in zip(self.source_loc, box.lo))
        local = dataclasses.replace(self, source_loc=source, receivers=self.receivers[rows] - lo)
        return local, rows


def default_receivers(grid, ndamping, source_loc=None, receiver_increment=(1, 1)):
    """One receiver per interior `(x, y)` column on the plane just below the top damping layer.

    Parameters
    ----------
    grid : Grid3D
    ndamping : sequence of int
        Damping widths; the receiver plane sits at ``z = ndamping[2]``.
    source_loc : sequence of int, optional
        Source index, by default the grid center ``(n - 1) // 2``.
    receiver_increment : sequence of int, optional
        Receiver stride along x and y, by default (1, 1).

    Returns
    -------
    AcquisitionGeometry
    """
    incx, incy = (int(v) for v in receiver_increment)
    if incx < 1 or incy < 1:
        raise ConfigurationError(f"Receiver increments must be >= 1, got {receiver_increment}")
    depth = min(int(ndamping[2]), grid.n[2] - 1)
    xs, ys = np.meshgrid(np.arange(0, grid.n[0], incx), np.arange(0, grid.n[1], incy), indexing="ij")
    receivers = np.stack([xs.ravel(), ys.ravel(), np.full(xs.size, depth)], axis=1)
    if source_loc is None:
        source_loc = tuple((v - 1) // 2 for v in grid.n)
    return AcquisitionGeometry(source_loc, receivers, (incx, incy))


@dataclasses.dataclass
class ShotRecord:
    traces: np.ndarray
    dt: float
    geometry: AcquisitionGeometry

    @classmethod
    def empty(cls, geometry, nsteps, dt, dtype=np.float32):
        return cls(np.zeros((geometry.nreceivers, nsteps), dtype=dtype), float(dt), geometry)

    @property
    def nsteps(self):
        return self.traces.shape[1]

    def save(self, path):
        """Writes raw little-endian f32 traces to `path` and a JSON sidecar to `path + '.json'`."""
        with atomic_write(path) as handle:
            handle.write(np.ascontiguousarray(self.traces, dtype=_RAW_DTYPE).tobytes())
        sidecar = {
            "dt": self.dt,
            "nsteps": self.nsteps,
            "nreceivers": self.geometry.nreceivers,
            "source_loc": list(self.geometry.source_loc),
            "receiver_increment": list(self.geometry.receiver_increment),
            "receivers": self.geometry.receivers.tolist(),
            "dtype": "f32le",
            "layout": "receiver-major",
        }
        with atomic_write(path + ".json", "w") as handle:
            json.dump(sidecar, handle, indent=4)

    @classmethod
    def load(cls, path):
        with open(path + ".json") as handle:
            sidecar = json.load(handle)
        shape = (sidecar["nreceivers"], sidecar["nsteps"])
        traces = np.fromfile(path, dtype=_RAW_DTYPE)
        if traces.size != shape[0] * shape[1]:
            raise ValueError(f"Trace file `{path}` holds {traces.size} samples, expected {shape}")
        geometry = AcquisitionGeometry(
            sidecar["source_loc"], sidecar["receivers"], tuple(sidecar["receiver_increment"])
        )
        return cls(traces.astype(np.float32).reshape(shape), sidecar["dt"], geometry)


def record(p, geometry, step, into):
    """Copies `p` at every receiver into column `step` of `into.traces`."""
    if not 0 <= step < into.nsteps:
        raise IndexError(f"Step {step} outside the record of {into.nsteps} steps")
    idx = geometry.receivers + p.grid.radius
    into.traces[:, step] = p.data[idx[:, 0], idx[:, 1], idx[:, 2]]

"""
© 2026, fdmod developers
"""

import dataclasses
import math
import time
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from fdmod.acquisition import AcquisitionGeometry, ShotRecord, default_receivers, record, ricker
from fdmod.cpml import build_profile, degenerate_profile
from fdmod.grid import make_grid, partition_regions
from fdmod.model import layered_model, taper_model
from fdmod.propagators import make_propagator
from fdmod.stencil import second_derivative_coeffs, staggered_first_derivative_coeffs
from fdmod.utils import (
    DAMPING_WAVELENGTHS,
    DEFAULT_CFL,
    DEFAULT_DGRID,
    DEFAULT_FMAX,
    DEFAULT_NGRID,
    DEFAULT_NSTEPS,
    DEFAULT_NTAPER,
    DEFAULT_RADIUS,
    DTYPES,
    LOGGER,
    MAX_RADIUS,
    PROPAGATORS,
    R_TARGET,
    TARGETS,
    ConfigurationError,
    InstabilityError,
    as_triple,
)

PROGRESS_EVERY = 100

# Material components each propagator reads.
REQUIRED_COMPONENTS = {
    "acoustic_iso_cd": ("vp",),
    "acoustic_iso": ("vp", "rho"),
    "elastic_iso": ("vp", "vs", "rho"),
}


@dataclasses.dataclass
class SimConfig:
    """Full parameter set of one modeling run; defaults match the run-report defaults."""

    ngrid: tuple = DEFAULT_NGRID
    dgrid: tuple = DEFAULT_DGRID
    nsteps: int = DEFAULT_NSTEPS
    fmax: float = DEFAULT_FMAX
    verbose: bool = False
    propagator: str = "acoustic_iso_cd"
    target: str = "seq"
    nthreads: int = 1
    cfl: float = DEFAULT_CFL
    ndamping: Optional[tuple] = None
    ntaper: int = DEFAULT_NTAPER
    stencil: tuple = (DEFAULT_RADIUS,) * 3
    source_loc: Optional[tuple] = None
    nshots: int = 1
    time_rec: float = 0.0
    receiver_increment: tuple = (1, 1)
    source_increment: tuple = (1, 1, 0)
    free_surface: bool = False
    cpml: bool = True
    dtype: str = "f32"
    check_every: int = 100
    dt: Optional[float] = None
    receivers: Optional[tuple] = None

    def __post_init__(self):
        self.ngrid = as_triple(self.ngrid, "ngrid", int)
        self.dgrid = as_triple(self.dgrid, "dgrid", float)
        self.stencil = as_triple(self.stencil, "stencil", int)
        if self.ndamping is not None:
            self.ndamping = as_triple(self.ndamping, "ndamping", int)
        if self.source_loc is not None:
            self.source_loc = as_triple(self.source_loc, "source_loc", int)
        self.receiver_increment = tuple(int(v) for v in self.receiver_increment)
        self.source_increment = tuple(int(v) for v in self.source_increment)

    def validate(self):
        """Raises ConfigurationError naming the first invalid field."""
        if any(n < 1 for n in self.ngrid):
            raise ConfigurationError(f"ngrid must be >= 1 per axis, got {self.ngrid}")
        if any(not d > 0 for d in self.dgrid):
            raise ConfigurationError(f"dgrid must be > 0 per axis, got {self.dgrid}")
        if self.nsteps < 1:
            raise ConfigurationError(f"nsteps must be >= 1, got {self.nsteps}")
        if not self.fmax > 0:
            raise ConfigurationError(f"fmax must be > 0, got {self.fmax}")
        if not 0 < self.cfl <= 1:
            raise ConfigurationError(f"cfl must be in (0, 1], got {self.cfl}")
        if self.propagator not in PROPAGATORS:
            raise ConfigurationError(
                f"Unknown propagator `{self.propagator}`, valid choices are {', '.join(PROPAGATORS)}"
            )
        if self.target not in TARGETS:
            raise ConfigurationError(
                f"Unknown target `{self.target}`, valid targets are {', '.join(TARGETS)}"
            )
        if self.nthreads < 1:
            raise ConfigurationError(f"nthreads must be >= 1, got {self.nthreads}")
        if any(not 1 <= r <= MAX_RADIUS for r in self.stencil):
            raise ConfigurationError(f"Stencil radius must be in [1, {MAX_RADIUS}], got {self.stencil}")
        if self.ntaper < 0:
            raise ConfigurationError(f"ntaper must be >= 0, got {self.ntaper}")
        if self.nshots != 1:
            raise ConfigurationError(f"Only single-shot runs are supported, got nshots={self.nshots}")
        if self.time_rec < 0:
            raise ConfigurationError(f"time_rec must be >= 0, got {self.time_rec}")
        if self.dtype not in DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(DTYPES)}, got `{self.dtype}`")
        if self.dt is not None and not self.dt > 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if self.check_every < 0:
            raise ConfigurationError(f"check_every must be >= 0, got {self.check_every}")
        return self


class SequentialExecutor:
    """Runs every task in the calling thread, in order."""

    nthreads = 1

    def tiles(self, box):
        return [box]

    def run(self, tasks):
        for task in tasks:
            task()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


class ParallelExecutor:
    """Thread pool over x-slabs of the inner box; each `run` call is a barrier.

    Tiles are generated in a fixed low-to-high order and never overlap, so the
    result does not depend on `nthreads`.
    """

    def __init__(self, nthreads):
        if nthreads < 1:
            raise ConfigurationError(f"nthreads must be >= 1, got {nthreads}")
        self.nthreads = nthreads
        self._pool = None

    def tiles(self, box):
        return box.split(0, self.nthreads)

    def run(self, tasks):
        if self._pool is None:
            Parallel(n_jobs=self.nthreads, backend="threading")(delayed(task)() for task in tasks)
        else:
            self._pool(delayed(task)() for task in tasks)

    def __enter__(self):
        self._pool = Parallel(n_jobs=self.nthreads, backend="threading").__enter__()
        return self

    def __exit__(self, *exc):
        pool, self._pool = self._pool, None
        return pool.__exit__(*exc)


def select_target(config):
    """Executor for `config.target`.

    Raises
    ------
    ConfigurationError
        If the target is unknown; the message lists the valid targets.
    """
    if config.target == "seq":
        return SequentialExecutor()
    if config.target == "parallel":
        return ParallelExecutor(config.nthreads)
    raise ConfigurationError(f"Unknown target `{config.target}`, valid targets are {', '.join(TARGETS)}")


def cfl_dt(model, grid, stencil=DEFAULT_RADIUS, cfl=DEFAULT_CFL, staggered=False):
    """Stable time step from a spectral-radius bound of the spatial operator.

    ``dt = cfl * 2 / (vmax * sqrt(sum_axes s_axis))`` with `s_axis` the bound of
    the collocated second-derivative stencil, or the stricter of that and the
    staggered first-derivative bound when `staggered` is True.

    Parameters
    ----------
    model : EarthModel
    grid : Grid3D
    stencil : int or sequence of int, optional
        Stencil radius per axis, by default 4
    cfl : float, optional
        Safety factor in (0, 1], by default 0.8
    staggered : bool, optional
        Also honor the staggered bound, by default False

    Returns
    -------
    float
        Time step in seconds.
    """
    if not 0 < cfl <= 1:
        raise ConfigurationError(f"cfl must be in (0, 1], got {cfl}")
    stencil = as_triple(stencil, "stencil", int)
    bound = sum(second_derivative_coeffs(r, h).spectral_bound() for r, h in zip(stencil, grid.d))
    if staggered:
        bound = max(
            bound,
            sum(staggered_first_derivative_coeffs(r, h).spectral_bound() for r, h in zip(stencil, grid.d)),
        )
    return cfl * 2.0 / (model.vmax * math.sqrt(bound))


def default_ndamping(grid, vmax, fmax):
    """Three wavelengths of the fastest wave at `fmax`, clamped to fit the grid."""
    widths = []
    for axis, (n, h) in enumerate(zip(grid.n, grid.d)):
        width = math.ceil(DAMPING_WAVELENGTHS * vmax / (fmax * h))
        limit = (n - 1) // 2
        if width > limit:
            LOGGER.warning(f"Damping width {width} along {'xyz'[axis]} clamped to {limit} for {n} points")
            width = limit
        widths.append(width)
    return tuple(widths)


def default_model(config, grid):
    """Two-layer model with the components the selected propagator needs."""
    return layered_model(grid, components=REQUIRED_COMPONENTS[config.propagator])


def _fortran_real(value):
    value = float(np.float32(value))
    if value == 0:
        return "0.00000000"
    magnitude = abs(value)
    if 0.1 <= magnitude < 1e9:
        digits = max(math.floor(math.log10(magnitude)) + 1, 0)
        return f"{value:.{9 - digits}f}"
    return f"{value:.8E}"


def format_parameter(name, values):
    """One run-report line in list-directed layout, e.g. `` ngrid              =          240``."""
    parts = []
    for i, value in enumerate(values):
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            parts.append(f"{value:{13 if i == 0 else 12}d}")
        else:
            parts.append(_fortran_real(value).rjust(14 if i == 0 else 13) + "    ")
    return f" {name:<19}=" + "".join(parts)


@dataclasses.dataclass
class RunSetup:
    """Everything derived from a SimConfig before the time loop starts."""

    config: SimConfig
    grid: object
    model: object
    dt: float
    ndamping: tuple
    partition: object
    profile: object
    geometry: AcquisitionGeometry

    @property
    def dtype(self):
        return DTYPES[self.config.dtype]

    def propagator(self, model=None, partition=None, offset=(0, 0, 0), free_surface=None):
        return make_propagator(
            self.config.propagator,
            self.model if model is None else model,
            self.dt,
            self.partition if partition is None else partition,
            self.profile,
            stencil=self.config.stencil,
            dtype=self.dtype,
            free_surface=self.config.free_surface if free_surface is None else free_surface,
            offset=offset,
        )


def setup_run(config, model=None):
    """Validates `config` and derives grid, model, time step, damping and acquisition.

    Raises
    ------
    ConfigurationError
        On invalid settings or a model that does not match `ngrid`.
    """
    config.validate()
    grid = make_grid(config.ngrid, config.dgrid, radius=max(config.stencil))
    if model is None:
        model = default_model(config, grid)
    if tuple(model.grid.n) != grid.n:
        raise ConfigurationError(f"Model grid {model.grid.n} does not match ngrid {grid.n}")
    if model.grid.radius != grid.radius or tuple(model.grid.d) != grid.d:
        model = type(model).from_arrays(
            grid, **{name: field.interior for name, field in model.components.items()}
        )
    missing = [c for c in REQUIRED_COMPONENTS[config.propagator] if c not in model.components]
    if missing:
        raise ConfigurationError(f"Propagator `{config.propagator}` needs model components {missing}")
    model = taper_model(model, config.ntaper)

    if config.dt is not None:
        dt = config.dt
    else:
        staggered = config.propagator != "acoustic_iso_cd"
        dt = cfl_dt(model, grid, config.stencil, config.cfl, staggered)
    ndamping = config.ndamping or default_ndamping(grid, model.vmax, config.fmax)
    partition = partition_regions(grid, ndamping)
    if config.cpml:
        profile = build_profile(
            grid, ndamping, config.fmax, model.vmax, dt, R_TARGET, config.free_surface
        )
    else:
        profile = degenerate_profile(grid, dt)

    if config.receivers is not None:
        source_loc = config.source_loc or tuple((n - 1) // 2 for n in grid.n)
        geometry = AcquisitionGeometry(source_loc, np.asarray(config.receivers))
    else:
        geometry = default_receivers(grid, ndamping, config.source_loc, config.receiver_increment)
    geometry = dataclasses.replace(
        geometry,
        receiver_increment=config.receiver_increment,
        source_increment=config.source_increment,
        nshots=config.nshots,
        time_rec=config.time_rec,
    )
    geometry.validate(grid)
    LOGGER.info(f"Set up {config.propagator} on {grid.n}: dt={dt:.6g} s, ndamping={ndamping}")
    return RunSetup(config, grid, model, dt, ndamping, partition, profile, geometry)


@dataclasses.dataclass
class RunReport:
    """Parameter block, progress marks and timings of one run."""

    setup: RunSetup
    progress: list = dataclasses.field(default_factory=list)
    kernel_seconds: float = 0.0
    modeling_seconds: float = 0.0
    region_seconds: dict = dataclasses.field(default_factory=dict)

    def parameter_lines(self):
        config, setup = self.setup.config, self.setup
        groups = [
            [("nthreads", [config.nthreads if config.target == "parallel" else 1])],
            [
                ("ngrid", list(config.ngrid)),
                ("dgrid", list(config.dgrid)),
                ("nsteps", [config.nsteps]),
                ("fmax", [config.fmax]),
                ("vmin", [setup.model.vmin]),
                ("vmax", [setup.model.vmax]),
                ("cfl", [config.cfl]),
            ],
            [
                ("stencil", list(config.stencil)),
                ("source_loc", [int(i) + 1 for i in setup.geometry.source_loc]),
                ("ndamping", list(setup.ndamping)),
                ("ntaper", [config.ntaper] * 3),
            ],
            [
                ("nshots", [config.nshots]),
                ("time_rec", [config.time_rec]),
                ("nreceivers", [setup.geometry.nreceivers]),
                ("receiver_increment", list(config.receiver_increment)),
                ("source_increment", list(config.source_increment)),
            ],
        ]
        lines = []
        for group in groups:
            lines.extend(format_parameter(name, values) for name, values in group)
            lines.append(" ")
        return lines

    @staticmethod
    def progress_line(step, nsteps):
        return f" time step{step:12d} /{nsteps:12d}"

    def timing_lines(self):
        return [f"Time Kernel{self.kernel_seconds:12.2f}", f"Time Modeling{self.modeling_seconds:10.2f}"]

    def render(self):
        progress = [self.progress_line(step, self.setup.config.nsteps) for step in self.progress]
        return "\n".join(self.parameter_lines() + progress + self.timing_lines())


def _emit(echo, lines):
    if echo is not None:
        for line in lines:
            echo(line)


def run(config, model=None, echo=None):
    """Runs one shot: zero initial state, then step, inject and record `nsteps` times.

    Parameters
    ----------
    config : SimConfig
    model : EarthModel, optional
        Material model on `config.ngrid`, by default the two-layer model.
    echo : callable, optional
        Receives the report lines as they are produced, e.g. `print`.

    Returns
    -------
    tuple
        `(ShotRecord, RunReport)`.

    Raises
    ------
    ConfigurationError
        On invalid settings.
    InstabilityError
        If the wavefield stops being finite; carries the step number.
    """
    start = time.perf_counter()
    setup = setup_run(config, model)
    report = RunReport(setup)
    _emit(echo, report.parameter_lines())

    propagator = setup.propagator()
    state = propagator.new_state()
    wavelet = propagator.source_time_function(ricker(config.fmax, setup.dt, config.nsteps))
    shot = ShotRecord.empty(setup.geometry, config.nsteps, setup.dt, setup.dtype)
    loc = setup.geometry.source_loc
    last_finite = 0

    with select_target(config) as executor:
        for k in range(config.nsteps):
            tick = time.perf_counter()
            propagator.step(state, executor, (loc, wavelet.samples[k]))
            report.kernel_seconds += time.perf_counter() - tick
            record(propagator.pressure_field(state), setup.geometry, k, shot)
            step = k + 1
            checked = config.check_every and step % config.check_every == 0
            if checked or step == config.nsteps:
                if not propagator.is_finite(state):
                    raise InstabilityError(step, last_finite)
                last_finite = step
            if config.verbose and step % PROGRESS_EVERY == 0:
                report.progress.append(step)
                _emit(echo, [report.progress_line(step, config.nsteps)])

    report.region_seconds = dict(propagator.timings)
    report.modeling_seconds = time.perf_counter() - start
    _emit(echo, report.timing_lines())
    LOGGER.info(
        f"Finished {config.nsteps} steps in {report.modeling_seconds:.2f} s "
        f"(kernel {report.kernel_seconds:.2f} s)"
    )
    return shot, report

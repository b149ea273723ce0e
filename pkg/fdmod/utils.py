"""
© 2026, fdmod developers
"""

import contextlib
import logging
import os
import tempfile

import numpy as np

# Run defaults (help block of the modeling binary)

DEFAULT_NGRID = (100, 100, 100)
DEFAULT_DGRID = (20.0, 20.0, 20.0)
DEFAULT_NSTEPS = 1000
DEFAULT_FMAX = 25.0
DEFAULT_CFL = 0.8
DEFAULT_RADIUS = 4
DEFAULT_NTAPER = 3
MAX_RADIUS = 8

NTHREADS_ENV = "FDMOD_NTHREADS"

# CPML

R_TARGET = 1e-3
NPOWER = 2
KAPPA_MAX = 1.0
DAMPING_WAVELENGTHS = 3.0

# Two-layer default model, (top, bottom)

DEFAULT_LAYERS = {
    "vp": (1500.0, 4500.0),
    "vs": (0.0, 2600.0),
    "rho": (1000.0, 2500.0),
}

PROPAGATORS = ("acoustic_iso_cd", "acoustic_iso", "elastic_iso")
TARGETS = ("seq", "parallel")

WAVEFIELD_COMPONENTS = ("p", "vx", "vy", "vz", "sxx", "syy", "szz", "syz", "sxz", "sxy")
MATERIAL_COMPONENTS = ("vp", "vs", "rho", "lambda", "mu")

DTYPES = {"f32": np.float32, "f64": np.float64}

WORD_SIZE = 4
HALO_WIRE_VERSION = 1


class ConfigurationError(ValueError):
    pass


class ModelFileError(ValueError):
    pass


class InstabilityError(RuntimeError):
    """Non-finite wavefield found by the check at `step`; it was still finite at `last_finite`."""

    def __init__(self, step, last_finite=0, message=None):
        self.step = step
        self.last_finite = last_finite
        super().__init__(
            message
            or f"Non-finite wavefield detected by the check at time step {step}, "
            f"last finite at time step {last_finite}"
        )


class TransportError(RuntimeError):
    def __init__(self, rank, neighbor, message):
        self.rank = rank
        self.neighbor = neighbor
        super().__init__(f"rank {rank} <-> rank {neighbor}: {message}")


def as_triple(values, name, kind=int):
    """Coerces a scalar or a 3-sequence into a tuple of three `kind` values.

    Parameters
    ----------
    values : scalar or sequence
        Single value (replicated) or one value per axis.
    name : str
        Parameter name used in error messages.
    kind : type, optional
        Element type, by default int

    Returns
    -------
    tuple
        Three values of type `kind`.

    Raises
    ------
    ConfigurationError
        If `values` does not hold exactly three elements.
    """
    if np.isscalar(values):
        return (kind(values),) * 3
    values = tuple(values)
    if len(values) != 3:
        raise ConfigurationError(f"`{name}` needs three values, got {len(values)}: {values}")
    return tuple(kind(v) for v in values)


def parse_csv_values(text, kind=int, count=3):
    """Parses a comma-separated value list such as `240,240,240`."""
    parts = [part.strip() for part in str(text).split(",")]
    if len(parts) != count or any(part == "" for part in parts):
        raise ConfigurationError(f"expected {count} comma-separated values, got `{text}`")
    try:
        return tuple(kind(part) for part in parts)
    except ValueError as err:
        raise ConfigurationError(f"malformed value list `{text}`: {err}") from err


@contextlib.contextmanager
def atomic_write(path, mode="wb"):
    """Context manager yielding a temporary file that replaces `path` on success.

    The temporary file lives in the target directory so the final rename never
    crosses file systems. On error the temporary file is removed and `path` is
    left untouched.
    """
    if not path:
        raise ValueError("Output path must be a non-empty string.")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as handle:
            yield handle
        os.replace(tmp_path, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.remove(tmp_path)
        raise


# logger

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(name)s | %(levelname)s: %(message)s",
    datefmt="%Y/%m/%d %I:%M:%S %p",
)
LOGGER = logging.getLogger("fdmod")

"""
© 2026, fdmod developers
"""

import dataclasses
import json
import os
from typing import Optional

import numpy as np

from fdmod.grid import Field, Grid3D, make_grid
from fdmod.utils import (
    DEFAULT_LAYERS,
    LOGGER,
    ConfigurationError,
    ModelFileError,
    atomic_write,
)

MANIFEST_DTYPE = "f32le"
MANIFEST_ORDER = "z-fastest"
_RAW_DTYPE = np.dtype("<f4")


@dataclasses.dataclass
class EarthModel:
    """Material volumes on a common grid; `vmin` and `vmax` are derived from `vp`."""

    grid: Grid3D
    vp: Field
    vs: Optional[Field] = None
    rho: Optional[Field] = None

    def __post_init__(self):
        _validate(self)
        interior = self.vp.interior
        self.vmin = float(interior.min())
        self.vmax = float(interior.max())

    @classmethod
    def from_arrays(cls, grid, vp, vs=None, rho=None):
        """Builds a model from interior arrays, filling ghost shells by edge replication."""
        fields = {
            name: None if values is None else Field.from_interior(grid, name, values)
            for name, values in (("vp", vp), ("vs", vs), ("rho", rho))
        }
        return cls(grid, **fields)

    @property
    def components(self):
        return {
            name: field
            for name, field in (("vp", self.vp), ("vs", self.vs), ("rho", self.rho))
            if field is not None
        }

    def restrict(self, offset, n, radius=None):
        """Sub-model over the interior box starting at `offset` with sizes `n`.

        Ghost shells of the sub-model carry the neighbouring values of this model,
        so stencils see the same material as on the full grid. A `radius` wider
        than this model's ghost width extends the shells by edge replication.
        """
        radius = self.grid.radius if radius is None else int(radius)
        extra = max(radius - self.grid.radius, 0)
        grid = dataclasses.replace(self.grid, n=tuple(n), radius=radius)
        start = extra + self.grid.radius - radius
        sl = tuple(slice(start + o, start + o + v + 2 * radius) for o, v in zip(offset, n))
        fields = {
            name: Field(grid, name, np.pad(field.data, extra, mode="edge")[sl].copy())
            for name, field in self.components.items()
        }
        return EarthModel(grid, **fields)


def _validate(model):
    vp = model.vp.interior
    if not np.all(np.isfinite(vp)) or not np.all(vp > 0):
        raise ConfigurationError("vp must be finite and > 0 everywhere")
    if model.rho is not None:
        rho = model.rho.interior
        if not np.all(np.isfinite(rho)) or not np.all(rho > 0):
            raise ConfigurationError("rho must be finite and > 0 everywhere")
    if model.vs is not None:
        vs = model.vs.interior
        if not np.all(np.isfinite(vs)) or not np.all(vs >= 0):
            raise ConfigurationError("vs must be finite and >= 0 everywhere")
        if np.any(vs >= vp):
            raise ConfigurationError("vs must be smaller than vp everywhere")


def constant_model(grid, vp, vs=None, rho=None):
    """Homogeneous model.

    Parameters
    ----------
    grid : Grid3D
    vp : float
        P-wave velocity in m/s.
    vs : float, optional
        S-wave velocity in m/s, by default None (no shear component).
    rho : float, optional
        Density in kg/m^3, by default None (no density component).

    Returns
    -------
    EarthModel

    Raises
    ------
    ConfigurationError
        If the values violate the physical bounds, e.g. `vs >= vp`.
    """
    def _full(value):
        return None if value is None else np.full(grid.n, value, dtype=np.float32)

    return EarthModel.from_arrays(grid, _full(vp), _full(vs), _full(rho))


def layered_model(grid, layers=None, components=("vp",)):
    """Two horizontal layers split at half depth, values taken from `layers[name] = (top, bottom)`."""
    layers = DEFAULT_LAYERS if layers is None else layers
    nz = grid.n[2]
    arrays = {}
    for name in components:
        top, bottom = layers[name]
        values = np.empty(grid.n, dtype=np.float32)
        values[:, :, : nz // 2] = top
        values[:, :, nz // 2 :] = bottom
        arrays[name] = values
    return EarthModel.from_arrays(grid, **arrays)


def taper_model(model, ntaper):
    """Blends the outermost `ntaper` planes of every face toward the plane at depth `ntaper`.

    Plane `i` (counted from the face) becomes ``edge + w_i (v_i - edge)`` with
    ``w_i = (1 - cos(pi i / ntaper)) / 2``, so a laterally uniform model is unchanged.
    """
    if ntaper <= 0:
        return model
    arrays = {}
    for name, field in model.components.items():
        values = field.interior.astype(np.float64)
        for axis, n in enumerate(model.grid.n):
            if n <= 2 * ntaper:
                LOGGER.warning(f"Skipping taper along axis {'xyz'[axis]}: {n} points <= 2 x {ntaper}")
                continue
            moved = np.moveaxis(values, axis, 0)
            for i in range(ntaper):
                weight = 0.5 * (1.0 - np.cos(np.pi * i / ntaper))
                for plane, edge in ((i, ntaper), (n - 1 - i, n - 1 - ntaper)):
                    moved[plane] = moved[edge] + weight * (moved[plane] - moved[edge])
        arrays[name] = values.astype(np.float32)
    return EarthModel.from_arrays(model.grid, **arrays)


def lame_parameters(model):
    """Isotropic stiffness parameters.

    Returns
    -------
    tuple of Field
        ``lambda = rho (vp^2 - 2 vs^2)`` and ``mu = rho vs^2`` in double precision.

    Raises
    ------
    ConfigurationError
        If the model has no `vs` or no `rho`.
    """
    if model.vs is None or model.rho is None:
        raise ConfigurationError("Lame parameters need both vs and rho in the model")
    vp, vs, rho = (f.data.astype(np.float64) for f in (model.vp, model.vs, model.rho))
    mu = rho * vs ** 2
    lam = rho * vp ** 2 - 2.0 * mu
    return Field(model.grid, "lambda", lam), Field(model.grid, "mu", mu)


def load_model(manifest_path):
    """Reads a JSON manifest and its headerless little-endian f32 volumes.

    Raises
    ------
    ModelFileError
        On unreadable or inconsistent manifests, size mismatches and invalid samples.
    """
    if not manifest_path or not os.path.isfile(manifest_path):
        raise ModelFileError(f"Model manifest `{manifest_path}` not found")
    try:
        with open(manifest_path) as handle:
            manifest = json.load(handle)
    except json.JSONDecodeError as err:
        raise ModelFileError(f"Malformed model manifest `{manifest_path}`: {err}") from err

    missing = {"n", "d", "components"} - set(manifest)
    if missing:
        raise ModelFileError(f"Model manifest lacks keys {sorted(missing)}")
    if manifest.get("dtype", MANIFEST_DTYPE) != MANIFEST_DTYPE:
        raise ModelFileError(f"Unsupported sample type `{manifest['dtype']}`")
    if manifest.get("order", MANIFEST_ORDER) != MANIFEST_ORDER:
        raise ModelFileError(f"Unsupported sample order `{manifest['order']}`")
    if "vp" not in manifest["components"]:
        raise ModelFileError("Model manifest must declare a `vp` component")

    try:
        grid = make_grid(manifest["n"], manifest["d"])
    except ConfigurationError as err:
        raise ModelFileError(str(err)) from err

    base = os.path.dirname(os.path.abspath(manifest_path))
    arrays = {}
    for name, filename in manifest["components"].items():
        if name not in ("vp", "vs", "rho"):
            raise ModelFileError(f"Unknown model component `{name}`")
        path = os.path.join(base, filename)
        if not os.path.isfile(path):
            raise ModelFileError(f"Component file `{path}` not found")
        values = np.fromfile(path, dtype=_RAW_DTYPE)
        if values.size != grid.npoints:
            raise ModelFileError(
                f"Size mismatch for `{name}`: manifest declares {grid.npoints} samples, "
                f"file holds {values.size}"
            )
        arrays[name] = values.astype(np.float32).reshape(grid.n)

    try:
        model = EarthModel.from_arrays(grid, **arrays)
    except ConfigurationError as err:
        raise ModelFileError(f"Invalid samples in `{manifest_path}`: {err}") from err
    LOGGER.info(f"Loaded model {grid.n} from {manifest_path} (vmin={model.vmin}, vmax={model.vmax})")
    return model


def save_model(model, manifest_path):
    """Writes `model` as one raw f32 volume per component plus a JSON manifest."""
    if not manifest_path:
        raise ValueError("Model manifest path must be a non-empty string.")
    stem = os.path.splitext(os.path.basename(manifest_path))[0]
    base = os.path.dirname(os.path.abspath(manifest_path))
    components = {}
    for name, field in model.components.items():
        filename = f"{stem}.{name}.f32"
        with atomic_write(os.path.join(base, filename)) as handle:
            handle.write(np.ascontiguousarray(field.interior, dtype=_RAW_DTYPE).tobytes())
        components[name] = filename

    manifest = {
        "n": list(model.grid.n),
        "d": list(model.grid.d),
        "components": components,
        "dtype": MANIFEST_DTYPE,
        "order": MANIFEST_ORDER,
    }
    with atomic_write(manifest_path, "w") as handle:
        json.dump(manifest, handle, indent=4)

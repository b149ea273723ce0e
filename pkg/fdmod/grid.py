"""
© 2026, fdmod developers
"""

import dataclasses
from collections import namedtuple

import numpy as np

from fdmod.utils import (
    DEFAULT_RADIUS,
    MATERIAL_COMPONENTS,
    WAVEFIELD_COMPONENTS,
    ConfigurationError,
    as_triple,
)

# Damping slab names in partition order: x faces, then y, then z. Top is the
# z = 0 side, which is the free-surface side when that option is enabled.
SLAB_NAMES = ("left", "right", "front", "back", "top", "bottom")


class Box(namedtuple("Box", ["lo", "hi"])):
    """Half-open index box `[lo, hi)` per axis, in interior (0-based) coordinates."""

    __slots__ = ()

    @property
    def shape(self):
        return tuple(max(h - l, 0) for l, h in zip(self.lo, self.hi))

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def is_empty(self):
        return self.size == 0

    def slices(self, radius):
        """Slices addressing this box inside an array carrying `radius` ghost points."""
        return tuple(slice(l + radius, h + radius) for l, h in zip(self.lo, self.hi))

    def intersect(self, other):
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(max(min(a, b), l) for a, b, l in zip(self.hi, other.hi, lo))
        return Box(lo, hi)

    def shift(self, offset):
        return Box(
            tuple(l + o for l, o in zip(self.lo, offset)),
            tuple(h + o for h, o in zip(self.hi, offset)),
        )

    def contains(self, index):
        return all(l <= i < h for i, l, h in zip(index, self.lo, self.hi))

    def split(self, axis, parts):
        """Splits the box into at most `parts` contiguous pieces along `axis`, low to high."""
        edges = np.linspace(self.lo[axis], self.hi[axis], max(parts, 1) + 1).round().astype(int)
        pieces = []
        for start, stop in zip(edges[:-1], edges[1:]):
            if stop <= start:
                continue
            lo, hi = list(self.lo), list(self.hi)
            lo[axis], hi[axis] = int(start), int(stop)
            pieces.append(Box(tuple(lo), tuple(hi)))
        return pieces


@dataclasses.dataclass(frozen=True)
class Grid3D:
    """Index space with spacing, staggering flags and ghost-shell width.

    Data arrays are C-ordered over `(x, y, z)` so that z varies fastest in memory.
    Interior index `(i, j, k)` lives at array position `(i + radius, j + radius, k + radius)`.
    """

    n: tuple
    d: tuple
    radius: int = DEFAULT_RADIUS
    stagger: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if any(v < 1 for v in self.n):
            raise ConfigurationError(f"Grid sizes must be >= 1, got {self.n}")
        if any(not v > 0 for v in self.d):
            raise ConfigurationError(f"Grid spacings must be > 0, got {self.d}")
        if self.radius < 1:
            raise ConfigurationError(f"Halo radius must be >= 1, got {self.radius}")
        if any(s not in (0.0, 0.5) for s in self.stagger):
            raise ConfigurationError(f"Stagger flags must be 0 or 1/2, got {self.stagger}")

    @property
    def shape(self):
        """Allocated extent per axis, ghost shells included."""
        return tuple(v + 2 * self.radius for v in self.n)

    @property
    def npoints(self):
        return int(np.prod(self.n))

    @property
    def interior(self):
        return Box((0, 0, 0), tuple(self.n))

    def flat_offset(self, i, j, k):
        """Flat position of interior index `(i, j, k)`; ghost indices run from -radius."""
        ex, ey, ez = self.shape
        r = self.radius
        for value, extent in zip((i, j, k), self.n):
            if not -r <= value < extent + r:
                raise IndexError(f"Index {(i, j, k)} outside allocated extent of {self.n}")
        return ((i + r) * ey + (j + r)) * ez + (k + r)

    def index_of(self, offset):
        """Inverse of :meth:`flat_offset`."""
        ix, iy, iz = np.unravel_index(offset, self.shape)
        r = self.radius
        return int(ix) - r, int(iy) - r, int(iz) - r

    def staggered(self, stagger):
        return dataclasses.replace(self, stagger=tuple(float(s) for s in stagger))


def make_grid(n, d, radius=DEFAULT_RADIUS, stagger=(0.0, 0.0, 0.0)):
    """Builds a :class:`Grid3D`.

    Parameters
    ----------
    n : int or sequence of int
        Interior points per axis.
    d : float or sequence of float
        Grid spacing per axis, in meters.
    radius : int, optional
        Ghost-shell width, by default 4
    stagger : sequence of float, optional
        Per-axis offset flag (0 or 1/2), by default node-centered.

    Returns
    -------
    Grid3D

    Raises
    ------
    ConfigurationError
        On non-positive sizes, spacings or radius.
    """
    return Grid3D(
        n=as_triple(n, "ngrid", int),
        d=as_triple(d, "dgrid", float),
        radius=int(radius),
        stagger=as_triple(stagger, "stagger", float),
    )


@dataclasses.dataclass
class Field:
    """One named scalar component stored over the allocated extent of its grid."""

    grid: Grid3D
    name: str
    data: np.ndarray

    def __post_init__(self):
        if self.name not in WAVEFIELD_COMPONENTS + MATERIAL_COMPONENTS:
            raise ConfigurationError(f"Unknown field component `{self.name}`")
        if self.data.shape != self.grid.shape:
            raise ConfigurationError(
                f"Field `{self.name}` has shape {self.data.shape}, grid needs {self.grid.shape}"
            )

    @classmethod
    def zeros(cls, grid, name, dtype=np.float32):
        return cls(grid, name, np.zeros(grid.shape, dtype=dtype))

    @classmethod
    def from_interior(cls, grid, name, values, dtype=np.float32):
        """Wraps interior values and fills the ghost shells by edge replication."""
        values = np.asarray(values, dtype=dtype).reshape(grid.n)
        return cls(grid, name, np.pad(values, grid.radius, mode="edge"))

    @property
    def interior(self):
        return self.data[self.grid.interior.slices(self.grid.radius)]

    def view(self, box):
        return self.data[box.slices(self.grid.radius)]

    def fill_ghosts_edge(self):
        self.data[...] = np.pad(self.interior, self.grid.radius, mode="edge")

    def fill_ghosts_periodic(self):
        self.data[...] = np.pad(self.interior, self.grid.radius, mode="wrap")

    def copy(self):
        return Field(self.grid, self.name, self.data.copy())


class RegionPartition(namedtuple("RegionPartition", ["inner", "slabs"])):
    """Inner box plus the six damping slabs, as an ordered `{name: Box}` mapping."""

    __slots__ = ()

    def boxes(self):
        yield "inner", self.inner
        yield from self.slabs.items()

    def restrict(self, box, offset):
        """Intersects every region with `box` (global coordinates) and shifts by `-offset`."""
        back = tuple(-o for o in offset)
        return RegionPartition(
            self.inner.intersect(box).shift(back),
            {name: slab.intersect(box).shift(back) for name, slab in self.slabs.items()},
        )


def partition_regions(grid, ndamping):
    """Splits the interior into the inner box and six damping slabs.

    The x slabs span the full y and z extents, the y slabs the inner x range and
    full z, and the z slabs the inner x and y ranges.

    Parameters
    ----------
    grid : Grid3D
    ndamping : int or sequence of int
        Damping layer width per axis.

    Returns
    -------
    RegionPartition

    Raises
    ------
    ConfigurationError
        If a damping layer pair leaves no inner points on some axis.
    """
    ndamping = as_triple(ndamping, "ndamping", int)
    for axis, (nd, n) in enumerate(zip(ndamping, grid.n)):
        if nd < 0 or 2 * nd >= n:
            raise ConfigurationError(
                f"Damping width {nd} too thick along axis {'xyz'[axis]} of size {n}"
            )
    (nx, ny, nz), (dx, dy, dz) = grid.n, ndamping
    x0, x1, y0, y1, z0, z1 = dx, nx - dx, dy, ny - dy, dz, nz - dz
    inner = Box((x0, y0, z0), (x1, y1, z1))
    slabs = {
        "left": Box((0, 0, 0), (x0, ny, nz)),
        "right": Box((x1, 0, 0), (nx, ny, nz)),
        "front": Box((x0, 0, 0), (x1, y0, nz)),
        "back": Box((x0, y1, 0), (x1, ny, nz)),
        "top": Box((x0, y0, 0), (x1, y1, z0)),
        "bottom": Box((x0, y0, z1), (x1, y1, nz)),
    }
    return RegionPartition(inner, slabs)

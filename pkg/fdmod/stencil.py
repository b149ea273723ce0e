"""
© 2026, fdmod developers

Finite-difference weights and their application to fields.

Staggered derivatives follow the Yee convention used throughout the package:
a half-node value at position ``i + 1/2`` is stored at array index ``i``.

* forward: integer-node input, half-node output,
  ``out[i] = sum_m c_m (f[i + m] - f[i - m + 1])``
* backward: half-node input, integer-node output,
  ``out[i] = sum_m c_m (f[i + m - 1] - f[i - m])``

The two are negative adjoints of each other on periodic grids.
"""

import dataclasses

import numpy as np
import scipy.linalg

from fdmod.utils import MAX_RADIUS, ConfigurationError

SECOND_COLLOCATED = "second-derivative-collocated"
FIRST_STAGGERED = "first-derivative-staggered"
FORWARD = "forward"
BACKWARD = "backward"


@dataclasses.dataclass(frozen=True)
class StencilCoeffs:
    """Weights `c_m`, m = 1..radius, already divided by the proper power of the spacing."""

    radius: int
    c: tuple
    kind: str
    spacing: float

    @property
    def center(self):
        if self.kind == SECOND_COLLOCATED:
            return -2.0 * sum(self.c)
        return 0.0

    def weights(self, dtype=np.float64):
        return np.asarray(self.c, dtype=dtype)

    def spectral_bound(self):
        """Upper bound on the spectral radius of the 1-D operator built from these weights."""
        total = sum(abs(c) for c in self.c)
        if self.kind == SECOND_COLLOCATED:
            return abs(self.center) + 2.0 * total
        return (2.0 * total) ** 2


def _check_request(radius, h):
    if not 1 <= radius <= MAX_RADIUS:
        raise ConfigurationError(f"Stencil radius must be in [1, {MAX_RADIUS}], got {radius}")
    if not h > 0:
        raise ConfigurationError(f"Stencil spacing must be > 0, got {h}")


def second_derivative_coeffs(radius, h):
    """Symmetric collocated second-derivative weights of order `2 * radius`.

    Solves ``sum_m c_m m^(2k) = delta_{k,1}`` for k = 1..radius, the Taylor
    conditions of ``sum_m c_m [f(x + m) + f(x - m) - 2 f(x)] = f''(x)``.

    Parameters
    ----------
    radius : int
        Number of weights per side, 1 to 8.
    h : float
        Grid spacing in meters.

    Returns
    -------
    StencilCoeffs
        Weights divided by `h**2`.

    Raises
    ------
    ConfigurationError
        On unsupported radius or non-positive spacing.
    """
    _check_request(radius, h)
    m = np.arange(1, radius + 1, dtype=np.float64)
    k = np.arange(1, radius + 1)
    matrix = m[np.newaxis, :] ** (2 * k[:, np.newaxis])
    rhs = np.zeros(radius)
    rhs[0] = 1.0
    c = scipy.linalg.solve(matrix, rhs)
    return StencilCoeffs(radius, tuple(float(v) for v in c / h ** 2), SECOND_COLLOCATED, float(h))


def staggered_first_derivative_coeffs(radius, h):
    """Staggered first-derivative weights for samples at offsets ``±(m - 1/2) h``.

    Solves ``sum_m 2 c_m (m - 1/2)^(2k - 1) = delta_{k,1}`` for k = 1..radius,
    which makes the operator exact for polynomials up to degree `2 * radius - 1`.
    """
    _check_request(radius, h)
    m = np.arange(1, radius + 1, dtype=np.float64) - 0.5
    k = np.arange(1, radius + 1)
    matrix = 2.0 * m[np.newaxis, :] ** (2 * k[:, np.newaxis] - 1)
    rhs = np.zeros(radius)
    rhs[0] = 1.0
    c = scipy.linalg.solve(matrix, rhs)
    return StencilCoeffs(radius, tuple(float(v) for v in c / h), FIRST_STAGGERED, float(h))


def from_weights(weights, kind, h):
    """Wraps user-supplied (e.g. dispersion-optimized) weights given for unit spacing."""
    if kind not in (SECOND_COLLOCATED, FIRST_STAGGERED):
        raise ConfigurationError(f"Unknown stencil kind `{kind}`")
    weights = tuple(float(w) for w in weights)
    _check_request(len(weights), h)
    power = 2 if kind == SECOND_COLLOCATED else 1
    return StencilCoeffs(len(weights), tuple(w / h ** power for w in weights), kind, float(h))


def shifted(data, sl, axis, offset):
    """View of `data[sl]` moved by `offset` points along `axis`."""
    moved = list(sl)
    moved[axis] = slice(sl[axis].start + offset, sl[axis].stop + offset)
    return data[tuple(moved)]


def second_derivative(data, coeffs, axis, sl):
    """Collocated second derivative along `axis` of `data` over the region `sl`.

    Accumulates ``c_1 t_1 + c_2 t_2 + ...`` left to right with
    ``t_m = data(+m) + data(-m) - 2 data(0)``.
    """
    center = data[sl]
    acc = None
    for m, c in enumerate(coeffs.weights(data.dtype), start=1):
        term = c * (shifted(data, sl, axis, m) + shifted(data, sl, axis, -m) - 2 * center)
        acc = term if acc is None else acc + term
    return acc


def staggered_derivative(data, coeffs, axis, forward, sl):
    """Staggered first derivative along `axis`; see the module docstring for the layout."""
    acc = None
    for m, c in enumerate(coeffs.weights(data.dtype), start=1):
        if forward:
            term = c * (shifted(data, sl, axis, m) - shifted(data, sl, axis, 1 - m))
        else:
            term = c * (shifted(data, sl, axis, m - 1) - shifted(data, sl, axis, -m))
        acc = term if acc is None else acc + term
    return acc


def laplacian(data, coeffs, sl):
    """Sum of the three axis second derivatives, associated as ``(Lx + Ly) + Lz``."""
    lx, ly, lz = (second_derivative(data, coeffs[axis], axis, sl) for axis in range(3))
    return (lx + ly) + lz


def _check_box(field, box, radius):
    if not all(0 <= l and h <= n for l, h, n in zip(box.lo, box.hi, field.grid.n)):
        raise ValueError(f"Box {box} exceeds the interior {field.grid.n}")
    if field.grid.radius < radius:
        raise ValueError(
            f"Field `{field.name}` carries {field.grid.radius} ghost points, stencil needs {radius}"
        )


def apply_laplacian(p, coeffs, out, box):
    """Writes the collocated Laplacian of `p` into `out` over `box`.

    Parameters
    ----------
    p : Field
        Input field with populated ghost shells.
    coeffs : sequence of StencilCoeffs
        Second-derivative weights for the x, y and z axes.
    out : Field
        Output field on the same grid; points outside `box` are untouched.
    box : Box
        Interior index box.
    """
    _check_box(p, box, max(c.radius for c in coeffs))
    sl = box.slices(p.grid.radius)
    out.data[sl] = laplacian(p.data, coeffs, sl)


def apply_staggered_derivative(f, axis, direction, coeffs, out, box):
    """Writes the forward or backward staggered derivative of `f` along `axis` into `out`."""
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"Direction must be `{FORWARD}` or `{BACKWARD}`, got `{direction}`")
    _check_box(f, box, coeffs.radius)
    sl = box.slices(f.grid.radius)
    out.data[sl] = staggered_derivative(f.data, coeffs, axis, direction == FORWARD, sl)

"""
© 2026, fdmod developers
"""

import dataclasses

import numpy as np

from fdmod.stencil import staggered_derivative
from fdmod.utils import KAPPA_MAX, NPOWER, R_TARGET, ConfigurationError, as_triple

# Top-plane rules: zero on the plane with an odd mirror, or a mirror about the
# half-node plane z = -1/2 for components stored at k + 1/2.
FREE_SURFACE_RULES = {
    "p": "odd-node",
    "szz": "odd-node",
    "vz": "even-half",
    "sxz": "odd-half",
    "syz": "odd-half",
}


def grading(xi, length, d0, alpha_max, kappa_max=KAPPA_MAX, npower=NPOWER):
    """Damping `d`, frequency shift `alpha` and stretch `kappa` at depth `xi` into a layer."""
    ratio = np.clip(np.asarray(xi, dtype=np.float64) / length, 0.0, 1.0)
    d = d0 * ratio ** npower
    alpha = alpha_max * (1.0 - ratio)
    kappa = 1.0 + (kappa_max - 1.0) * ratio ** npower
    return d, alpha, kappa


def recurrence(d, alpha, kappa, dt):
    """Recursive-convolution coefficients `(a, b)`; `a` is zero wherever `d` vanishes."""
    d, alpha, kappa = (np.asarray(v, dtype=np.float64) for v in (d, alpha, kappa))
    b = np.exp(-(d / kappa + alpha) * dt)
    a = np.zeros_like(b)
    damped = np.abs(d) > 1e-6
    a[damped] = d[damped] * (b[damped] - 1.0) / (
        kappa[damped] * (d[damped] + kappa[damped] * alpha[damped])
    )
    return a, b


@dataclasses.dataclass
class CpmlProfile:
    """Per-axis CPML coefficients over the full axis, on integer and half nodes.

    `nodes[axis][grid]` maps `"d"`, `"alpha"`, `"kappa"`, `"a"` and `"b"` to arrays of
    length `n[axis]`, where `grid` is `"int"` or `"half"` (half node `i + 1/2` at index `i`).
    Outside the layers ``d = alpha = a = 0`` and ``kappa = b = 1``.
    """

    n: tuple
    ndamping: tuple
    dt: float
    d0: tuple
    nodes: list

    def coefficients(self, axis, lo, hi, half=False, dtype=np.float32):
        """`(a, b, kappa)` over global indices `[lo, hi)` shaped to broadcast along `axis`."""
        table = self.nodes[axis]["half" if half else "int"]
        shape = [1, 1, 1]
        shape[axis] = hi - lo
        return tuple(table[key][lo:hi].astype(dtype).reshape(shape) for key in ("a", "b", "kappa"))

    def layer(self, axis, side, half=False):
        """Coefficient arrays restricted to the low (`side=0`) or high (`side=1`) layer."""
        nd, n = self.ndamping[axis], self.n[axis]
        sl = slice(0, nd) if side == 0 else slice(n - nd, n)
        table = self.nodes[axis]["half" if half else "int"]
        return {key: values[sl] for key, values in table.items()}


def _axis_depths(n, nd, h, half):
    """Distance into the layer of every node; zero inside the inner region."""
    pos = np.arange(n, dtype=np.float64) + (0.5 if half else 0.0)
    low = np.clip(nd - pos, 0.0, None)
    high = np.clip(pos - (n - 1 - nd), 0.0, None)
    return np.minimum(np.maximum(low, high), nd) * h if nd > 0 else np.zeros(n)


def build_profile(grid, ndamping, fmax, vmax, dt, r_target=R_TARGET, free_surface=False):
    """Builds quadratic-graded CPML coefficients for all three axes.

    Parameters
    ----------
    grid : Grid3D
    ndamping : int or sequence of int
        Layer width per axis; 0 leaves that axis undamped.
    fmax : float
        Maximum frequency in Hz; the frequency shift peaks at ``pi * fmax``.
    vmax : float
        Maximum velocity in m/s.
    dt : float
        Time step in seconds.
    r_target : float, optional
        Theoretical normal-incidence reflection coefficient, by default 1e-3
    free_surface : bool, optional
        Leaves the top (z = 0) side undamped, by default False

    Returns
    -------
    CpmlProfile

    Raises
    ------
    ConfigurationError
        If `r_target` is outside (0, 1) or a width is negative.
    """
    ndamping = as_triple(ndamping, "ndamping", int)
    if not 0.0 < r_target < 1.0:
        raise ConfigurationError(f"CPML reflection target must be in (0, 1), got {r_target}")
    if any(nd < 0 for nd in ndamping):
        raise ConfigurationError(f"Damping widths must be >= 0, got {ndamping}")

    alpha_max = np.pi * fmax
    nodes, d0s = [], []
    for axis, (n, nd, h) in enumerate(zip(grid.n, ndamping, grid.d)):
        length = nd * h
        d0 = -(NPOWER + 1) * vmax * np.log(r_target) / (2.0 * length) if nd > 0 else 0.0
        d0s.append(float(d0))
        tables = {}
        for key, half in (("int", False), ("half", True)):
            xi = _axis_depths(n, nd, h, half)
            if free_surface and axis == 2:
                pos = np.arange(n) + (0.5 if half else 0.0)
                xi[pos < n / 2] = 0.0
            inside = xi > 0
            d, alpha, kappa = grading(xi, max(length, h), d0, alpha_max)
            d, alpha, kappa = np.where(inside, d, 0.0), np.where(inside, alpha, 0.0), np.where(inside, kappa, 1.0)
            a, b = recurrence(d, alpha, kappa, dt)
            tables[key] = {"d": d, "alpha": alpha, "kappa": kappa, "a": a, "b": b}
        nodes.append(tables)
    return CpmlProfile(tuple(grid.n), ndamping, float(dt), tuple(d0s), nodes)


def degenerate_profile(grid, dt):
    """Profile with no damping anywhere; slab updates then reduce to the plain stencil."""
    return build_profile(grid, (0, 0, 0), fmax=1.0, vmax=1.0, dt=dt)


class CpmlMemory:
    """Memory variables keyed by `(slab, term)`, allocated lazily over slab boxes."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._arrays = {}

    def get(self, key, shape):
        if key not in self._arrays:
            self._arrays[key] = np.zeros(shape, dtype=self.dtype)
        return self._arrays[key]

    def __contains__(self, key):
        return key in self._arrays

    def __len__(self):
        return len(self._arrays)

    @property
    def nbytes(self):
        return sum(array.nbytes for array in self._arrays.values())

    def is_finite(self):
        return all(np.isfinite(array).all() for array in self._arrays.values())


def stretch(memory, key, deriv, a, b, kappa):
    """First-order CPML: returns ``deriv / kappa + psi`` after ``psi <- b psi + a deriv``."""
    psi = memory.get(key, deriv.shape)
    psi[...] = b * psi + a * deriv
    return deriv / kappa + psi


def stretch_second(memory, key, p, lxx, dcoeffs, axis, box, radius, profile, offset=(0, 0, 0)):
    """Second-order CPML term along `axis` over `box` of the padded array `p`.

    * ``psi  <- b_half psi + a_half D+ p``
    * ``u     = lxx / kappa + D- psi``
    * ``zeta <- b zeta + a u``
    * result ``u / kappa + zeta``

    ``psi`` lives on half nodes over `box` widened by the stencil radius along
    `axis`, so neighbouring slabs each hold their own identical copy of the
    overlap. The widening stops at the global grid edge, past which half nodes
    read as zero, and at the ghost shell: a local box reaching into a
    neighbour's layer needs ghosts twice the stencil radius wide.

    Parameters
    ----------
    memory : CpmlMemory
    key : tuple
        `(slab, term)` prefix of the memory variables.
    p : np.ndarray
        Padded field carrying `radius` ghost points.
    lxx : np.ndarray
        Plain second derivative along `axis` over `box`.
    dcoeffs : StencilCoeffs
        Staggered first-derivative weights for `axis`.
    axis : int
    box : Box
        Local interior box.
    radius : int
        Ghost width of `p`.
    profile : CpmlProfile
    offset : tuple, optional
        Global index of the local origin, by default (0, 0, 0)
    """
    r = dcoeffs.radius
    n = p.shape[axis] - 2 * radius
    reach, glo = radius - r, offset[axis]
    lo = max(box.lo[axis] - r, -glo, -reach)
    hi = min(box.hi[axis] + r, profile.n[axis] - glo, n + reach)
    wide_lo, wide_hi = list(box.lo), list(box.hi)
    wide_lo[axis], wide_hi[axis] = lo, hi
    wide = type(box)(tuple(wide_lo), tuple(wide_hi))

    shape = list(wide.shape)
    shape[axis] += 2 * r
    psi = memory.get(key + ("psi",), tuple(shape))
    core = [slice(None)] * 3
    core[axis] = slice(r, r + hi - lo)
    rows = [slice(None)] * 3
    start = r + box.lo[axis] - lo
    rows[axis] = slice(start, start + box.shape[axis])

    glo = offset[axis]
    a_half, b_half, _ = profile.coefficients(axis, lo + glo, hi + glo, half=True, dtype=lxx.dtype)
    dp = staggered_derivative(p, dcoeffs, axis, True, wide.slices(radius))
    psi[tuple(core)] = b_half * psi[tuple(core)] + a_half * dp
    dpsi = staggered_derivative(psi, dcoeffs, axis, False, tuple(rows))

    a, b, kappa = profile.coefficients(
        axis, box.lo[axis] + glo, box.hi[axis] + glo, dtype=lxx.dtype
    )
    u = lxx / kappa + dpsi
    zeta = memory.get(key + ("zeta",), lxx.shape)
    zeta[...] = b * zeta + a * u
    return u / kappa + zeta


def apply_free_surface(fields):
    """Imposes the top (z = 0) free-surface condition on the named fields.

    Parameters
    ----------
    fields : dict
        Mapping of component name to Field; names without a rule are left alone.
    """
    for name, field in fields.items():
        rule = FREE_SURFACE_RULES.get(name)
        if rule is None:
            continue
        data, r = field.data, field.grid.radius
        depth = min(r, field.grid.n[2] - 1)
        if rule == "odd-node":
            data[:, :, r] = 0
            for m in range(1, depth + 1):
                data[:, :, r - m] = -data[:, :, r + m]
        else:
            sign = -1 if rule == "odd-half" else 1
            for m in range(min(r, field.grid.n[2])):
                data[:, :, r - 1 - m] = sign * data[:, :, r + m]

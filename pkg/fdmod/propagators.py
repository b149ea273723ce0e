"""
© 2026, fdmod developers

Wave-equation kernels. Each propagator advances its state by one time step:
the inner box is tiled by the executor and updated with the plain stencil, the
six damping slabs are updated with CPML-stretched derivatives, and every
executor call acts as a barrier between derivative-dependent phases.
"""

import dataclasses
import functools
import time

import numpy as np

from fdmod.acquisition import inject_source
from fdmod.cpml import CpmlMemory, apply_free_surface, stretch, stretch_second
from fdmod.grid import Field
from fdmod.model import lame_parameters
from fdmod.stencil import (
    laplacian,
    second_derivative,
    second_derivative_coeffs,
    staggered_derivative,
    staggered_first_derivative_coeffs,
)
from fdmod.utils import ConfigurationError, as_triple

VELOCITIES = ("vx", "vy", "vz")
STRESSES = ("sxx", "syy", "szz", "syz", "sxz", "sxy")


@dataclasses.dataclass
class AcousticCdState:
    """Pressure at time levels n - 1, n and n + 1."""

    p_prev: Field
    p_cur: Field
    p_next: Field
    dt: float

    @classmethod
    def zeros(cls, grid, dt, dtype=np.float32):
        return cls(*(Field.zeros(grid, "p", dtype) for _ in range(3)), dt=dt)

    def rotate(self):
        self.p_prev, self.p_cur, self.p_next = self.p_cur, self.p_next, self.p_prev

    @property
    def fields(self):
        return {"p": self.p_cur}


@dataclasses.dataclass
class AcousticVdState:
    """Cell-centred pressure and face-centred velocities on a Yee grid."""

    p: Field
    vx: Field
    vy: Field
    vz: Field
    dt: float

    @classmethod
    def zeros(cls, grid, dt, dtype=np.float32):
        staggers = {"p": (0, 0, 0), "vx": (0.5, 0, 0), "vy": (0, 0.5, 0), "vz": (0, 0, 0.5)}
        fields = {
            name: Field.zeros(grid.staggered(stagger), name, dtype) for name, stagger in staggers.items()
        }
        return cls(**fields, dt=dt)

    @property
    def fields(self):
        return {name: getattr(self, name) for name in ("p",) + VELOCITIES}


@dataclasses.dataclass
class ElasticState:
    """Voigt stresses and velocities; normal stresses cell-centred, shear stresses on edges."""

    sxx: Field
    syy: Field
    szz: Field
    syz: Field
    sxz: Field
    sxy: Field
    vx: Field
    vy: Field
    vz: Field
    dt: float

    @classmethod
    def zeros(cls, grid, dt, dtype=np.float32):
        staggers = {
            "sxx": (0, 0, 0),
            "syy": (0, 0, 0),
            "szz": (0, 0, 0),
            "syz": (0, 0.5, 0.5),
            "sxz": (0.5, 0, 0.5),
            "sxy": (0.5, 0.5, 0),
            "vx": (0.5, 0, 0),
            "vy": (0, 0.5, 0),
            "vz": (0, 0, 0.5),
        }
        fields = {
            name: Field.zeros(grid.staggered(stagger), name, dtype) for name, stagger in staggers.items()
        }
        return cls(**fields, dt=dt)

    @property
    def fields(self):
        return {name: getattr(self, name) for name in STRESSES + VELOCITIES}


def acoustic_cd_update(p, prev, out, scale, lap, sl):
    """``out = 2 p - prev + scale lap`` over the region `sl`."""
    out[sl] = 2 * p[sl] - prev[sl] + scale[sl] * lap


def _derivatives(arrays, dcoeffs, sl, stretched):
    def d(name, axis, forward):
        deriv = staggered_derivative(arrays[name], dcoeffs[axis], axis, forward, sl)
        return deriv if stretched is None else stretched(deriv, name, axis, forward)

    return d


def strain_rates(v, dcoeffs, sl, stretched=None):
    """Rows of `D v` over `sl`: normal strain rates and engineering shear strain rates.

    Parameters
    ----------
    v : dict
        Padded arrays `vx`, `vy` and `vz`.
    dcoeffs : sequence of StencilCoeffs
        Staggered weights per axis.
    sl : tuple of slice
    stretched : callable, optional
        `(deriv, name, axis, forward) -> deriv`, applied to every derivative
        before it is combined, e.g. the CPML stretch inside a damping slab.

    Returns
    -------
    dict
        Arrays keyed by the stress component they drive.
    """
    d = _derivatives(v, dcoeffs, sl, stretched)
    return {
        "sxx": d("vx", 0, False),
        "syy": d("vy", 1, False),
        "szz": d("vz", 2, False),
        "syz": d("vy", 2, True) + d("vz", 1, True),
        "sxz": d("vx", 2, True) + d("vz", 0, True),
        "sxy": d("vx", 1, True) + d("vy", 0, True),
    }


def stress_divergence(s, dcoeffs, sl, stretched=None):
    """Rows of `D^t sigma` over `sl`, keyed by velocity component; see :func:`strain_rates`."""
    d = _derivatives(s, dcoeffs, sl, stretched)
    return {
        "vx": (d("sxx", 0, True) + d("sxy", 1, False)) + d("sxz", 2, False),
        "vy": (d("sxy", 0, False) + d("syy", 1, True)) + d("syz", 2, False),
        "vz": (d("sxz", 0, False) + d("syz", 1, False)) + d("szz", 2, True),
    }


def _face_average(values, axis):
    """Arithmetic mean of the two cells sharing each face ``i + 1/2`` along `axis`."""
    out = values.copy()
    lo, hi = [slice(None)] * 3, [slice(None)] * 3
    lo[axis], hi[axis] = slice(0, -1), slice(1, None)
    out[tuple(lo)] = 0.5 * (values[tuple(lo)] + values[tuple(hi)])
    return out


def _edge_harmonic(values, axes):
    """Harmonic mean of the four cells around each edge; zero if any of them is zero."""
    base = [slice(None)] * 3
    for axis in axes:
        base[axis] = slice(0, -1)
    cells = []
    for s0 in (0, 1):
        for s1 in (0, 1):
            sl = list(base)
            for axis, shift in zip(axes, (s0, s1)):
                sl[axis] = slice(shift, values.shape[axis] - 1 + shift)
            cells.append(values[tuple(sl)])
    out = values.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        harmonic = 4.0 / sum(1.0 / cell for cell in cells)
    positive = np.all([cell > 0 for cell in cells], axis=0)
    out[tuple(base)] = np.where(positive, harmonic, 0.0)
    return out


class Propagator:
    """Shared machinery: stencils, region bookkeeping, CPML memory and timing.

    Parameters
    ----------
    model : EarthModel
    dt : float
        Time step in seconds.
    partition : RegionPartition
        Inner box and damping slabs in local coordinates.
    profile : CpmlProfile
        Coefficients over the global grid.
    stencil : int or sequence of int, optional
        Stencil radius per axis, by default 4
    dtype : np.dtype, optional
        Wavefield precision, by default np.float32
    free_surface : bool, optional
        Imposes the free-surface condition on the z = 0 plane, by default False
    offset : sequence of int, optional
        Global index of the local origin, by default (0, 0, 0)
    """

    name = None
    source_integrated = True

    def __init__(
        self,
        model,
        dt,
        partition,
        profile,
        stencil=4,
        dtype=np.float32,
        free_surface=False,
        offset=(0, 0, 0),
    ):
        self.model = model
        self.grid = model.grid
        self.dt = float(dt)
        self.partition = partition
        self.profile = profile
        self.stencil = as_triple(stencil, "stencil", int)
        self.dtype = np.dtype(dtype)
        self.free_surface = free_surface
        self.offset = as_triple(offset, "offset", int)
        if max(self.stencil) > self.grid.radius:
            raise ConfigurationError(
                f"Stencil radius {self.stencil} exceeds the ghost width {self.grid.radius}"
            )
        self.dcoeffs = [
            staggered_first_derivative_coeffs(r, h) for r, h in zip(self.stencil, self.grid.d)
        ]
        self.memory = CpmlMemory(self.dtype)
        self.timings = {"inner": 0.0, "pml": 0.0}
        self._cpml_cache = {}

    def source_time_function(self, wavelet):
        """Samples injected at each step: the running integral for first-order systems."""
        return wavelet.integrated() if self.source_integrated else wavelet

    def _material(self, values):
        return np.asarray(values, dtype=np.float64).astype(self.dtype)

    def _cpml(self, axis, box, half):
        key = (axis, box.lo[axis], box.hi[axis], half)
        if key not in self._cpml_cache:
            glo = self.offset[axis]
            self._cpml_cache[key] = self.profile.coefficients(
                axis, box.lo[axis] + glo, box.hi[axis] + glo, half=half, dtype=self.dtype
            )
        return self._cpml_cache[key]

    def _stretched(self, slab, term, deriv, axis, box, forward):
        """First-order CPML on a derivative; forward derivatives sit on half nodes."""
        a, b, kappa = self._cpml(axis, box, half=forward)
        return stretch(self.memory, (slab, term), deriv, a, b, kappa)

    def _phase(self, executor, inner_task, slab_task):
        """Runs one update phase: inner tiles, then the non-empty slabs, each timed."""
        tiles = executor.tiles(self.partition.inner) if not self.partition.inner.is_empty else []
        start = time.perf_counter()
        executor.run([functools.partial(inner_task, tile) for tile in tiles])
        middle = time.perf_counter()
        executor.run(
            [
                functools.partial(slab_task, name, box)
                for name, box in self.partition.slabs.items()
                if not box.is_empty
            ]
        )
        self.timings["inner"] += middle - start
        self.timings["pml"] += time.perf_counter() - middle

    def is_finite(self, state):
        return all(np.isfinite(f.data).all() for f in state.fields.values()) and self.memory.is_finite()


class AcousticIsoCd(Propagator):
    """Second-order constant-density acoustic wave equation on a collocated grid.

    ``p_next = 2 p - p_prev + dt^2 vp^2 lap(p)``, followed by injection of
    ``dt^2 vp^2 w`` at the source and a buffer rotation.
    """

    name = "acoustic_iso_cd"
    source_integrated = False

    def __init__(self, model, dt, partition, profile, **kwargs):
        super().__init__(model, dt, partition, profile, **kwargs)
        self.coeffs = [second_derivative_coeffs(r, h) for r, h in zip(self.stencil, self.grid.d)]
        self.scale = self._material(self.dt ** 2 * model.vp.data.astype(np.float64) ** 2)

    def new_state(self):
        return AcousticCdState.zeros(self.grid, self.dt, self.dtype)

    def pressure_field(self, state):
        return state.p_cur

    def _update_inner(self, state, box):
        sl = box.slices(self.grid.radius)
        p = state.p_cur.data
        acoustic_cd_update(p, state.p_prev.data, state.p_next.data, self.scale, laplacian(p, self.coeffs, sl), sl)

    def _update_slab(self, state, name, box):
        sl = box.slices(self.grid.radius)
        p = state.p_cur.data
        terms = [
            stretch_second(
                self.memory,
                (name, "xyz"[axis]),
                p,
                second_derivative(p, self.coeffs[axis], axis, sl),
                self.dcoeffs[axis],
                axis,
                box,
                self.grid.radius,
                self.profile,
                self.offset,
            )
            for axis in range(3)
        ]
        lap = (terms[0] + terms[1]) + terms[2]
        acoustic_cd_update(p, state.p_prev.data, state.p_next.data, self.scale, lap, sl)

    def step(self, state, executor, source=None):
        """Advances `state` by one step; `source` is `(loc, amplitude)` in local coordinates."""
        self._phase(
            executor,
            functools.partial(self._update_inner, state),
            functools.partial(self._update_slab, state),
        )
        if source is not None:
            loc, amplitude = source
            r = self.grid.radius
            inject_source(state.p_next, amplitude, loc, self.scale[tuple(i + r for i in loc)])
        if self.free_surface:
            apply_free_surface({"p": state.p_next})
        state.rotate()


class AcousticIso(Propagator):
    """First-order variable-density acoustic system on a staggered grid.

    ``v_a += dt / rho_a D+_a p`` then ``p += dt rho vp^2 div v``; `rho_a` is the
    arithmetic mean of the two cells sharing a face.
    """

    name = "acoustic_iso"

    def __init__(self, model, dt, partition, profile, **kwargs):
        if model.rho is None:
            raise ConfigurationError(f"Propagator `{self.name}` needs a density model")
        super().__init__(model, dt, partition, profile, **kwargs)
        rho = model.rho.data.astype(np.float64)
        vp = model.vp.data.astype(np.float64)
        self.buoyancy = [self._material(self.dt / _face_average(rho, axis)) for axis in range(3)]
        self.modulus = self._material(self.dt * rho * vp ** 2)

    def new_state(self):
        return AcousticVdState.zeros(self.grid, self.dt, self.dtype)

    def pressure_field(self, state):
        return state.p

    def _velocity(self, state, box, slab=None):
        sl = box.slices(self.grid.radius)
        p = state.p.data
        for axis, name in enumerate(VELOCITIES):
            deriv = staggered_derivative(p, self.dcoeffs[axis], axis, True, sl)
            if slab is not None:
                deriv = self._stretched(slab, f"p:{'xyz'[axis]}", deriv, axis, box, True)
            getattr(state, name).data[sl] += self.buoyancy[axis][sl] * deriv

    def _pressure(self, state, box, slab=None):
        sl = box.slices(self.grid.radius)
        terms = []
        for axis, name in enumerate(VELOCITIES):
            deriv = staggered_derivative(getattr(state, name).data, self.dcoeffs[axis], axis, False, sl)
            if slab is not None:
                deriv = self._stretched(slab, f"{name}:{'xyz'[axis]}", deriv, axis, box, False)
            terms.append(deriv)
        state.p.data[sl] += self.modulus[sl] * ((terms[0] + terms[1]) + terms[2])

    def step(self, state, executor, source=None):
        self._phase(
            executor,
            functools.partial(self._velocity, state),
            lambda name, box: self._velocity(state, box, name),
        )
        if self.free_surface:
            apply_free_surface({"vz": state.vz})
        self._phase(
            executor,
            functools.partial(self._pressure, state),
            lambda name, box: self._pressure(state, box, name),
        )
        if source is not None:
            loc, amplitude = source
            r = self.grid.radius
            inject_source(state.p, amplitude, loc, self.modulus[tuple(i + r for i in loc)])
        if self.free_surface:
            apply_free_surface({"p": state.p})


class ElasticIso(Propagator):
    """Isotropic elastic velocity-stress system on a Yee grid.

    ``v += dt / rho D^t sigma`` then ``sigma += dt C D v`` with isotropic `C`.
    The source is an explosion: each normal stress drops by ``dt K f`` with the
    bulk modulus `K`, so ``-(sxx + syy + szz) / 3`` grows like the acoustic pressure.
    """

    name = "elastic_iso"

    def __init__(self, model, dt, partition, profile, **kwargs):
        if model.vs is None or model.rho is None:
            raise ConfigurationError(f"Propagator `{self.name}` needs vs and rho in the model")
        super().__init__(model, dt, partition, profile, **kwargs)
        lam, mu = (f.data for f in lame_parameters(model))
        rho = model.rho.data.astype(np.float64)
        self.buoyancy = [self._material(self.dt / _face_average(rho, axis)) for axis in range(3)]
        self.lam = self._material(self.dt * lam)
        self.l2m = self._material(self.dt * (lam + 2.0 * mu))
        self.mu = {
            "syz": self._material(self.dt * _edge_harmonic(mu, (1, 2))),
            "sxz": self._material(self.dt * _edge_harmonic(mu, (0, 2))),
            "sxy": self._material(self.dt * _edge_harmonic(mu, (0, 1))),
        }
        self.source_scale = self._material(self.dt * (lam + 2.0 * mu / 3.0))

    def new_state(self):
        return ElasticState.zeros(self.grid, self.dt, self.dtype)

    def pressure_field(self, state):
        total = (state.sxx.data + state.syy.data) + state.szz.data
        return Field(self.grid, "p", total / self.dtype.type(-3))

    def _stretch(self, slab, box):
        """CPML hook for the derivative helpers, None in the inner box."""
        if slab is None:
            return None

        def stretched(deriv, name, axis, forward):
            return self._stretched(slab, f"{name}:{'xyz'[axis]}", deriv, axis, box, forward)

        return stretched

    def _velocity(self, state, box, slab=None):
        sl = box.slices(self.grid.radius)
        s = {name: getattr(state, name).data for name in STRESSES}
        updates = stress_divergence(s, self.dcoeffs, sl, self._stretch(slab, box))
        for axis, name in enumerate(VELOCITIES):
            getattr(state, name).data[sl] += self.buoyancy[axis][sl] * updates[name]

    def _stress(self, state, box, slab=None):
        sl = box.slices(self.grid.radius)
        v = {name: getattr(state, name).data for name in VELOCITIES}
        rates = strain_rates(v, self.dcoeffs, sl, self._stretch(slab, box))
        exx, eyy, ezz = rates["sxx"], rates["syy"], rates["szz"]
        l2m, lam = self.l2m[sl], self.lam[sl]
        state.sxx.data[sl] += l2m * exx + lam * (eyy + ezz)
        state.syy.data[sl] += l2m * eyy + lam * (exx + ezz)
        state.szz.data[sl] += l2m * ezz + lam * (exx + eyy)
        for name in ("syz", "sxz", "sxy"):
            getattr(state, name).data[sl] += self.mu[name][sl] * rates[name]

    def step(self, state, executor, source=None):
        self._phase(
            executor,
            functools.partial(self._velocity, state),
            lambda name, box: self._velocity(state, box, name),
        )
        self._phase(
            executor,
            functools.partial(self._stress, state),
            lambda name, box: self._stress(state, box, name),
        )
        if source is not None:
            loc, amplitude = source
            r = self.grid.radius
            scale = self.source_scale[tuple(i + r for i in loc)]
            for name in ("sxx", "syy", "szz"):
                inject_source(getattr(state, name), -amplitude, loc, scale)
        if self.free_surface:
            apply_free_surface({name: getattr(state, name) for name in ("szz", "sxz", "syz")})


PROPAGATORS = {cls.name: cls for cls in (AcousticIsoCd, AcousticIso, ElasticIso)}


def make_propagator(name, model, dt, partition, profile, **kwargs):
    """Instantiates the propagator registered under `name`.

    Raises
    ------
    ConfigurationError
        If `name` is unknown or the model lacks a required component.
    """
    if name not in PROPAGATORS:
        raise ConfigurationError(
            f"Unknown propagator `{name}`, valid choices are {', '.join(PROPAGATORS)}"
        )
    return PROPAGATORS[name](model, dt, partition, profile, **kwargs)

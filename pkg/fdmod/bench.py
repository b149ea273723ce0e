"""
© 2026, fdmod developers
"""

import dataclasses
import json
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from tqdm import tqdm  # noqa: E402

from fdmod.distexec import balanced_dims, make_transport, run_distributed  # noqa: E402
from fdmod.driver import run  # noqa: E402
from fdmod.utils import (  # noqa: E402
    LOGGER,
    PROPAGATORS,
    WORD_SIZE,
    ConfigurationError,
    InstabilityError,
    TransportError,
    as_triple,
    atomic_write,
)

CSV_COLUMNS = [
    "run_id",
    "propagator",
    "target",
    "ranks",
    "nthreads",
    "nx",
    "ny",
    "nz",
    "nsteps",
    "kernel_s",
    "modeling_s",
    "points_per_s",
    "efficiency_pct",
]

# Compulsory traffic per grid point: every array read or written once per step.
TRAFFIC = {
    "acoustic_iso_cd": {"read": ("p_cur", "p_prev", "vp"), "write": ("p_next",)},
    "acoustic_iso": {
        "read": ("p", "vx", "vy", "vz", "bx", "by", "bz", "K"),
        "write": ("p", "vx", "vy", "vz"),
    },
    "elastic_iso": {
        "read": (
            "sxx", "syy", "szz", "syz", "sxz", "sxy", "vx", "vy", "vz",
            "bx", "by", "bz", "lambda", "l2m", "mu_yz", "mu_xz", "mu_xy",
        ),
        "write": ("sxx", "syy", "szz", "syz", "sxz", "sxy", "vx", "vy", "vz"),
    },
}

STRONG_RANKS = (8, 16, 32, 64, 128, 256)
WEAK_BASE = 1000
STRONG_SIZE = 1024
NODE_SIZE = 240
PRACTICAL_MULTIPLE = 64


@dataclasses.dataclass(frozen=True)
class Expr:
    """Node of a symbolic kernel expression; leaves are loads and constants."""

    op: str
    args: tuple = ()
    label: str = ""

    def __add__(self, other):
        return Expr("+", (self, _wrap(other)))

    def __radd__(self, other):
        return Expr("+", (_wrap(other), self))

    def __sub__(self, other):
        return Expr("-", (self, _wrap(other)))

    def __rsub__(self, other):
        return Expr("-", (_wrap(other), self))

    def __mul__(self, other):
        return Expr("*", (self, _wrap(other)))

    def __rmul__(self, other):
        return Expr("*", (_wrap(other), self))


def _wrap(value):
    return value if isinstance(value, Expr) else Expr("const", label=repr(value))


def load(name):
    return Expr("load", label=name)


def count_flops(expr):
    """Arithmetic nodes in `expr`; loads and constants are free."""
    if expr.op in ("load", "const"):
        return 0
    return 1 + sum(count_flops(arg) for arg in expr.args)


def _accumulate(terms):
    acc = None
    for term in terms:
        acc = term if acc is None else acc + term
    return acc


def second_derivative_expr(field, axis, radius):
    """Mirrors the collocated second-derivative kernel: ``c_m (f(+m) + f(-m) - 2 f)``."""
    center = load(field)
    return _accumulate(
        load(f"c{m}") * (load(f"{field}[{axis}+{m}]") + load(f"{field}[{axis}-{m}]") - 2 * center)
        for m in range(1, radius + 1)
    )


def staggered_derivative_expr(field, axis, radius):
    """Mirrors the staggered first-derivative kernel: ``c_m (f(+a) - f(-b))``."""
    return _accumulate(
        load(f"c{m}") * (load(f"{field}[{axis}+{m}]") - load(f"{field}[{axis}-{m}]"))
        for m in range(1, radius + 1)
    )


def kernel_expressions(propagator, radius):
    """Per-point update expressions of one time step of `propagator`."""
    rx, ry, rz = as_triple(radius, "stencil", int)
    radii = (rx, ry, rz)
    if propagator == "acoustic_iso_cd":
        lx, ly, lz = (second_derivative_expr("p", axis, r) for axis, r in enumerate(radii))
        lap = (lx + ly) + lz
        return [2 * load("p") - load("p_prev") + load("scale") * lap]
    if propagator == "acoustic_iso":
        velocity = [
            load(v) + load(f"b{'xyz'[axis]}") * staggered_derivative_expr("p", axis, r)
            for axis, (v, r) in enumerate(zip(("vx", "vy", "vz"), radii))
        ]
        dx, dy, dz = (
            staggered_derivative_expr(v, axis, r)
            for axis, (v, r) in enumerate(zip(("vx", "vy", "vz"), radii))
        )
        return velocity + [load("p") + load("K") * ((dx + dy) + dz)]
    if propagator == "elastic_iso":
        def d(name, axis):
            return staggered_derivative_expr(name, axis, radii[axis])

        velocity = [
            load("vx") + load("bx") * ((d("sxx", 0) + d("sxy", 1)) + d("sxz", 2)),
            load("vy") + load("by") * ((d("sxy", 0) + d("syy", 1)) + d("syz", 2)),
            load("vz") + load("bz") * ((d("sxz", 0) + d("syz", 1)) + d("szz", 2)),
        ]
        exx, eyy, ezz = d("vx", 0), d("vy", 1), d("vz", 2)
        l2m, lam = load("l2m"), load("lambda")
        stress = [
            load("sxx") + (l2m * exx + lam * (eyy + ezz)),
            load("syy") + (l2m * eyy + lam * (exx + ezz)),
            load("szz") + (l2m * ezz + lam * (exx + eyy)),
            load("syz") + load("mu_yz") * (d("vy", 2) + d("vz", 1)),
            load("sxz") + load("mu_xz") * (d("vx", 2) + d("vz", 0)),
            load("sxy") + load("mu_xy") * (d("vx", 1) + d("vy", 0)),
        ]
        return velocity + stress
    raise ConfigurationError(
        f"Unknown propagator `{propagator}`, valid choices are {', '.join(PROPAGATORS)}"
    )


@dataclasses.dataclass(frozen=True)
class KernelCostModel:
    propagator: str
    radius: tuple
    flops_per_point: int
    bytes_per_point: int

    @property
    def arithmetic_intensity(self):
        return self.flops_per_point / self.bytes_per_point


def count_stencil_cost(propagator, radius=4):
    """Flops and compulsory bytes per grid point and time step.

    Flops come from walking the symbolic expression of the kernel; bytes count
    each array read or written once, at four bytes per value.

    Parameters
    ----------
    propagator : str
    radius : int or sequence of int, optional
        Stencil radius per axis, by default 4

    Returns
    -------
    KernelCostModel

    Raises
    ------
    ConfigurationError
        For an unknown propagator.
    """
    exprs = kernel_expressions(propagator, radius)
    traffic = TRAFFIC[propagator]
    words = len(traffic["read"]) + len(traffic["write"])
    return KernelCostModel(
        propagator,
        as_triple(radius, "stencil", int),
        sum(count_flops(e) for e in exprs),
        words * WORD_SIZE,
    )


@dataclasses.dataclass(frozen=True)
class ScalingCase:
    ranks: int
    ngrid: tuple
    nthreads: int = 1

    @property
    def npoints(self):
        return int(np.prod(self.ngrid))


def weak_scaling_plan(base=WEAK_BASE, ranks=(1, 2, 4, 6), mode="ideal"):
    """Problem sizes growing with the rank count.

    `ideal` stretches x linearly, ``(r * base, base, base)``. `practical` keeps a
    cube whose side is ``base * r^(1/3)`` rounded up to a multiple of 64.
    """
    if mode not in ("ideal", "practical"):
        raise ConfigurationError(f"Weak-scaling mode must be `ideal` or `practical`, got `{mode}`")
    plan = []
    for r in ranks:
        if r < 1:
            raise ConfigurationError(f"Rank counts must be >= 1, got {r}")
        if mode == "ideal":
            ngrid = (r * base, base, base)
        elif r == 1:
            ngrid = (base,) * 3
        else:
            side = math.ceil(base * r ** (1.0 / 3.0) / PRACTICAL_MULTIPLE - 1e-9) * PRACTICAL_MULTIPLE
            ngrid = (side,) * 3
        plan.append(ScalingCase(r, ngrid))
    return plan


def strong_scaling_plan(n=STRONG_SIZE, ranks=STRONG_RANKS):
    return [ScalingCase(r, (n, n, n)) for r in ranks]


def thread_scaling_plan(n=NODE_SIZE, threads=(1, 2, 4, 8)):
    return [ScalingCase(1, (n, n, n), t) for t in threads]


def weak_efficiency(timings, npoints, baseline=None):
    """Per-point-per-rank time of the baseline over that of each run, in percent.

    Parameters
    ----------
    timings : dict
        `{ranks: seconds}`.
    npoints : dict
        `{ranks: grid points}`.
    baseline : int, optional
        Reference rank count, by default the smallest.
    """
    base = min(timings) if baseline is None else baseline
    ref = timings[base] / (npoints[base] / base)
    return {r: 100.0 * ref / (t / (npoints[r] / r)) for r, t in timings.items()}


def strong_efficiency(timings, baseline=None):
    """``t_base r_base / (t_r r)`` in percent, for `{ranks: seconds}`."""
    base = min(timings) if baseline is None else baseline
    return {r: 100.0 * timings[base] * base / (t * r) for r, t in timings.items()}


@dataclasses.dataclass
class ScalingResult:
    kind: str
    rows: list = dataclasses.field(default_factory=list)

    def frame(self):
        return pd.DataFrame(self.rows, columns=CSV_COLUMNS)


def run_scaling(plan, template, kind="strong", transport="inprocess", progress=True):
    """Runs every case of `plan` with `template` settings and computes efficiencies.

    Cases that fail are logged and kept with empty timings; the plan continues.

    Parameters
    ----------
    plan : list of ScalingCase
    template : SimConfig
        Settings shared by every case; grid size, rank and thread counts come from the plan.
    kind : str, optional
        `strong`, `weak` or `thread`, by default `strong`
    transport : str, optional
        Transport for multi-rank cases, by default `inprocess`
    progress : bool, optional
        Shows a tqdm progress bar, by default True

    Returns
    -------
    ScalingResult
    """
    result = ScalingResult(kind)
    for run_id, case in enumerate(tqdm(plan, disable=not progress, desc=f"{kind} scaling")):
        config = dataclasses.replace(
            template,
            ngrid=case.ngrid,
            nthreads=case.nthreads,
            target="parallel" if case.nthreads > 1 else template.target,
        )
        row = {
            "run_id": run_id,
            "propagator": config.propagator,
            "target": config.target,
            "ranks": case.ranks,
            "nthreads": case.nthreads,
            "nx": case.ngrid[0],
            "ny": case.ngrid[1],
            "nz": case.ngrid[2],
            "nsteps": config.nsteps,
            "kernel_s": np.nan,
            "modeling_s": np.nan,
            "points_per_s": np.nan,
            "efficiency_pct": np.nan,
        }
        try:
            if case.ranks > 1:
                dims = balanced_dims(case.ranks)
                with make_transport(transport, case.ranks) as channel:
                    _, report = run_distributed(config, dims=dims, transport=channel)
            else:
                _, report = run(config)
        except (ConfigurationError, InstabilityError, TransportError, MemoryError) as err:
            LOGGER.warning(f"Scaling case {run_id} ({case}) failed: {err}")
        else:
            row["kernel_s"] = report.kernel_seconds
            row["modeling_s"] = report.modeling_seconds
            row["points_per_s"] = case.npoints * config.nsteps / max(report.kernel_seconds, 1e-12)
        result.rows.append(row)

    done = [row for row in result.rows if np.isfinite(row["kernel_s"])]
    if done:
        counts = [row["nthreads"] if kind == "thread" else row["ranks"] for row in done]
        timings = dict(zip(counts, (row["kernel_s"] for row in done)))
        if kind == "weak":
            npoints = dict(zip(counts, (row["nx"] * row["ny"] * row["nz"] for row in done)))
            eff = weak_efficiency(timings, npoints)
        else:
            eff = strong_efficiency(timings)
        for count, row in zip(counts, done):
            row["efficiency_pct"] = eff[count]
    return result


@dataclasses.dataclass(frozen=True)
class Machine:
    """Peak arithmetic throughput and one bandwidth ceiling per memory level."""

    name: str
    peak_gflops: float
    peak_bw_gbs: dict

    def ridge_point(self, level):
        """Arithmetic intensity (flop/byte) where `level` stops limiting performance."""
        return self.peak_gflops / self.peak_bw_gbs[level]

    def attainable(self, intensity, level):
        return np.minimum(self.peak_gflops, np.asarray(intensity) * self.peak_bw_gbs[level])


def load_machine(path):
    """Reads a machine description: ``{"name", "peak_gflops", "peak_bw_gbs": {level: GB/s}}``."""
    with open(path) as handle:
        data = json.load(handle)
    bandwidth = data.get("peak_bw_gbs")
    if not isinstance(bandwidth, dict):
        bandwidth = {"DRAM": bandwidth}
    if "peak_gflops" not in data or not bandwidth or any(v is None or v <= 0 for v in bandwidth.values()):
        raise ConfigurationError(f"Machine file `{path}` needs peak_gflops and positive peak_bw_gbs")
    return Machine(data.get("name", os.path.basename(path)), float(data["peak_gflops"]),
                   {k: float(v) for k, v in bandwidth.items()})


def write_csv(result, path):
    with atomic_write(path, "w") as handle:
        result.frame().to_csv(handle, index=None)


def plot_efficiency(result, path):
    frame = result.frame().dropna(subset=["efficiency_pct"])
    column = "nthreads" if result.kind == "thread" else "ranks"
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frame[column], frame["efficiency_pct"], "o-", label=result.kind)
    ax.axhline(100.0, color="gray", linestyle="--", linewidth=0.8)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("Threads" if result.kind == "thread" else "Ranks")
    ax.set_ylabel("Efficiency (%)")
    ax.set_ylim(0, 110)
    ax.legend()
    with atomic_write(path) as handle:
        fig.savefig(handle, format="png", dpi=150)
    plt.close(fig)


def plot_roofline(machine, costs, path):
    """Log-log roofline with one ceiling per memory level and each kernel's intensity marked."""
    intensity = np.logspace(-2, 3, 200)
    fig, ax = plt.subplots(figsize=(6, 4))
    for level in machine.peak_bw_gbs:
        ax.loglog(intensity, machine.attainable(intensity, level), label=f"{level} ceiling")
    for cost in costs:
        ai = cost.arithmetic_intensity
        ax.axvline(ai, color="gray", linestyle=":", linewidth=0.8)
        ax.annotate(cost.propagator, (ai, machine.peak_gflops), rotation=90, fontsize=7, va="top")
    ax.set_xlabel("Arithmetic intensity (flop/byte)")
    ax.set_ylabel("Performance (GFlop/s)")
    ax.set_title(machine.name)
    ax.legend(fontsize=7)
    with atomic_write(path) as handle:
        fig.savefig(handle, format="png", dpi=150)
    plt.close(fig)


def emit_report(result, path, fmt="csv", costs=(), machine=None):
    """Writes `result` as CSV, or as efficiency and roofline PNG plots next to `path`.

    Returns
    -------
    list of str
        Paths written.
    """
    if fmt == "csv":
        write_csv(result, path)
        written = [path]
    elif fmt == "plot":
        stem = os.path.splitext(path)[0]
        written = [f"{stem}_efficiency.png"]
        plot_efficiency(result, written[0])
        if machine is not None:
            written.append(f"{stem}_roofline.png")
            plot_roofline(machine, costs, written[1])
    else:
        raise ConfigurationError(f"Report format must be `csv` or `plot`, got `{fmt}`")
    LOGGER.info(f"Wrote {', '.join(written)}")
    return written

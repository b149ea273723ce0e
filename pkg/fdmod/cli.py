"""
© 2026, fdmod developers

Command-line frontend::

    python -m fdmod.cli [model|dist|bench|plan] --ngrid 240,240,240 --nsteps 300 --verbose
"""

import argparse
import dataclasses
import os
import sys
from typing import Optional

import numpy as np

from fdmod.bench import (
    count_stencil_cost,
    emit_report,
    load_machine,
    run_scaling,
    strong_scaling_plan,
    thread_scaling_plan,
    weak_scaling_plan,
)
from fdmod.distexec import make_transport, run_distributed
from fdmod.driver import SimConfig, run
from fdmod.model import load_model
from fdmod.utils import (
    DEFAULT_CFL,
    DEFAULT_DGRID,
    DEFAULT_FMAX,
    DEFAULT_NGRID,
    DEFAULT_NSTEPS,
    DEFAULT_NTAPER,
    LOGGER,
    NTHREADS_ENV,
    PROPAGATORS,
    TARGETS,
    ConfigurationError,
    InstabilityError,
    ModelFileError,
    TransportError,
    parse_csv_values,
)

SUBCOMMANDS = ("model", "dist", "bench", "plan")
TRANSPORTS = ("inprocess", "socket", "mpi")
SCALINGS = ("strong", "weak", "practical", "thread")
FORMATS = ("csv", "plot")

# Plan defaults at full scale, and the desk-scale sizes the bench subcommand runs.
PLAN_BASE = {"strong": 1024, "weak": 1000, "practical": 1000, "thread": 240}
PLAN_COUNTS = {
    "strong": (8, 16, 32, 64, 128, 256),
    "weak": (1, 2, 4, 6),
    "practical": (1, 2, 4, 6),
    "thread": (1, 2, 4, 8),
}
BENCH_BASE = 64
BENCH_COUNTS = {"strong": (1, 2, 4, 8), "weak": (1, 2, 4), "practical": (1, 2, 4), "thread": (1, 2, 4)}
BENCH_NDAMPING = 8

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


@dataclasses.dataclass
class CliArgs:
    subcommand: str = "model"
    ngrid: tuple = DEFAULT_NGRID
    dgrid: tuple = DEFAULT_DGRID
    nsteps: int = DEFAULT_NSTEPS
    fmax: float = DEFAULT_FMAX
    verbose: bool = False
    propagator: str = "acoustic_iso_cd"
    target: str = "seq"
    nthreads: int = 1
    model_manifest: Optional[str] = None
    output: Optional[str] = None
    free_surface: bool = False
    ranks: Optional[tuple] = None
    transport: str = "inprocess"
    hostfile: Optional[str] = None
    rank: Optional[int] = None
    machine_file: Optional[str] = None
    cfl: float = DEFAULT_CFL
    ndamping: Optional[tuple] = None
    ntaper: int = DEFAULT_NTAPER
    scaling: str = "strong"
    ranks_list: Optional[tuple] = None
    base_ngrid: Optional[int] = None
    format: str = "csv"


def _triple(kind):
    def convert(text):
        try:
            return parse_csv_values(text, kind, 3)
        except ConfigurationError as err:
            raise argparse.ArgumentTypeError(str(err))

    convert.__name__ = f"{kind.__name__} triple"
    return convert


def _int_list(text):
    try:
        values = tuple(int(part) for part in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed integer list `{text}`")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"counts must be >= 1, got `{text}`")
    return values


def _bool(text):
    value = str(text).strip().lower()
    if value in ("true", ".true.", "t", "1", "yes"):
        return True
    if value in ("false", ".false.", "f", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got `{text}`")


def _default_nthreads():
    value = os.environ.get(NTHREADS_ENV)
    try:
        return int(value) if value else 1
    except ValueError:
        LOGGER.warning(f"Ignoring {NTHREADS_ENV}={value!r}: not an integer")
        return 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fdmod",
        description="Finite-difference seismic modeling and benchmark harness.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "subcommand",
        nargs="?",
        default="model",
        choices=SUBCOMMANDS,
        help="Single-rank modeling run, distributed run, scaling benchmark or plan listing",
    )
    parser.add_argument("--ngrid", type=_triple(int), default=DEFAULT_NGRID, help="Grid size")
    parser.add_argument("--dgrid", type=_triple(float), default=DEFAULT_DGRID, help="Grid spacing in meters")
    parser.add_argument("--nsteps", type=int, default=DEFAULT_NSTEPS, help="Number of time steps")
    parser.add_argument("--fmax", type=float, default=DEFAULT_FMAX, help="Maximum frequency in Hz")
    parser.add_argument(
        "--verbose",
        type=_bool,
        nargs="?",
        const=True,
        default=False,
        help="Print progress every 100 steps",
    )
    parser.add_argument("--propagator", choices=list(PROPAGATORS), default="acoustic_iso_cd", help="Wave-equation kernel")
    parser.add_argument("--target", choices=TARGETS, default="seq", help="Execution target")
    parser.add_argument(
        "--nthreads",
        type=int,
        default=_default_nthreads(),
        help=f"Threads of the parallel target (environment: {NTHREADS_ENV})",
    )
    parser.add_argument("--model-manifest", dest="model_manifest", default=None, help="JSON model manifest")
    parser.add_argument("--output", default=None, help="Shot record (model, dist) or report file (bench)")
    parser.add_argument(
        "--free-surface",
        dest="free_surface",
        action="store_true",
        default=False,
        help="Free-surface condition on the top plane instead of damping",
    )
    parser.add_argument("--ranks", type=_triple(int), default=None, help="Ranks per axis, e.g. 2,2,4")
    parser.add_argument("--transport", choices=TRANSPORTS, default="inprocess", help="Message transport")
    parser.add_argument("--hostfile", default=None, help="Socket transport host file")
    parser.add_argument("--rank", type=int, default=None, help="Rank of this process (socket transport)")
    parser.add_argument("--machine-file", dest="machine_file", default=None, help="Machine description JSON")
    parser.add_argument("--cfl", type=float, default=DEFAULT_CFL, help="CFL safety factor")
    parser.add_argument("--ndamping", type=_triple(int), default=None, help="Damping width per axis")
    parser.add_argument("--ntaper", type=int, default=DEFAULT_NTAPER, help="Model taper width")
    parser.add_argument("--scaling", choices=SCALINGS, default="strong", help="Scaling experiment")
    parser.add_argument(
        "--ranks-list", dest="ranks_list", type=_int_list, default=None, help="Rank or thread counts"
    )
    parser.add_argument("--base-ngrid", dest="base_ngrid", type=int, default=None, help="Base cube side")
    parser.add_argument("--format", choices=FORMATS, default="csv", help="Benchmark report format")
    return parser


def _check(parser, args):
    if args.nsteps < 1:
        parser.error(f"--nsteps must be >= 1, got {args.nsteps}")
    if not args.fmax > 0:
        parser.error(f"--fmax must be > 0, got {args.fmax}")
    if not 0 < args.cfl <= 1:
        parser.error(f"--cfl must be in (0, 1], got {args.cfl}")
    if args.nthreads < 1:
        parser.error(f"--nthreads must be >= 1, got {args.nthreads}")
    if any(n < 1 for n in args.ngrid):
        parser.error(f"--ngrid must be >= 1 per axis, got {args.ngrid}")
    if any(not d > 0 for d in args.dgrid):
        parser.error(f"--dgrid must be > 0 per axis, got {args.dgrid}")
    if args.ntaper < 0:
        parser.error(f"--ntaper must be >= 0, got {args.ntaper}")
    if args.base_ngrid is not None and args.base_ngrid < 1:
        parser.error(f"--base-ngrid must be >= 1, got {args.base_ngrid}")

    dist_only = {"--ranks": args.ranks, "--hostfile": args.hostfile, "--rank": args.rank}
    if args.subcommand != "dist":
        for flag, value in dist_only.items():
            if value is not None:
                parser.error(f"{flag} only applies to the dist subcommand")
        if args.transport != "inprocess" and args.subcommand != "bench":
            parser.error("--transport only applies to the dist and bench subcommands")
    else:
        if args.propagator != "acoustic_iso_cd":
            parser.error("only acoustic_iso_cd propagator is available within the distributed version")
        if args.transport == "socket" and (args.hostfile is None or args.rank is None):
            parser.error("--transport socket needs --hostfile and --rank")
    if args.subcommand not in ("bench", "plan"):
        if args.machine_file is not None:
            parser.error("--machine-file only applies to the bench and plan subcommands")
        if args.ranks_list is not None or args.base_ngrid is not None:
            parser.error("--ranks-list and --base-ngrid only apply to the bench and plan subcommands")


def parse(argv=None):
    """Parses `argv` into CliArgs; usage errors exit with status 2."""
    parser = build_parser()
    args = parser.parse_args(argv)
    _check(parser, args)
    return CliArgs(**vars(args))


def render(args):
    """Command line that parses back into `args`."""
    def csv(values):
        return ",".join(repr(v) for v in values)

    argv = [
        args.subcommand,
        "--ngrid", csv(args.ngrid),
        "--dgrid", csv(float(v) for v in args.dgrid),
        "--nsteps", str(args.nsteps),
        "--fmax", repr(float(args.fmax)),
        "--verbose", "true" if args.verbose else "false",
        "--propagator", args.propagator,
        "--target", args.target,
        "--nthreads", str(args.nthreads),
        "--transport", args.transport,
        "--cfl", repr(float(args.cfl)),
        "--ntaper", str(args.ntaper),
        "--scaling", args.scaling,
        "--format", args.format,
    ]
    optional = {
        "--model-manifest": args.model_manifest,
        "--output": args.output,
        "--ranks": None if args.ranks is None else csv(args.ranks),
        "--hostfile": args.hostfile,
        "--rank": None if args.rank is None else str(args.rank),
        "--machine-file": args.machine_file,
        "--ndamping": None if args.ndamping is None else csv(args.ndamping),
        "--ranks-list": None if args.ranks_list is None else csv(args.ranks_list),
        "--base-ngrid": None if args.base_ngrid is None else str(args.base_ngrid),
    }
    for flag, value in optional.items():
        if value is not None:
            argv += [flag, value]
    if args.free_surface:
        argv.append("--free-surface")
    return argv


def to_config(args, **overrides):
    fields = dict(
        ngrid=args.ngrid,
        dgrid=args.dgrid,
        nsteps=args.nsteps,
        fmax=args.fmax,
        verbose=args.verbose,
        propagator=args.propagator,
        target=args.target,
        nthreads=args.nthreads,
        cfl=args.cfl,
        ndamping=args.ndamping,
        ntaper=args.ntaper,
        free_surface=args.free_surface,
    )
    fields.update(overrides)
    return SimConfig(**fields)


def scaling_plan(args, base=None, counts=None):
    base = args.base_ngrid or base or PLAN_BASE[args.scaling]
    counts = args.ranks_list or counts or PLAN_COUNTS[args.scaling]
    if args.scaling == "strong":
        return strong_scaling_plan(base, counts)
    if args.scaling == "thread":
        return thread_scaling_plan(base, counts)
    return weak_scaling_plan(base, counts, "ideal" if args.scaling == "weak" else "practical")


def _model(args):
    return load_model(args.model_manifest) if args.model_manifest else None


def run_model(args):
    shot, _ = run(to_config(args), _model(args), echo=print)
    if args.output:
        shot.save(args.output)
        LOGGER.info(f"Wrote {shot.geometry.nreceivers} traces to {args.output}")


def run_dist(args):
    dims = args.ranks or (1, 1, 1)
    with make_transport(args.transport, int(np.prod(dims)), args.hostfile, args.rank) as transport:
        shot, report = run_distributed(to_config(args), _model(args), dims, transport)
    if shot is not None:
        print(report.render())
        if args.output:
            shot.save(args.output)
            LOGGER.info(f"Wrote {shot.geometry.nreceivers} traces to {args.output}")


def run_plan(args):
    plan = scaling_plan(args)
    print(f"{'ranks':>8}{'nthreads':>10}{'nx':>8}{'ny':>8}{'nz':>8}")
    for case in plan:
        print(f"{case.ranks:8d}{case.nthreads:10d}{case.ngrid[0]:8d}{case.ngrid[1]:8d}{case.ngrid[2]:8d}")
    machine = load_machine(args.machine_file) if args.machine_file else None
    for name in PROPAGATORS:
        cost = count_stencil_cost(name)
        line = (
            f"{name:<16} flops/pt {cost.flops_per_point:5d}  bytes/pt {cost.bytes_per_point:4d}"
            f"  AI {cost.arithmetic_intensity:.3f}"
        )
        if machine is not None:
            bound = min(machine.attainable(cost.arithmetic_intensity, level) for level in machine.peak_bw_gbs)
            line += f"  bound {float(bound):.1f} GFlop/s"
        print(line)


def run_bench(args):
    plan = scaling_plan(args, BENCH_BASE, BENCH_COUNTS[args.scaling])
    template = to_config(args, ndamping=args.ndamping or (BENCH_NDAMPING,) * 3)
    kind = "weak" if args.scaling in ("weak", "practical") else args.scaling
    result = run_scaling(plan, template, kind, args.transport)
    machine = load_machine(args.machine_file) if args.machine_file else None
    costs = [count_stencil_cost(args.propagator)]
    emit_report(result, args.output or f"{kind}_scaling.csv", args.format, costs, machine)
    print(result.frame().to_string(index=False))


COMMANDS = {"model": run_model, "dist": run_dist, "bench": run_bench, "plan": run_plan}


def main(argv=None):
    """Parses `argv`, runs the subcommand and returns the exit status."""
    try:
        args = parse(argv)
    except SystemExit as err:
        return err.code
    try:
        COMMANDS[args.subcommand](args)
    except ConfigurationError as err:
        LOGGER.error(f"Invalid configuration: {err}")
        return EXIT_USAGE
    except (InstabilityError, TransportError, ModelFileError, OSError) as err:
        LOGGER.error(f"{type(err).__name__}: {err}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

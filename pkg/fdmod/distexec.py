"""
© 2026, fdmod developers

Distributed-memory execution of the constant-density acoustic propagator.

The global grid is cut into a regular Cartesian block decomposition. Every
step each rank packs its boundary planes, posts all sends and receives,
waits for completion and unpacks into its ghost shells before updating its
own box. Communication never overlaps computation.

Halo wire format (version 1), little endian::

    B  version     = 1
    i  step
    B  axis        0, 1, 2 (3 for trace gathering)
    B  direction   0: low side, 1: high side of the sender
    I  count       number of f32 samples that follow
"""

import abc
import dataclasses
import queue
import socket
import struct
import threading
import time

import numpy as np
from joblib import Parallel, delayed

from fdmod.acquisition import ShotRecord, record, ricker
from fdmod.driver import PROGRESS_EVERY, RunReport, select_target, setup_run
from fdmod.grid import Box
from fdmod.utils import (
    HALO_WIRE_VERSION,
    LOGGER,
    ConfigurationError,
    InstabilityError,
    TransportError,
    as_triple,
)

try:
    from mpi4py import MPI
except ImportError:  # pragma: no cover
    MPI = None

HEADER = struct.Struct("<BiBBI")
HANDSHAKE = struct.Struct("<Bi")
GATHER_TAG = 6
DEFAULT_TIMEOUT = 120.0


def tag(axis, side):
    return 2 * axis + side


@dataclasses.dataclass(frozen=True)
class CartTopology:
    """Ranks on a `(px, py, pz)` grid; rank ``(cx * py + cy) * pz + cz``."""

    dims: tuple

    def __post_init__(self):
        dims = as_triple(self.dims, "ranks", int)
        if any(p < 1 for p in dims):
            raise ConfigurationError(f"{dims} is an invalid decomposition: counts must be >= 1")
        object.__setattr__(self, "dims", dims)

    @property
    def nranks(self):
        return int(np.prod(self.dims))

    def coords(self, rank):
        if not 0 <= rank < self.nranks:
            raise ValueError(f"Rank {rank} outside a topology of {self.nranks} ranks")
        return tuple(int(c) for c in np.unravel_index(rank, self.dims))

    def rank_of(self, coords):
        px, py, pz = self.dims
        cx, cy, cz = coords
        return (cx * py + cy) * pz + cz

    def neighbor(self, rank, axis, side):
        """Face neighbour on the low (`side=0`) or high side, None at the domain boundary."""
        coords = list(self.coords(rank))
        coords[axis] += 1 if side else -1
        if not 0 <= coords[axis] < self.dims[axis]:
            return None
        return self.rank_of(coords)

    def neighbors(self, rank):
        return {
            (axis, side): self.neighbor(rank, axis, side) for axis in range(3) for side in (0, 1)
        }

    def check(self, nranks):
        if self.nranks != nranks:
            raise ConfigurationError(f"{self.dims} is an invalid decomposition for {nranks} ranks")


def balanced_dims(nranks):
    """Factors `nranks` into three counts as equal as possible, largest first."""
    if nranks < 1:
        raise ConfigurationError(f"Rank count must be >= 1, got {nranks}")
    factors, rest, p = [], nranks, 2
    while p * p <= rest:
        while rest % p == 0:
            factors.append(p)
            rest //= p
        p += 1
    if rest > 1:
        factors.append(rest)
    dims = [1, 1, 1]
    for f in sorted(factors, reverse=True):
        dims[dims.index(min(dims))] *= f
    return tuple(sorted(dims, reverse=True))


@dataclasses.dataclass(frozen=True)
class LocalDomain:
    rank: int
    coords: tuple
    offset: tuple
    n: tuple

    @property
    def box(self):
        """Owned interior box in global coordinates."""
        return Box(self.offset, tuple(o + n for o, n in zip(self.offset, self.n)))


def _split_extent(n, parts, index):
    q, r = divmod(n, parts)
    return q + (1 if index < r else 0), index * q + min(index, r)


def decompose(grid, dims):
    """Block decomposition of `grid`; the remainder goes to low-coordinate ranks.

    Returns
    -------
    list of LocalDomain
        One entry per rank, in rank order.

    Raises
    ------
    ConfigurationError
        If some rank would own fewer points than the halo width along an axis.
    """
    topology = dims if isinstance(dims, CartTopology) else CartTopology(dims)
    domains = []
    for rank in range(topology.nranks):
        coords = topology.coords(rank)
        sizes, starts = zip(
            *(_split_extent(n, p, c) for n, p, c in zip(grid.n, topology.dims, coords))
        )
        if topology.nranks > 1 and any(
            s < grid.radius for s, p in zip(sizes, topology.dims) if p > 1
        ):
            raise ConfigurationError(
                f"{topology.dims} leaves rank {rank} with {sizes} points, below the halo width {grid.radius}"
            )
        domains.append(LocalDomain(rank, coords, tuple(starts), tuple(sizes)))
    return domains


def halo_width(grid, domains, ndamping, radius):
    """Ghost width the ranks need for second-order CPML memory across their cuts.

    A cut `B` along an axis of size `n` with
    ``ndamping + radius + 1 <= B <= n - ndamping - radius - 1`` stays clear of
    the damping layers and `radius` ghost points suffice. A cut inside or next
    to a layer makes both ranks carry the half-node memory a stencil radius
    into each other, which doubles the width.
    """
    for axis, (n, nd) in enumerate(zip(grid.n, ndamping)):
        if nd == 0:
            continue
        cuts = sorted({d.offset[axis] for d in domains} - {0})
        for cut in cuts:
            if not nd + radius + 1 <= cut <= n - nd - radius - 1:
                LOGGER.info(
                    f"Rank boundary at {'xyz'[axis]}={cut} is within {radius + 1} points of the "
                    f"{nd}-point damping layer, exchanging {2 * radius} ghost planes"
                )
                return 2 * radius
    return radius


class HaloBuffer:
    """Send and receive staging arrays for one face, sized tangential extents x radius."""

    def __init__(self, grid, axis, side, dtype=np.float32):
        self.grid, self.axis, self.side = grid, axis, side
        shape = list(grid.n)
        shape[axis] = grid.radius
        self.send = np.zeros(shape, dtype=dtype)
        self.recv = np.zeros(shape, dtype=dtype)

    @property
    def send_tag(self):
        return tag(self.axis, self.side)

    @property
    def recv_tag(self):
        return tag(self.axis, 1 - self.side)

    def _slices(self, ghost):
        r, n = self.grid.radius, self.grid.n[self.axis]
        sl = list(self.grid.interior.slices(r))
        if ghost:
            sl[self.axis] = slice(0, r) if self.side == 0 else slice(n + r, n + 2 * r)
        else:
            sl[self.axis] = slice(r, 2 * r) if self.side == 0 else slice(n, n + r)
        return tuple(sl)

    def pack(self, field):
        self.send[...] = field.data[self._slices(False)]

    def unpack(self, field):
        field.data[self._slices(True)] = self.recv


class Endpoint(abc.ABC):
    """One rank's view of a transport."""

    rank = None

    @abc.abstractmethod
    def post_send(self, dest, tag, array, step=0):
        pass

    @abc.abstractmethod
    def post_recv(self, source, tag, out, step=0):
        pass

    @abc.abstractmethod
    def wait_all(self):
        """Completes every posted send and receive."""


class Transport(abc.ABC):
    size = None

    @abc.abstractmethod
    def ranks(self):
        """Ranks hosted by this process."""

    @abc.abstractmethod
    def endpoint(self, rank):
        pass

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class _QueueEndpoint(Endpoint):
    """Receives from per-`(source, tag)` queues filled by a hub or by socket readers."""

    def __init__(self, rank, mailbox, timeout):
        self.rank = rank
        self._mailbox = mailbox
        self.timeout = timeout
        self._sends = []
        self._recvs = []

    def post_recv(self, source, tag, out, step=0):
        self._recvs.append((source, tag, out, step))

    def _deliver_sends(self):
        raise NotImplementedError

    def wait_all(self):
        self._deliver_sends()
        recvs, self._recvs = self._recvs, []
        for source, tag, out, step in recvs:
            try:
                got_step, data = self._mailbox(self.rank, source, tag).get(timeout=self.timeout)
            except queue.Empty:
                raise TransportError(self.rank, source, f"no message with tag {tag} after {self.timeout} s")
            if got_step != step or data.size != out.size:
                raise TransportError(
                    self.rank,
                    source,
                    f"expected step {step} with {out.size} values, got step {got_step} with {data.size}",
                )
            out[...] = data.reshape(out.shape)


class InProcessTransport(Transport):
    """All ranks in one process, one thread each, exchanging copies through queues."""

    def __init__(self, size, timeout=DEFAULT_TIMEOUT):
        self.size = size
        self.timeout = timeout
        self._queues = {}
        self._lock = threading.Lock()

    def _queue(self, dest, source, tag):
        with self._lock:
            return self._queues.setdefault((source, dest, tag), queue.Queue())

    def ranks(self):
        return list(range(self.size))

    def endpoint(self, rank):
        return _InProcessEndpoint(rank, self)


class _InProcessEndpoint(_QueueEndpoint):
    def __init__(self, rank, hub):
        super().__init__(rank, hub._queue, hub.timeout)
        self._hub = hub

    def post_send(self, dest, tag, array, step=0):
        self._sends.append((dest, tag, np.array(array, copy=True), step))

    def _deliver_sends(self):
        sends, self._sends = self._sends, []
        for dest, tag, data, step in sends:
            self._hub._queue(dest, self.rank, tag).put((step, data))


def encode_message(step, axis, direction, payload):
    """Header plus little-endian f32 samples."""
    data = np.ascontiguousarray(payload, dtype="<f4").ravel()
    return HEADER.pack(HALO_WIRE_VERSION, step, axis, direction, data.size) + data.tobytes()


def decode_header(raw):
    """`(step, axis, direction, count)` from a packed header."""
    version, step, axis, direction, count = HEADER.unpack(raw)
    if version != HALO_WIRE_VERSION:
        raise ValueError(f"Unsupported halo wire version {version}, expected {HALO_WIRE_VERSION}")
    return step, axis, direction, count


def _recv_exact(conn, size):
    chunks, remaining = [], size
    while remaining:
        chunk = conn.recv(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_hostfile(path):
    """Parses ``rank host:port`` lines; `#` starts a comment.

    Raises
    ------
    ConfigurationError
        On malformed lines or if the ranks are not exactly 0..N-1.
    """
    hosts = {}
    with open(path) as handle:
        for number, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rank, address = line.split()
                host, port = address.rsplit(":", 1)
                hosts[int(rank)] = (host, int(port))
            except ValueError:
                raise ConfigurationError(f"Malformed host file line {number} in `{path}`: `{line}`")
    if sorted(hosts) != list(range(len(hosts))):
        raise ConfigurationError(f"Host file `{path}` must list ranks 0..N-1, got {sorted(hosts)}")
    return hosts


class SocketTransport(Transport, _QueueEndpoint):
    """One process per rank over TCP; reader threads feed a mailbox per `(source, tag)`.

    Parameters
    ----------
    hosts : dict
        `{rank: (host, port)}`, e.g. from :func:`read_hostfile`.
    rank : int
        Rank of this process.
    timeout : float, optional
        Seconds to wait for peers and messages, by default 120
    """

    def __init__(self, hosts, rank, timeout=DEFAULT_TIMEOUT):
        self.hosts = dict(hosts)
        self.size = len(self.hosts)
        self._queues = {}
        self._lock = threading.Lock()
        _QueueEndpoint.__init__(self, rank, self._queue, timeout)
        self._peers = {}
        self._closing = False
        self._listener = socket.create_server(self.hosts[rank], reuse_port=False)
        threading.Thread(target=self._accept_loop, daemon=True).start()
        LOGGER.info(f"Rank {rank} listening on {self.hosts[rank][0]}:{self.hosts[rank][1]}")

    def _queue(self, dest, source, tag):
        with self._lock:
            return self._queues.setdefault((source, tag), queue.Queue())

    def ranks(self):
        return [self.rank]

    def endpoint(self, rank):
        if rank != self.rank:
            raise ValueError(f"Process of rank {self.rank} cannot act as rank {rank}")
        return self

    def _accept_loop(self):
        while not self._closing:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _reader(self, conn):
        with conn:
            raw = _recv_exact(conn, HANDSHAKE.size)
            if raw is None:
                return
            version, source = HANDSHAKE.unpack(raw)
            if version != HALO_WIRE_VERSION:
                LOGGER.error(f"Rank {self.rank} rejected peer with wire version {version}")
                return
            while True:
                raw = _recv_exact(conn, HEADER.size)
                if raw is None:
                    return
                step, axis, direction, count = decode_header(raw)
                payload = _recv_exact(conn, 4 * count)
                if payload is None:
                    return
                data = np.frombuffer(payload, dtype="<f4").copy()
                self._queue(self.rank, source, tag(axis, direction)).put((step, data))

    def _connection(self, peer):
        if peer not in self._peers:
            deadline = time.monotonic() + self.timeout
            while True:
                try:
                    conn = socket.create_connection(self.hosts[peer], timeout=self.timeout)
                    break
                except OSError as err:
                    if time.monotonic() > deadline:
                        raise TransportError(self.rank, peer, f"cannot connect: {err}")
                    time.sleep(0.05)
            conn.sendall(HANDSHAKE.pack(HALO_WIRE_VERSION, self.rank))
            self._peers[peer] = conn
        return self._peers[peer]

    def post_send(self, dest, tag, array, step=0):
        self._sends.append((dest, tag, np.array(array, copy=True), step))

    def _deliver_sends(self):
        sends, self._sends = self._sends, []
        for dest, tag_, data, step in sends:
            try:
                self._connection(dest).sendall(encode_message(step, tag_ // 2, tag_ % 2, data))
            except OSError as err:
                raise TransportError(self.rank, dest, f"send failed: {err}")

    def close(self):
        self._closing = True
        for conn in self._peers.values():
            conn.close()
        self._peers = {}
        self._listener.close()


class MpiTransport(Transport, Endpoint):
    """Non-blocking point-to-point messages over `mpi4py`, one process per rank."""

    def __init__(self, comm=None):
        if MPI is None:
            raise ConfigurationError("The mpi transport needs mpi4py, which is not installed")
        self.comm = comm or MPI.COMM_WORLD
        self.rank = self.comm.Get_rank()
        self.size = self.comm.Get_size()
        self._requests = []
        self._keep = []

    def ranks(self):
        return [self.rank]

    def endpoint(self, rank):
        if rank != self.rank:
            raise ValueError(f"Process of rank {self.rank} cannot act as rank {rank}")
        return self

    def post_send(self, dest, tag, array, step=0):
        data = np.ascontiguousarray(array)
        self._keep.append(data)
        self._requests.append(self.comm.Isend(data, dest=dest, tag=tag))

    def post_recv(self, source, tag, out, step=0):
        self._requests.append(self.comm.Irecv(out, source=source, tag=tag))

    def wait_all(self):
        MPI.Request.Waitall(self._requests)
        self._requests, self._keep = [], []


def make_transport(kind, size, hostfile=None, rank=None, timeout=DEFAULT_TIMEOUT):
    """Transport by name: `inprocess`, `socket` (needs `hostfile` and `rank`) or `mpi`."""
    if kind == "inprocess":
        return InProcessTransport(size, timeout)
    if kind == "socket":
        if hostfile is None or rank is None:
            raise ConfigurationError("The socket transport needs a host file and a rank")
        return SocketTransport(read_hostfile(hostfile), rank, timeout)
    if kind == "mpi":
        return MpiTransport()
    raise ConfigurationError(f"Unknown transport `{kind}`, valid choices are inprocess, socket, mpi")


def exchange_halos(field, topology, rank, buffers, endpoint, step=0):
    """Fills the ghost shells of `field` that face another rank.

    Packs every face, posts all sends and receives, waits, then unpacks.
    Shells on the physical boundary are left untouched.

    Parameters
    ----------
    field : Field
        Local field of `rank`.
    topology : CartTopology
    rank : int
    buffers : dict
        `{(axis, side): HaloBuffer}` for the faces that have a neighbour.
    endpoint : Endpoint
    step : int, optional
        Time step stamped on the messages, by default 0
    """
    if not buffers:
        return
    for (axis, side), buf in buffers.items():
        buf.pack(field)
        endpoint.post_send(topology.neighbor(rank, axis, side), buf.send_tag, buf.send, step)
    for (axis, side), buf in buffers.items():
        endpoint.post_recv(topology.neighbor(rank, axis, side), buf.recv_tag, buf.recv, step)
    endpoint.wait_all()
    for buf in buffers.values():
        buf.unpack(field)


def _run_rank(setup, topology, domain, endpoint, domains, width):
    config = setup.config
    start = time.perf_counter()
    model = setup.model.restrict(domain.offset, domain.n, width)
    partition = setup.partition.restrict(domain.box, domain.offset)
    top = domain.coords[2] == 0
    propagator = setup.propagator(model, partition, domain.offset, config.free_surface and top)
    state = propagator.new_state()
    wavelet = ricker(config.fmax, setup.dt, config.nsteps)

    geometry, rows = setup.geometry.restrict(domain.box)
    owns_source = domain.box.contains(setup.geometry.source_loc)
    nrec = config.nsteps
    local_shot = ShotRecord.empty(geometry, nrec, setup.dt, setup.dtype)
    buffers = {
        key: HaloBuffer(model.grid, *key, dtype=setup.dtype)
        for key, nbr in topology.neighbors(domain.rank).items()
        if nbr is not None
    }
    LOGGER.info(f"Rank {domain.rank} owns {domain.box} with {geometry.nreceivers} receivers")

    report = RunReport(setup)
    last_finite = 0
    with select_target(config) as executor:
        for k in range(config.nsteps):
            exchange_halos(state.p_cur, topology, domain.rank, buffers, endpoint, k)
            tick = time.perf_counter()
            source = (geometry.source_loc, wavelet.samples[k]) if owns_source else None
            propagator.step(state, executor, source)
            report.kernel_seconds += time.perf_counter() - tick
            record(state.p_cur, geometry, k, local_shot)
            step = k + 1
            checked = config.check_every and step % config.check_every == 0
            if checked or step == config.nsteps:
                if not propagator.is_finite(state):
                    raise InstabilityError(
                        step,
                        last_finite,
                        f"Non-finite wavefield on rank {domain.rank} detected by the check at time "
                        f"step {step}, last finite at time step {last_finite}",
                    )
                last_finite = step
            if config.verbose and step % PROGRESS_EVERY == 0:
                report.progress.append(step)

    shot = None
    if domain.rank != 0:
        if len(rows):
            endpoint.post_send(0, GATHER_TAG, local_shot.traces, config.nsteps)
            endpoint.wait_all()
    else:
        shot = ShotRecord.empty(setup.geometry, nrec, setup.dt, setup.dtype)
        shot.traces[rows] = local_shot.traces
        pending = []
        for other in domains[1:]:
            _, other_rows = setup.geometry.restrict(other.box)
            if len(other_rows):
                out = np.empty((len(other_rows), nrec), dtype=setup.dtype)
                endpoint.post_recv(other.rank, GATHER_TAG, out, config.nsteps)
                pending.append((other_rows, out))
        endpoint.wait_all()
        for other_rows, out in pending:
            shot.traces[other_rows] = out

    report.region_seconds = dict(propagator.timings)
    report.modeling_seconds = time.perf_counter() - start
    LOGGER.info(f"Rank {domain.rank} finished {config.nsteps} steps in {report.modeling_seconds:.2f} s")
    return shot, report


def run_distributed(config, model=None, dims=(1, 1, 1), transport=None):
    """Runs `config` over a Cartesian decomposition and gathers the traces on rank 0.

    Parameters
    ----------
    config : SimConfig
        Must select `acoustic_iso_cd` in single precision.
    model : EarthModel, optional
        Global model, by default the two-layer model.
    dims : sequence of int, optional
        Ranks per axis, by default (1, 1, 1)
    transport : Transport, optional
        By default an in-process transport hosting every rank.

    Returns
    -------
    tuple
        `(ShotRecord, RunReport)` of rank 0 when this process hosts it, otherwise
        `(None, RunReport)` of the first hosted rank.

    Raises
    ------
    ConfigurationError
        On an unsupported propagator, a decomposition that does not match the
        rank count, or ranks thinner than the ghost width.
    """
    if config.propagator != "acoustic_iso_cd":
        raise ConfigurationError(
            f"Propagator `{config.propagator}` cannot run distributed: "
            "only acoustic_iso_cd propagator is available within the distributed version"
        )
    topology = CartTopology(dims)
    if transport is None:
        transport = InProcessTransport(topology.nranks)
    topology.check(transport.size)

    setup = setup_run(config, model)
    if topology.nranks > 1 and setup.dtype != np.float32 and not isinstance(transport, InProcessTransport):
        raise ConfigurationError("Distributed runs over the wire are single precision only")
    domains = decompose(setup.grid, topology)
    width = halo_width(setup.grid, domains, setup.ndamping, setup.grid.radius)
    if width > setup.grid.radius:
        decompose(dataclasses.replace(setup.grid, radius=width), topology)
    LOGGER.info(f"Distributed run of {setup.grid.n} over {topology.dims} ranks, {width} ghost planes")

    hosted = transport.ranks()
    jobs = (
        delayed(_run_rank)(setup, topology, domains[rank], transport.endpoint(rank), domains, width)
        for rank in hosted
    )
    results = Parallel(n_jobs=len(hosted), backend="threading")(jobs)
    by_rank = dict(zip(hosted, results))
    if 0 in by_rank:
        return by_rank[0]
    return None, results[0][1]

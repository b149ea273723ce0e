import os
import socket
import tempfile
import threading

import numpy as np
import pytest
from fdmod.distexec import (
    GATHER_TAG,
    HEADER,
    CartTopology,
    HaloBuffer,
    InProcessTransport,
    SocketTransport,
    balanced_dims,
    decode_header,
    decompose,
    encode_message,
    exchange_halos,
    halo_width,
    make_transport,
    read_hostfile,
    run_distributed,
    tag,
)
from fdmod.driver import SimConfig, run
from fdmod.grid import Field, make_grid
from fdmod.utils import ConfigurationError, TransportError


def test_topology_ranks_and_neighbors():
    topology = CartTopology((2, 2, 4))
    assert topology.nranks == 16
    assert topology.coords(5) == (0, 1, 1)
    assert topology.rank_of((1, 1, 3)) == 15
    assert topology.neighbor(0, 0, 0) is None
    assert topology.neighbor(0, 0, 1) == 8
    assert topology.neighbor(0, 2, 1) == 1
    assert sum(v is not None for v in topology.neighbors(5).values()) == 4


def test_topology_rank_count_mismatch():
    with pytest.raises(ConfigurationError, match="invalid decomposition for 8 ranks"):
        CartTopology((2, 2, 4)).check(8)
    CartTopology((2, 2, 4)).check(16)
    with pytest.raises(ConfigurationError):
        CartTopology((0, 1, 1))


def test_balanced_dims():
    assert balanced_dims(1) == (1, 1, 1)
    assert balanced_dims(8) == (2, 2, 2)
    assert balanced_dims(6) == (3, 2, 1)
    assert balanced_dims(12) == (3, 2, 2)
    assert balanced_dims(7) == (7, 1, 1)


def test_decompose_remainder_to_low_ranks():
    grid = make_grid((10, 8, 8), 10.0, radius=2)
    domains = decompose(grid, (3, 1, 2))
    assert [d.n[0] for d in domains[::2]] == [4, 3, 3]
    assert [d.offset[0] for d in domains[::2]] == [0, 4, 7]
    assert domains[1].offset == (0, 0, 4)
    assert sum(np.prod(d.n) for d in domains) == grid.npoints
    with pytest.raises(ConfigurationError):
        decompose(make_grid(8, 10.0, radius=4), (4, 1, 1))


def test_halo_width():
    grid = make_grid(64, 20.0)
    assert halo_width(grid, decompose(grid, (4, 1, 1)), (8, 8, 8), 4) == 4
    assert halo_width(grid, decompose(grid, (4, 1, 1)), (12, 12, 12), 4) == 8
    assert halo_width(grid, decompose(grid, (1, 2, 4)), (27, 27, 27), 4) == 8
    assert halo_width(grid, decompose(grid, (1, 1, 4)), (27, 27, 0), 4) == 4
    assert halo_width(grid, decompose(grid, (1, 1, 1)), (27, 27, 27), 4) == 4


def test_deep_halo_needs_thick_ranks():
    config = SimConfig(ngrid=(64, 64, 40), nsteps=2)
    with pytest.raises(ConfigurationError, match="below the halo width 8"):
        run_distributed(config, dims=(1, 1, 8))


def test_halo_exchange_two_ranks():
    grid = make_grid((8, 6, 5), 10.0, radius=2)
    topology = CartTopology((2, 1, 1))
    domains = decompose(grid, topology)
    values = np.arange(grid.npoints, dtype=np.float32).reshape(grid.n)
    transport = InProcessTransport(2, timeout=10)
    fields, buffers = [], []
    for domain in domains:
        local = make_grid(domain.n, 10.0, radius=2)
        sl = tuple(slice(o, o + n) for o, n in zip(domain.offset, domain.n))
        field = Field.zeros(local, "p")
        field.interior[...] = values[sl]
        fields.append(field)
        buffers.append(
            {
                key: HaloBuffer(local, *key)
                for key, nbr in topology.neighbors(domain.rank).items()
                if nbr is not None
            }
        )
    threads = [
        threading.Thread(
            target=exchange_halos,
            args=(fields[rank], topology, rank, buffers[rank], transport.endpoint(rank), 3),
        )
        for rank in range(2)
    ]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    left, right = fields
    assert np.array_equal(left.data[6:8, 2:-2, 2:-2], values[4:6])
    assert np.array_equal(right.data[0:2, 2:-2, 2:-2], values[2:4])
    assert np.all(left.data[0:2] == 0)
    assert np.all(right.data[6:8] == 0)
    assert buffers[0][(0, 1)].send_tag == tag(0, 1)
    assert buffers[1][(0, 0)].recv_tag == tag(0, 1)


def test_missing_message_times_out():
    transport = InProcessTransport(2, timeout=0.1)
    endpoint = transport.endpoint(0)
    endpoint.post_recv(1, tag(0, 0), np.zeros(4, dtype=np.float32))
    with pytest.raises(TransportError):
        endpoint.wait_all()


def test_step_mismatch_detected():
    transport = InProcessTransport(2, timeout=1.0)
    sender, receiver = transport.endpoint(1), transport.endpoint(0)
    sender.post_send(0, GATHER_TAG, np.ones(4, dtype=np.float32), step=2)
    sender.wait_all()
    receiver.post_recv(1, GATHER_TAG, np.zeros(4, dtype=np.float32), step=3)
    with pytest.raises(TransportError):
        receiver.wait_all()


def test_wire_header():
    message = encode_message(17, 2, 1, np.arange(6, dtype=np.float32))
    assert len(message) == HEADER.size + 24
    assert decode_header(message[: HEADER.size]) == (17, 2, 1, 6)
    assert np.array_equal(np.frombuffer(message[HEADER.size :], dtype="<f4"), np.arange(6))
    with pytest.raises(ValueError):
        decode_header(b"\x02" + message[1 : HEADER.size])


def test_read_hostfile():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "hosts")
        with open(path, "w") as handle:
            handle.write("# rank host:port\n0 127.0.0.1:5000\n1 node1:5001  # second\n")
        assert read_hostfile(path) == {0: ("127.0.0.1", 5000), 1: ("node1", 5001)}
        with open(path, "w") as handle:
            handle.write("0 127.0.0.1:5000\n2 node1:5001\n")
        with pytest.raises(ConfigurationError):
            read_hostfile(path)


def test_make_transport():
    assert isinstance(make_transport("inprocess", 4), InProcessTransport)
    with pytest.raises(ConfigurationError):
        make_transport("socket", 2)
    with pytest.raises(ConfigurationError):
        make_transport("carrier-pigeon", 2)


def test_distributed_rejects_other_propagators():
    config = SimConfig(ngrid=32, nsteps=5, ndamping=4, propagator="elastic_iso")
    with pytest.raises(ConfigurationError, match="only acoustic_iso_cd propagator"):
        run_distributed(config, dims=(2, 1, 1))


def test_distributed_rank_count_mismatch():
    config = SimConfig(ngrid=32, nsteps=5, ndamping=4)
    with pytest.raises(ConfigurationError, match="invalid decomposition"):
        run_distributed(config, dims=(2, 2, 4), transport=InProcessTransport(8))


@pytest.mark.parametrize("dims", [(2, 2, 2), (1, 2, 4), (2, 2, 4)])
def test_distributed_matches_single_rank(dims):
    config = SimConfig(ngrid=64, nsteps=50)
    expected, _ = run(config)
    shot, report = run_distributed(config, dims=dims)
    assert np.array_equal(shot.traces, expected.traces)
    assert report.kernel_seconds > 0


def test_distributed_free_surface_matches_single_rank():
    config = SimConfig(ngrid=48, nsteps=40, ndamping=6, free_surface=True, source_loc=(24, 24, 6))
    expected, _ = run(config)
    shot, _ = run_distributed(config, dims=(1, 2, 2))
    assert np.array_equal(shot.traces, expected.traces)


def _free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_socket_transport_matches_single_rank():
    config = SimConfig(ngrid=32, nsteps=20, ndamping=6)
    expected, _ = run(config)
    hosts = {0: ("127.0.0.1", _free_port()), 1: ("127.0.0.1", _free_port())}
    transports = [SocketTransport(hosts, rank, timeout=30) for rank in range(2)]
    results = {}

    def work(rank):
        results[rank] = run_distributed(config, dims=(2, 1, 1), transport=transports[rank])

    threads = [threading.Thread(target=work, args=(rank,)) for rank in range(2)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    for transport in transports:
        transport.close()
    assert results[1][0] is None
    assert np.array_equal(results[0][0].traces, expected.traces)


def test_distributed_cut_inside_damping_layer():
    config = SimConfig(ngrid=(40, 24, 24), nsteps=120, ndamping=(12, 4, 4), source_loc=(6, 12, 12))
    expected, _ = run(config)
    shot, _ = run_distributed(config, dims=(4, 1, 1))
    assert np.array_equal(shot.traces, expected.traces)
    assert np.abs(shot.traces).max() > 0


def test_distributed_progress_marks():
    config = SimConfig(ngrid=24, nsteps=200, ndamping=4, verbose=True)
    _, report = run_distributed(config, dims=(2, 1, 1))
    assert report.progress == [100, 200]
    quiet, _ = run_distributed(SimConfig(ngrid=24, nsteps=100, ndamping=4), dims=(2, 1, 1))
    assert quiet is not None

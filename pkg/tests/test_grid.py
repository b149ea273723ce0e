import numpy as np
import pytest
from fdmod.grid import Box, Field, make_grid, partition_regions
from fdmod.utils import ConfigurationError


def test_flat_offset_z_fastest():
    grid = make_grid((5, 6, 7), 10.0, radius=2)
    assert grid.shape == (9, 10, 11)
    assert grid.flat_offset(0, 0, 1) - grid.flat_offset(0, 0, 0) == 1
    assert grid.flat_offset(0, 1, 0) - grid.flat_offset(0, 0, 0) == 11
    assert grid.flat_offset(1, 0, 0) - grid.flat_offset(0, 0, 0) == 110
    assert grid.flat_offset(-2, -2, -2) == 0


def test_index_of_inverts_flat_offset():
    grid = make_grid((4, 3, 5), 20.0, radius=3)
    for index in [(0, 0, 0), (3, 2, 4), (-3, 1, 7), (1, -1, -3)]:
        assert grid.index_of(grid.flat_offset(*index)) == index


def test_flat_offset_out_of_range():
    grid = make_grid(4, 1.0, radius=1)
    with pytest.raises(IndexError):
        grid.flat_offset(5, 0, 0)


def test_invalid_grid():
    with pytest.raises(ConfigurationError):
        make_grid((0, 10, 10), 10.0)
    with pytest.raises(ConfigurationError):
        make_grid(10, (10.0, -1.0, 10.0))
    with pytest.raises(ConfigurationError):
        make_grid((10, 10), 10.0)


def test_field_from_interior_fills_edges():
    grid = make_grid((3, 3, 3), 1.0, radius=2)
    values = np.arange(27, dtype=np.float32).reshape(3, 3, 3)
    field = Field.from_interior(grid, "vp", values)
    assert np.array_equal(field.interior, values)
    assert field.data[0, 2, 2] == values[0, 0, 0]
    assert field.data[-1, -1, -1] == values[-1, -1, -1]


def test_periodic_ghosts():
    grid = make_grid((4, 4, 4), 1.0, radius=1)
    field = Field.from_interior(grid, "p", np.random.rand(4, 4, 4))
    field.fill_ghosts_periodic()
    assert np.array_equal(field.data[0, 1:-1, 1:-1], field.interior[-1])
    assert np.array_equal(field.data[-1, 1:-1, 1:-1], field.interior[0])


def test_unknown_component():
    grid = make_grid(4, 1.0)
    with pytest.raises(ConfigurationError):
        Field.zeros(grid, "pressure")


def test_partition_covers_interior_once():
    grid = make_grid((30, 24, 20), 10.0)
    partition = partition_regions(grid, (5, 4, 3))
    count = np.zeros(grid.n, dtype=int)
    for _, box in partition.boxes():
        count[tuple(slice(l, h) for l, h in zip(box.lo, box.hi))] += 1
    assert np.all(count == 1)
    assert partition.inner == Box((5, 4, 3), (25, 20, 17))
    assert partition.slabs["top"] == Box((5, 4, 0), (25, 20, 3))


def test_partition_zero_damping():
    grid = make_grid(10, 10.0)
    partition = partition_regions(grid, 0)
    assert partition.inner == grid.interior
    assert all(box.is_empty for box in partition.slabs.values())


def test_partition_too_thick():
    grid = make_grid((10, 40, 40), 10.0)
    with pytest.raises(ConfigurationError):
        partition_regions(grid, (5, 5, 5))


def test_partition_restrict():
    grid = make_grid(20, 10.0)
    partition = partition_regions(grid, 4)
    local = partition.restrict(Box((10, 0, 0), (20, 20, 20)), (10, 0, 0))
    assert local.inner == Box((0, 4, 4), (6, 16, 16))
    assert local.slabs["left"].is_empty
    assert local.slabs["right"] == Box((6, 0, 0), (10, 20, 20))


def test_box_split_order():
    box = Box((0, 0, 0), (10, 4, 4))
    pieces = box.split(0, 3)
    assert [p.lo[0] for p in pieces] == [0, 3, 7]
    assert sum(p.size for p in pieces) == box.size
    assert len(Box((0, 0, 0), (2, 4, 4)).split(0, 8)) == 2

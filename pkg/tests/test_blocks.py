import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdbrf.blocks import BlockVector, ShapeError, SpaceShape, block_combine, block_dot, block_norm


def bv(p, *d):
    return BlockVector(p, list(d))


def test_dot_examples():
    assert block_dot(bv([1, 2], [3]), bv([4, 5], [6])) == 32.0
    u = bv([3.0], [4.0])
    assert block_dot(u, u) == 25.0
    assert block_norm(u) == 5.0
    assert block_dot(u, u.shape.zeros()) == 0.0


def test_norm_examples():
    assert block_norm(SpaceShape(2, (3, 1)).zeros()) == 0.0
    assert block_norm(bv([1, 1], [1, 1])) == 2.0


def test_combine_examples():
    u, v = bv([1.0], [2.0]), bv([1.0], [1.0])
    assert block_combine(1.0, u, 0.0, v).flatten().tolist() == [1.0, 2.0]
    assert block_norm(block_combine(1.0, u, -1.0, u)) == 0.0
    assert block_combine(2.0, u, 3.0, v).flatten().tolist() == [5.0, 7.0]


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        block_dot(bv([1.0], [1.0]), bv([1.0], [1.0, 2.0]))
    with pytest.raises(ShapeError):
        block_combine(1.0, bv([1.0], [1.0]), 1.0, bv([1.0, 2.0], [1.0]))


def test_non_finite_rejected_unless_allowed():
    with pytest.raises(ValueError):
        bv([np.nan], [1.0])
    assert not BlockVector([np.inf], [[1.0]], check_finite=False).is_finite()


def test_immutable():
    u = bv([1.0], [2.0])
    with pytest.raises((AttributeError, TypeError)):
        u.primal = np.zeros(1)
    with pytest.raises(ValueError):
        u.primal[0] = 5.0


def test_flat_round_trip():
    shape = SpaceShape(3, (2, 1))
    flat = np.arange(6.0)
    u = BlockVector.from_flat(flat, shape)
    assert [b.tolist() for b in u.blocks()] == [[0, 1, 2], [3, 4], [5]]
    assert np.array_equal(u.flatten(), flat)
    with pytest.raises(ShapeError):
        BlockVector.from_flat(np.zeros(5), shape)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_cauchy_schwarz_and_symmetry(a, b):
    shape = SpaceShape(1, (2, 1))
    u, v = BlockVector.from_flat(a, shape), BlockVector.from_flat(b, shape)
    assert block_dot(u, v) == pytest.approx(block_dot(v, u))
    assert abs(block_dot(u, v)) <= block_norm(u) * block_norm(v) * (1 + 1e-12) + 1e-9

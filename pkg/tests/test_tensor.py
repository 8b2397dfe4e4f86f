import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmn.errors import DimensionError, DomainError
from pmn.tensor import Rng, flat_index, matmul, reduce


def test_matmul_matches_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(matmul(a, b), a @ b)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(3, 4\).*\(5, 2\)"):
        matmul(np.zeros((3, 4)), np.zeros((5, 2)))


@pytest.mark.parametrize("op", ["sum", "mean", "min", "max"])
def test_reduce_matches_numpy(op):
    a = np.arange(12.0).reshape(3, 4) - 5
    np.testing.assert_allclose(reduce(a, op, axis=1), getattr(np, op)(a, axis=1))


def test_reduce_argmin_picks_lowest_index_on_ties():
    assert int(reduce(np.array([2.0, 1.0, 1.0, 3.0]), "argmin")) == 1


def test_reduce_empty_is_domain_error():
    with pytest.raises(DomainError):
        reduce(np.zeros(0), "min")


def test_flat_index_row_major():
    assert flat_index((2, 3, 4), (1, 2, 3)) == 1 * 12 + 2 * 4 + 3
    with pytest.raises(IndexError):
        flat_index((2, 3), (2, 0))
    with pytest.raises(DimensionError):
        flat_index((2, 3), (1,))


@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.data())
def test_flat_index_agrees_with_ravel_multi_index(shape, data):
    index = tuple(data.draw(st.integers(0, s - 1)) for s in shape)
    assert flat_index(tuple(shape), index) == np.ravel_multi_index(index, shape)


def test_rng_streams_are_reproducible_and_distinct():
    a = Rng(7).spawn(1).normal(size=5)
    b = Rng(7).spawn(1).normal(size=5)
    c = Rng(7).spawn(2).normal(size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.integers(1, 50))
def test_permutation_is_a_permutation(seed, n):
    assert sorted(Rng(seed).permutation(n).tolist()) == list(range(n))

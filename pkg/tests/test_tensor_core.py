import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drdn.errors import NumericalError, ShapeMismatch
from drdn.tensor_core import (
    Rng,
    as_tensor,
    check_finite,
    elementwise,
    fill_gaussian,
    flat_index,
    reduce,
    unflat_index,
    zeros,
)


def t(values, shape=None):
    arr = np.asarray(values, dtype=np.float32)
    return arr.reshape(shape or (1, 1, 1, arr.size))


def test_sub_self_is_zero(nprng):
    a = nprng.standard_normal((2, 3, 4, 5)).astype(np.float32)
    out = elementwise("sub", a, a)
    assert out.shape == a.shape and not out.any()


def test_relu_and_scale():
    np.testing.assert_array_equal(elementwise("max_with_zero", t([-1, 0, 2])), t([0, 0, 2]))
    np.testing.assert_array_equal(elementwise("scale", t([1, 2, 3]), 0.5), t([0.5, 1, 1.5]))


def test_add_mul_scalar_and_tensor():
    a = t([1, 2, 3])
    np.testing.assert_array_equal(elementwise("add", a, 1.0), t([2, 3, 4]))
    np.testing.assert_array_equal(elementwise("mul", a, a), t([1, 4, 9]))
    assert elementwise("add", a, a).dtype == np.float32


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        elementwise("add", t([1, 2]), t([1, 2, 3]))


def test_unknown_op():
    with pytest.raises(ValueError):
        elementwise("div", t([1]), t([1]))


def test_reductions():
    assert reduce("sum", np.ones((1, 1, 2, 2), np.float32)).item() == 4
    assert reduce("mean", t([2, 4])).item() == 3
    assert reduce("sum_of_squares", t([3, 4])).item() == 25


def test_reduction_shapes():
    a = np.ones((2, 3, 4, 5), np.float32)
    assert reduce("sum", a, axes=(0, 2, 3)).shape == (1, 3, 1, 1)
    assert reduce("mean", a, axes=1).shape == (2, 1, 4, 5)
    with pytest.raises(ValueError):
        reduce("sum", a, axes=4)


def test_reduction_accumulates_in_double():
    a = np.full((1, 1, 1000, 1000), 0.1, np.float32)
    assert abs(reduce("sum", a).item() - 1e5 * np.float32(0.1) * 10) < 1e-2


def test_gaussian_zero_std_is_constant(rng):
    out = fill_gaussian((2, 2, 3, 3), 0.7, 0.0, rng)
    np.testing.assert_array_equal(out, np.float32(0.7))


def test_gaussian_mean_clt_bound():
    sigma = 25 / 255
    out = fill_gaussian((1, 1, 1000, 1000), 0.0, sigma, Rng(7))
    assert abs(out.mean(dtype=np.float64)) < 3 * sigma / 1000


def test_gaussian_variance_moment():
    out = fill_gaussian((1, 1, 1, 100_000), 0.0, 2.0, Rng(3)).astype(np.float64)
    assert abs(out.var() - 4.0) / 4.0 < 0.05


def test_gaussian_deterministic():
    a = fill_gaussian((2, 3, 4, 5), 0.0, 1.0, Rng(99))
    b = fill_gaussian((2, 3, 4, 5), 0.0, 1.0, Rng(99))
    assert a.tobytes() == b.tobytes()
    assert a.dtype == np.float32


def test_spawned_streams_are_independent_and_reproducible():
    a = Rng(5).spawn(1).normal((1, 1, 1, 8))
    b = Rng(5).spawn(1).normal((1, 1, 1, 8))
    c = Rng(5).spawn(2).normal((1, 1, 1, 8))
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_negative_std_rejected(rng):
    with pytest.raises(ValueError):
        fill_gaussian((1, 1, 1, 1), 0, -1, rng)


shapes = st.tuples(*[st.integers(1, 6)] * 4)


@given(shapes, st.data())
def test_index_round_trip(shape, data):
    n, c, h, w = (data.draw(st.integers(0, s - 1)) for s in shape)
    offset = flat_index(shape, n, c, h, w)
    assert unflat_index(shape, offset) == (n, c, h, w)
    arr = np.arange(int(np.prod(shape))).reshape(shape)
    assert arr[n, c, h, w] == offset


@given(shapes)
def test_elementwise_preserves_shape(shape):
    a = zeros(shape)
    assert elementwise("add", a, 1.0).shape == shape
    assert reduce("sum", a, axes=(0, 2, 3)).shape == (1, shape[1], 1, 1)


def test_as_tensor_and_zeros_validate():
    with pytest.raises(ShapeMismatch):
        as_tensor(np.zeros((2, 2)))
    with pytest.raises(ShapeMismatch):
        zeros((1, 0, 2, 2))


def test_check_finite_forced():
    with pytest.raises(NumericalError):
        check_finite(t([1.0, np.nan]), force=True)
    check_finite(t([1.0, 2.0]), force=True)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as nps

from sigdfp import autodiff as ad

from oracles import central_difference

small = st.floats(-1.5, 1.5, allow_nan=False)
positive = st.floats(0.2, 2.0, allow_nan=False)


def grad_of(fn, *arrays):
    with ad.Tape() as tape:
        vs = [ad.Var(a) for a in arrays]
        out = fn(*vs)
        tape.backward(out)
    return [v.grad if v.grad is not None else np.zeros_like(v.value) for v in vs]


def check(fn, *arrays, tol=1e-7):
    """Reverse mode against central differences; ``fn`` must also run on plain arrays."""
    arrs = [np.array(a, dtype=float) for a in arrays]
    for i, g in enumerate(grad_of(fn, *arrs)):
        fd = central_difference(lambda: float(fn(*arrs)), arrs[i])
        assert np.allclose(g, fd, rtol=1e-6, atol=tol), (i, g, fd)


vec = nps.arrays(np.float64, st.integers(1, 5), elements=small)


@settings(max_examples=30, deadline=None)
@given(x=vec)
def test_unary_primitives(x):
    for fn in (ad.exp, ad.tanh, ad.sigmoid, ad.square, lambda v: ad.power(v, 3), ad.neg):
        check(lambda v: ad.total(fn(v)), x)


@settings(max_examples=30, deadline=None)
@given(x=nps.arrays(np.float64, st.integers(1, 5), elements=positive))
def test_log_and_reciprocal(x):
    check(lambda v: ad.total(ad.log(v)), x)
    check(lambda v: ad.total(ad.reciprocal(v)), x)
    check(lambda v: ad.total(1.0 / v + v / 2.0 - 3.0 / v), x)


@settings(max_examples=30, deadline=None)
@given(a=nps.arrays(np.float64, (3, 4), elements=small), b=nps.arrays(np.float64, (4,), elements=small))
def test_broadcasting_binary_ops(a, b):
    check(lambda x, y: ad.total(x * y + y - x), a, b)
    check(lambda x, y: ad.total(ad.tanh(x - y) * y), a, b)


@settings(max_examples=20, deadline=None)
@given(x=nps.arrays(np.float64, (5, 3), elements=small), W=nps.arrays(np.float64, (3, 2), elements=small),
       b=nps.arrays(np.float64, (2,), elements=small))
def test_affine_and_matmul(x, W, b):
    check(lambda x_, W_, b_: ad.total(ad.tanh(ad.affine(x_, W_, b_))), x, W, b)
    check(lambda x_, W_: ad.total(ad.square(x_ @ W_)), x, W)


def test_columns_take_and_mean():
    a, b, s = np.array([0.3, -1.0, 2.0]), np.array([[1.0, 2.0], [0.5, -0.5], [0.1, 0.2]]), np.array(0.7)
    check(lambda x, y, z: ad.mean(ad.square(ad.columns([x, y, z, 1.5]))), a, b, s)
    check(lambda x: ad.total(x[1:] * x[:-1]), a)
    check(lambda y: ad.total(ad.total(y, axis=1) ** 2), b)


def test_relu_gradient_away_from_kink():
    x = np.array([-1.0, 0.5, 2.0])
    (g,) = grad_of(lambda v: ad.total(ad.relu(v) * 3.0), x)
    assert np.array_equal(g, [0.0, 3.0, 3.0])


def test_plain_arrays_fall_through():
    x = np.array([1.0, 2.0])
    assert isinstance(ad.exp(x), np.ndarray)
    assert isinstance(ad.affine(np.ones((1, 2)), np.ones((2, 2)), np.zeros(2)), np.ndarray)
    assert isinstance(ad.columns([x, x]), np.ndarray)


def test_shared_subexpression_accumulates():
    (g,) = grad_of(lambda v: ad.total(v * v + v), np.array([2.0, -1.0]))
    assert np.array_equal(g, [5.0, -1.0])


def test_backward_needs_scalar():
    with ad.Tape() as tape:
        v = ad.Var(np.ones(3))
        with pytest.raises(ValueError):
            tape.backward(v * 2.0)


def test_untaped_ops_record_nothing():
    tape = ad.Tape()
    v = ad.Var(np.ones(2))
    _ = ad.exp(v)
    assert tape.nodes == []

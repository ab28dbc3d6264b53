"""Tape engine: forward values, backward rules, and the grad_check harness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goat_wsi import autodiff as ad
from goat_wsi.autodiff import Tape, Tensor, grad_check
from goat_wsi.errors import ContractError, DimensionError, NumericsError

RNG = np.random.default_rng(7)


def t(data, rg=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


# ---------------------------------------------------------------------------
# forward values


def test_matmul_examples():
    i2 = np.eye(2)
    a = t([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(a, t(i2)).data, a.data)
    assert np.array_equal(ad.matmul(t([[1.0, 2.0]]), t([[3.0], [4.0]])).data, [[11.0]])
    z = ad.matmul(t(np.zeros((2, 3))), t(RNG.normal(size=(3, 4))))
    assert np.array_equal(z.data, np.zeros((2, 4)))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))


def test_softmax_examples():
    assert np.allclose(ad.softmax_lastdim(t([0.0, 0.0])).data, [0.5, 0.5])
    out = ad.softmax_lastdim(t([np.log(2.0), 0.0])).data
    assert np.allclose(out, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)
    masked = ad.softmax_lastdim(t([5.0, 123.0]), mask=np.array([True, False]))
    assert np.array_equal(masked.data, [1.0, 0.0])


def test_softmax_fully_masked_row_raises():
    with pytest.raises(ContractError, match="masked"):
        ad.softmax_lastdim(t(np.ones((2, 2))),
                           mask=np.array([[True, True], [False, False]]))


def test_pointwise_fixed_points():
    assert ad.tanh(t([0.0])).data[0] == 0.0
    assert ad.sigmoid(t([0.0])).data[0] == 0.5
    assert np.array_equal(ad.relu(t([-1.0, 2.0])).data, [0.0, 2.0])
    assert np.array_equal(ad.mul(t([1.0, 2.0]), t([3.0, 4.0])).data, [3.0, 8.0])


def test_restricted_broadcasting():
    # (N, D) + (D,) and (N, D) - (N, 1) are allowed
    a = t(RNG.normal(size=(3, 4)))
    assert ad.add(a, t(np.ones(4))).data.shape == (3, 4)
    assert ad.sub(a, t(np.ones((3, 1)))).data.shape == (3, 4)
    assert ad.mul(t(RNG.normal(size=(5, 2, 3))), t(np.ones((5, 2, 1)))).data.shape == (5, 2, 3)
    with pytest.raises(DimensionError):
        ad.add(a, t(np.ones(3)))  # (3,4) + (3,) is not bias-style


def test_nonfinite_forward_raises():
    with pytest.raises(NumericsError):
        ad.exp(t([1000.0]))
    with pytest.raises(NumericsError):
        ad.log(t([-1.0]))
    with pytest.raises(NumericsError):
        ad.div(t([1.0]), t([0.0]))


# ---------------------------------------------------------------------------
# backward mechanics


def test_backward_square():
    x = t(3.0)
    with Tape() as tape:
        y = ad.mul(x, x)
        tape.backward(y)
    assert tape.grad(x).data == pytest.approx(6.0)


def test_backward_softmax_sum_is_constant():
    x = t(RNG.normal(size=4))
    with Tape() as tape:
        y = ad.tsum(ad.softmax_lastdim(x))
        tape.backward(y)
    assert np.allclose(tape.grad(x).data, 0.0, atol=1e-12)


def test_backward_fanout_accumulates():
    a = t([1.0, 2.0])
    with Tape() as tape:
        y = ad.tsum(ad.add(ad.mul(a, a), a))  # sum(a^2 + a) -> 2a + 1
        tape.backward(y)
    assert np.allclose(tape.grad(a).data, 2.0 * a.data + 1.0)


def test_backward_seed_must_be_scalar_and_on_tape():
    x = t([1.0, 2.0])
    with Tape() as tape:
        y = ad.mul(x, x)
        with pytest.raises(ContractError, match="scalar"):
            tape.backward(y)
    with Tape() as tape:
        _ = ad.tsum(ad.mul(x, x))
        foreign = ad.tsum(x)  # recorded on the same tape; fine
        tape.backward(foreign)
    with Tape() as other:
        with pytest.raises(ContractError, match="not produced"):
            other.backward(foreign)


def test_constants_get_no_gradient():
    x, c = t([1.0, 2.0]), t([3.0, 4.0], rg=False)
    with Tape() as tape:
        tape.backward(ad.tsum(ad.mul(x, c)))
    assert tape.grad(c) is None
    assert np.array_equal(tape.grad(x).data, c.data)


def test_no_tape_records_nothing():
    x = t([1.0])
    y = ad.mul(x, x)
    assert y.requires_grad is False


def test_amax_ties_route_to_lowest_row():
    x = t([[2.0, 1.0], [2.0, 5.0]])
    with Tape() as tape:
        tape.backward(ad.tsum(ad.amax_axis0(x)))
    assert np.array_equal(tape.grad(x).data, [[1.0, 0.0], [0.0, 1.0]])


def test_segment_softmax_matches_dense_per_segment():
    x = RNG.normal(size=(6, 3))
    seg = np.array([0, 0, 1, 1, 1, 2])
    y = ad.segment_softmax(t(x), seg, 3).data
    for s in range(3):
        rows = seg == s
        dense = ad.softmax_lastdim(t(x[rows].T)).data.T
        assert np.allclose(y[rows], dense, atol=1e-15)
        assert np.allclose(y[rows].sum(axis=0), 1.0, atol=1e-12)


def test_gather_rows_backward_scatter_adds():
    x = t(RNG.normal(size=(4, 2)))
    idx = np.array([1, 1, 3])
    with Tape() as tape:
        tape.backward(ad.tsum(ad.gather_rows(x, idx)))
    expected = np.zeros((4, 2))
    np.add.at(expected, idx, 1.0)
    assert np.array_equal(tape.grad(x).data, expected)


# ---------------------------------------------------------------------------
# grad_check across the op surface


def op_cases():
    r = np.random.default_rng(11)  # constants fixed across repeated f(x) calls
    m = r.normal(size=(3, 4))
    seg = np.array([0, 0, 1, 2, 2])
    c31, c42, c23 = r.normal(size=(3, 1)), r.normal(size=(4, 2)), r.normal(size=(2, 3))
    c43, c26, c34 = r.normal(size=(4, 3)), r.normal(size=(2, 6)), r.normal(size=(3, 4))
    c54 = r.normal(size=(5, 4))
    return [
        ("add_bias", lambda x: ad.tsum(ad.add(x, Tensor(np.ones(4)))), m),
        ("sub", lambda x: ad.tsum(ad.sub(Tensor(np.ones((3, 4))), x)), m),
        ("mul_bcast", lambda x: ad.tsum(ad.mul(x, Tensor(c31))), m),
        ("div", lambda x: ad.tsum(ad.div(x, Tensor(np.full((3, 4), 2.5)))), m),
        ("div_denom", lambda x: ad.tsum(ad.div(Tensor(m), x)), m + 5.0),
        ("neg", lambda x: ad.tsum(ad.neg(x)), m),
        ("matmul_l", lambda x: ad.tsum(ad.matmul(x, Tensor(c42))), m),
        ("matmul_r", lambda x: ad.tsum(ad.matmul(Tensor(c23), x)), m),
        ("transpose", lambda x: ad.tsum(ad.mul(ad.transpose(x), Tensor(c43))), m),
        ("reshape", lambda x: ad.tsum(ad.mul(ad.reshape(x, (2, 6)), Tensor(c26))), m),
        ("relu", lambda x: ad.tsum(ad.relu(x)), m + np.sign(m) * 0.5),
        ("tanh", lambda x: ad.tsum(ad.tanh(x)), m),
        ("sigmoid", lambda x: ad.tsum(ad.sigmoid(x)), m),
        ("exp", lambda x: ad.tsum(ad.exp(x)), m),
        ("log", lambda x: ad.tsum(ad.log(x)), np.abs(m) + 0.5),
        ("sqrt", lambda x: ad.tsum(ad.sqrt(x)), np.abs(m) + 0.5),
        ("sum_axis", lambda x: ad.tsum(ad.mul(ad.tsum(x, axis=1, keepdims=True),
                                              Tensor(c31))), m),
        ("amax", lambda x: ad.tsum(ad.amax_axis0(x)), m),
        ("softmax", lambda x: ad.tsum(ad.mul(ad.softmax_lastdim(x), Tensor(c34))), m),
        ("gather", lambda x: ad.tsum(ad.mul(ad.gather_rows(x, np.array([0, 2, 2])),
                                            Tensor(c34))), m),
        ("segment_sum", lambda x: ad.tsum(ad.mul(ad.segment_sum(x, seg, 3),
                                                 Tensor(c34))), r.normal(size=(5, 4))),
        ("segment_softmax", lambda x: ad.tsum(ad.mul(ad.segment_softmax(x, seg, 3),
                                                     Tensor(c54))), r.normal(size=(5, 4))),
    ]


@pytest.mark.parametrize("name,fn,x0", op_cases(), ids=[c[0] for c in op_cases()])
def test_grad_check_per_op(name, fn, x0):
    err = grad_check(fn, Tensor(np.array(x0, dtype=np.float64)))
    assert err < 1e-6, f"{name}: relative error {err}"


def test_grad_check_linear_is_near_exact():
    w = Tensor(RNG.normal(size=(4, 1)))
    err = grad_check(lambda x: ad.tsum(ad.matmul(x, w)), Tensor(RNG.normal(size=(3, 4))))
    assert err < 1e-10


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8),
       st.floats(-100, 100))
def test_softmax_shift_invariance(row, shift):
    x = np.array(row)
    a = ad.softmax_lastdim(Tensor(x)).data
    b = ad.softmax_lastdim(Tensor(x + shift)).data
    assert np.all(np.abs(a - b) < 1e-12)
    assert abs(a.sum() - 1.0) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matmul_associativity(seed):
    r = np.random.default_rng(seed)
    a, b, c = (Tensor(r.normal(size=s)) for s in ((3, 4), (4, 5), (5, 2)))
    left = ad.matmul(ad.matmul(a, b), c).data
    right = ad.matmul(a, ad.matmul(b, c)).data
    denom = max(1.0, np.abs(left).max())
    assert np.abs(left - right).max() / denom < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 40), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_segment_softmax_sums_to_one(n_rows, n_segments, seed):
    r = np.random.default_rng(seed)
    seg = r.integers(0, n_segments, size=n_rows)
    seg[:n_segments] = np.arange(n_segments)  # no empty segments
    y = ad.segment_softmax(Tensor(r.normal(size=n_rows)), seg, n_segments).data
    sums = np.bincount(seg, weights=y, minlength=n_segments)
    assert np.allclose(sums, 1.0, atol=1e-12)


def test_tape_nesting_is_lifo():
    x = t([2.0])
    with Tape() as outer:
        _ = ad.mul(x, x)
        with Tape() as inner:
            y = ad.mul(x, x)
            inner.backward(ad.tsum(y))
        assert len(outer.nodes) == 1  # inner ops never leak outward

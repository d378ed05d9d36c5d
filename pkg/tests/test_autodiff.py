import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torsionpinn.autodiff import (Jet2, Var, exp, jet_constant, jet_exp, jet_mul, jet_reciprocal, jet_seed,
                                  jet_sigmoid, jet_tanh, linear, param_gradient, reciprocal, tanh)
from torsionpinn.errors import StructuralError, TrainingDivergenceError

from conftest import central_diff, rel_close


def scalar_jet(x):
    return Jet2(x, np.array([1.0]), np.array([0.0]))


@pytest.mark.parametrize("x", [-2.0, -0.3, 0.0, 0.7, 3.0])
def test_elementary_jets_match_closed_forms(x):
    t = jet_tanh(scalar_jet(x))
    s = 1 - math.tanh(x) ** 2
    assert t.value == pytest.approx(math.tanh(x))
    assert t.d1[0] == pytest.approx(s)
    assert t.d2[0] == pytest.approx(-2 * math.tanh(x) * s)

    e = jet_exp(scalar_jet(x))
    assert e.d1[0] == pytest.approx(math.exp(x)) and e.d2[0] == pytest.approx(math.exp(x))

    sig = jet_sigmoid(scalar_jet(x))
    p = 1 / (1 + math.exp(-x))
    assert sig.value == pytest.approx(p, rel=1e-14)
    assert sig.d1[0] == pytest.approx(p * (1 - p), rel=1e-12)
    assert sig.d2[0] == pytest.approx(p * (1 - p) * (1 - 2 * p), rel=1e-10, abs=1e-15)

    if x != 0.0:
        r = jet_reciprocal(scalar_jet(x))
        assert r.d1[0] == pytest.approx(-1 / x ** 2)
        assert r.d2[0] == pytest.approx(2 / x ** 3)


def test_product_rule_has_cross_term():
    a, b = jet_seed([0.4, -1.3])
    # f = x * y: pure second derivatives vanish, first derivatives swap
    f = jet_mul(a, b)
    assert f.value == pytest.approx(0.4 * -1.3)
    np.testing.assert_allclose(f.d1, [-1.3, 0.4])
    np.testing.assert_allclose(f.d2, [0.0, 0.0])
    # g = x * x: d2 = 2 comes only from the cross term
    g = a * a
    np.testing.assert_allclose(g.d2, [2.0, 0.0])


def test_sigmoid_saturates_without_overflow():
    with np.errstate(all="raise"):
        hi = jet_sigmoid(Jet2(np.array([750.0, 75.0]), np.ones((1, 2)), np.zeros((1, 2))))
        lo = jet_sigmoid(Jet2(np.array([-750.0, -75.0]), np.ones((1, 2)), np.zeros((1, 2))))
    assert np.all(hi.value == 1.0) and np.all(lo.value == 0.0)
    assert np.all(np.isfinite(hi.d1)) and np.all(np.isfinite(lo.d2))


def test_jet_dimension_mismatch_raises():
    a = jet_constant(1.0, 2)
    b = jet_constant(1.0, 3)
    with pytest.raises(StructuralError):
        a + b
    with pytest.raises(StructuralError):
        jet_mul(a, b)
    with pytest.raises(StructuralError):
        Jet2(1.0, np.zeros(2), np.zeros(3))


def test_composite_jet_against_finite_differences():
    # f(x, y) = exp(tanh(x) * y) / (1 + y^2)
    def f(x, y):
        return math.exp(math.tanh(x) * y) / (1 + y * y)

    p = np.array([0.3, -0.8])
    x, y = jet_seed(p)
    jet = jet_exp(jet_tanh(x) * y) * jet_reciprocal(1.0 + y * y)
    h = 1e-4
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        d1 = (f(*(p + e)) - f(*(p - e))) / (2 * h)
        d2 = (f(*(p + e)) - 2 * f(*p) + f(*(p - e))) / h ** 2
        assert jet.d1[i] == pytest.approx(d1, rel=1e-7)
        assert jet.d2[i] == pytest.approx(d2, rel=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_var_ops_gradients(batch, width, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-1, 1, (batch, width))
    w = rng.uniform(-1, 1, (3, width))
    b = rng.uniform(-1, 1, 3)

    def loss_np(xf):
        xx = xf.reshape(batch, width)
        z = xx @ w.T + b
        return float(np.sum(np.exp(np.tanh(z)) * z / (2.0 + z * z)))

    def loss_var(v):
        z = linear(v, w, b)
        return (exp(tanh(z)) * z * reciprocal(2.0 + z * z)).sum()

    value, grad = param_gradient(lambda th: loss_var(th.segment(0, (batch, width))), x0.reshape(-1))
    assert value == pytest.approx(loss_np(x0.reshape(-1)))
    fd = central_diff(loss_np, x0.reshape(-1))
    assert rel_close(grad, fd, 1e-6, 1e-9)


def test_var_indexing_and_division():
    x = np.array([1.0, 2.0, 4.0])

    def f(v):
        return (v[0] / v[2] + 3.0 / v[1] - v[np.array([0, 0])].sum()).sum()

    _, g = param_gradient(f, x)
    np.testing.assert_allclose(g, [1 / 4 - 2, -3 / 4, -1 / 16])


def test_backward_requires_scalar():
    v = Var(np.ones(3))
    with pytest.raises(StructuralError):
        (v * 2.0).backward()


def test_param_gradient_non_finite_and_constant():
    with pytest.raises(TrainingDivergenceError):
        param_gradient(lambda th: (th * np.inf).sum(), np.ones(2))
    value, grad = param_gradient(lambda th: 3.0, np.ones(4))
    assert value == 3.0 and np.all(grad == 0)


def test_ndarray_on_left_defers_to_var():
    v = Var(np.array([1.0, 2.0]))
    out = np.array([3.0, 4.0]) * v
    assert isinstance(out, Var)
    np.testing.assert_array_equal(out.value, [3.0, 8.0])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkforge import jets
from gkforge.jets import Jet

floats = st.floats(-1.5, 1.5, allow_nan=False)


def var(points, order=4):
    return Jet.variables(np.atleast_2d(points), order)


def test_variables_are_coordinate_functions():
    X = var([[0.3, -0.2]], 3)
    x = X[..., 0] if X.ndim > 1 else X
    assert X.value.shape == (1, 2)
    assert np.allclose(X.partial((1, 0))[0], [1.0, 0.0])
    assert np.allclose(X.partial((0, 1))[0], [0.0, 1.0])
    assert np.allclose(X.partial((2, 0))[0], 0.0)
    assert x.value.shape == (1,)


@given(floats, floats)
@settings(max_examples=50, deadline=None)
def test_polynomial_derivatives_exact(a, b):
    X = var([[a, b]])
    x, y = X[:, 0], X[:, 1]
    f = x ** 3 * y + x * y ** 2
    assert np.isclose(f.partial((1, 0))[0], 3 * a * a * b + b * b)
    assert np.isclose(f.partial((2, 1))[0], 6 * a)
    assert np.isclose(f.partial((1, 1))[0], 3 * a * a + 2 * b)
    assert np.isclose(f.partial((3, 1))[0], 6.0)
    assert f.partial((4, 0))[0] == 0.0


@given(floats, floats)
@settings(max_examples=50, deadline=None)
def test_exp_log_roundtrip(a, b):
    X = var([[a, b]])
    f = X[:, 0] * 0.5 + X[:, 1] ** 2
    g = jets.log(jets.exp(f))
    assert np.max(np.abs(g.coef - f.coef)) < 1e-10


@given(floats, floats)
@settings(max_examples=30, deadline=None)
def test_trig_identity(a, b):
    X = var([[a, b]])
    f = X[:, 0] * X[:, 1]
    one = jets.sin(f) ** 2 + jets.cos(f) ** 2
    assert abs(one.value[0] - 1) < 1e-12
    assert np.max(np.abs(one.coef[1:])) < 1e-11


def test_division_and_reciprocal():
    X = var([[0.4, 0.7]])
    f = X[:, 0] + 2.0
    r = 1.0 / f
    prod = r * f
    assert abs(prod.value[0] - 1) < 1e-14
    assert np.max(np.abs(prod.coef[1:])) < 1e-13
    assert np.isclose(r.partial((2, 0))[0], 2 / 2.4 ** 3)


def test_sqrt_and_power():
    X = var([[1.3, 0.0]])
    x = X[:, 0]
    assert np.isclose(jets.sqrt(x).partial((1, 0))[0], 0.5 / np.sqrt(1.3))
    assert np.isclose(jets.power(x, 2.5).partial((2, 0))[0], 2.5 * 1.5 * 1.3 ** 0.5)


def test_atan2_matches_angle_derivative():
    X = var([[0.6, 0.8]])
    th = jets.atan2(X[:, 1], X[:, 0])
    assert np.isclose(th.value[0], np.arctan2(0.8, 0.6))
    assert np.isclose(th.partial((1, 0))[0], -0.8)
    assert np.isclose(th.partial((0, 1))[0], 0.6)


def test_log_domain_error():
    X = var([[-1.0, 0.0]])
    with pytest.raises(jets.DomainError):
        jets.log(X[:, 0])


def test_complex_jets():
    X = var([[0.2, 0.5]])
    z = X[:, 0] + X[:, 1] * 1j
    e = jets.exp(z)
    assert np.isclose(e.value[0], np.exp(0.2 + 0.5j))
    # d/dx e^z = e^z, d/dy e^z = i e^z
    assert np.isclose(e.partial((0, 1))[0], 1j * np.exp(0.2 + 0.5j))
    assert np.allclose(e.real.coef + 1j * e.imag.coef, e.coef)
    assert np.allclose(e.conj().value, np.conj(e.value))


def test_matmul_and_inverse():
    rng = np.random.default_rng(3)
    X = var(rng.normal(size=(5, 2)), 2)
    x, y = X[:, 0], X[:, 1]
    M = jets.stack([jets.stack([x * 0 + 3.0, x], axis=-1), jets.stack([y, x * 0 + 2.0], axis=-1)], axis=-2)
    I = jets.matmul(M, jets.inv(M))
    assert np.max(np.abs(I.value - np.eye(2))) < 1e-12
    assert np.max(np.abs(I.coef[1:])) < 1e-12


def test_inverse_refuses_singular():
    X = var([[0.0, 0.0]], 1)
    M = jets.stack([jets.stack([X[:, 0], X[:, 0]], -1), jets.stack([X[:, 0], X[:, 0]], -1)], -2)
    with pytest.raises(np.linalg.LinAlgError):
        jets.inv(M)


def test_einsum_accepts_constants():
    X = var([[0.1, 0.2]], 2)
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = jets.einsum("ij,bj->bi", A, X)
    assert np.allclose(out.value, X.value @ A.T)
    assert np.allclose(out.partial((1, 0)), [[1.0, 3.0]])


def test_grad_places_axis_after_batch():
    X = var(np.zeros((3, 2)), 2)
    f = X[:, 0] * X[:, 1]
    G = f.grad()
    assert G.shape == (3, 2)
    assert G.order == 1


def test_truncate_and_order_limits():
    X = var([[0.1, 0.2]], 3)
    assert X.truncate(1).order == 1
    with pytest.raises(jets.JetOrderError):
        X.truncate(5)
    with pytest.raises(jets.JetOrderError):
        Jet.variables(np.zeros((1, 2)), jets.MAX_ORDER + 1)


@given(floats, floats)
@settings(max_examples=25, deadline=None)
def test_compose_taylor_matches_direct_evaluation(a, b):
    # g(x, y) = f(u(x, y), v(x, y)) through Taylor substitution
    X = var([[a, b]], 3)
    x, y = X[:, 0], X[:, 1]
    u, v = x * y + 0.3, jets.sin(x)
    U = var(np.stack([u.value, v.value], axis=-1), 3)
    fU = jets.exp(U[:, 0]) * U[:, 1] ** 2
    direct = jets.exp(u) * v ** 2
    composed = jets.compose_taylor(fU, [u - u.value, v - v.value])
    assert np.max(np.abs(composed.coef - direct.coef)) < 1e-10


def test_from_gradient_rebuilds_jet():
    rng = np.random.default_rng(0)
    X = var(rng.normal(size=(4, 2)), 3)
    f = jets.exp(X[:, 0]) * jets.cos(X[:, 1])
    rebuilt = jets.from_gradient(f.value, f.grad())
    assert rebuilt.order == f.order
    assert np.max(np.abs(rebuilt.coef - f.coef)) < 1e-12

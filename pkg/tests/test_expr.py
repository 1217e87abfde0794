import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkforge import expr as ex
from gkforge.charts import Chart
from helpers import finite_difference, random_expression

CHART = Chart("c", z=("z",), zp=("w",))
ONE = Chart("one", z=("z",))


def value(text, point, chart=ONE):
    return ex.evaluate(ex.parse(text, chart), np.atleast_2d(point))[0]


@pytest.mark.parametrize(
    "text, want",
    [
        ("abs2(z)", abs(1 + 2j) ** 2),
        ("z*conj(z)", abs(1 + 2j) ** 2),
        ("re(z^2)", ((1 + 2j) ** 2).real),
        ("im(z)", 2.0),
        ("exp(i*z)", np.exp(1j * (1 + 2j))),
        ("log(z)", np.log(1 + 2j)),
        ("sqrt(z)", np.sqrt(1 + 2j)),
        ("sin(z) + cos(z)", np.sin(1 + 2j) + np.cos(1 + 2j)),
        ("z^-2", (1 + 2j) ** -2),
        ("2e-1*pi", 0.2 * np.pi),
        ("-(z - 1)/2", -(2j) / 2),
    ],
)
def test_evaluation_matches_numpy(text, want):
    assert np.isclose(value(text, [1.0, 2.0]), want)


def test_real_expressions_have_no_imaginary_tree():
    assert ex.parse("abs2(z) + re(z)", ONE).im is None
    assert ex.parse("z", ONE).im is not None


def test_unknown_identifier_names_token_and_offset():
    with pytest.raises(ex.UnknownIdentifier) as info:
        ex.parse("abs2(z) + q", ONE)
    msg = str(info.value)
    assert "'q'" in msg and "10" in msg


@pytest.mark.parametrize("text", ["abs2(z", "z +", "2 ** z", "foo(z)", "z^w", ")"])
def test_syntax_errors(text):
    with pytest.raises(ex.ExprSyntaxError):
        ex.parse(text, ONE)


def test_domain_error_at_branch_point():
    e = ex.parse("log(z)", ONE)
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate(e, np.array([[0.0, 0.0]]))
    with pytest.raises(ex.ExprDomainError):
        ex.evaluate(ex.parse("log(re(z))", ONE), np.array([[-1.0, 0.0]]))


def test_wirtinger_basics():
    e = ex.parse("abs2(z)", ONE)
    J = ex.eval_jet(e, np.array([[1.0, 1.0]]), 2)
    W = ex.wirtinger(J, ONE, 2)
    assert np.isclose(W("z")[0], 1 - 1j)
    assert np.isclose(W("z~")[0], 1 + 1j)
    assert np.isclose(W("z", "z~")[0], 1.0)
    assert np.isclose(W("z", "z")[0], 0.0)


def test_fubini_study_mixed_derivative():
    e = ex.parse("log(1 + abs2(z))", ONE)
    pts = np.array([[0.3, -0.4], [1.2, 0.5]])
    W = ex.wirtinger(ex.eval_jet(e, pts, 2), ONE, 2)
    r2 = np.sum(pts ** 2, axis=1)
    assert np.allclose(W("z", "z~"), 1 / (1 + r2) ** 2)


def test_holomorphic_functions_have_zero_dbar():
    e = ex.parse("exp(z*w) + sin(z)^2", CHART)
    pts = np.random.default_rng(1).uniform(-1, 1, size=(6, 4))
    W = ex.wirtinger(ex.eval_jet(e, pts, 2), CHART, 2)
    for word in (("z~",), ("w~",), ("z", "w~"), ("z~", "z~")):
        assert np.max(np.abs(W(*word))) < 1e-12


def test_order_exceeded():
    J = ex.eval_jet(ex.parse("z", ONE), np.zeros((1, 2)), 1)
    with pytest.raises(ex.OrderExceeded):
        ex.wirtinger(J, ONE, 2)


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_first_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    e = ex.parse(random_expression(rng), CHART)
    x = rng.uniform(-0.6, 0.6, 4)
    J = ex.eval_jet(e, x, 1)
    Jr = J.real if np.iscomplexobj(J.coef) else J
    for k in range(4):
        alpha = tuple(int(i == k) for i in range(4))
        fd = finite_difference(lambda y: np.real(ex.evaluate(e, y)[0]), x, alpha)
        assert abs(Jr.partial(alpha)[0] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_constant_expression():
    c = ex.constant(2.5, ONE)
    assert np.allclose(ex.evaluate(c, np.zeros((3, 2))), 2.5)

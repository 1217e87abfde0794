import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkforge import charts as ch
from gkforge import expr as ex
from gkforge import jets
from gkforge import potentials as pt
from gkforge.charts import Chart, TensorField

C1 = Chart("one", z=("z",))
C2 = Chart("two", z=("z",), zp=("w",))
PTS = np.random.default_rng(5).uniform(-0.7, 0.7, size=(8, 4))


def test_chart_layout():
    c = Chart("g", z=("a",), zp=("b",), q=("q",), P=("p",))
    assert c.coordinates == ("a", "b", "q", "p")
    assert c.dim == 8
    assert c.pairing["q"] == (4, 5)
    assert c.block_of("p") == "P"
    assert c.real_indices("zp") == [2, 3]


@pytest.mark.parametrize(
    "kwargs",
    [dict(z=("z", "z")), dict(q=("q",)), dict(z=("exp",)), dict(z=("i",))],
)
def test_chart_validation(kwargs):
    with pytest.raises(ValueError):
        Chart("bad", **kwargs)


def test_standard_J_signs():
    J = C2.standard_J({"zp": -1})
    assert np.allclose(J @ J, -np.eye(4))
    # dz o J = i dz on the + block, dw o J = -i dw on the flipped block
    assert np.allclose(C2.dcoord("z") @ J, 1j * C2.dcoord("z"))
    assert np.allclose(C2.dcoord("w") @ J, -1j * C2.dcoord("w"))


def test_check_complex_structure_rejects():
    with pytest.raises(ch.InvalidStructureError):
        ch.check_complex_structure(np.eye(2))
    assert ch.check_complex_structure(np.eye(2), square=1) == 0


def test_tensor_field_shapes_and_symmetry():
    g = TensorField.from_components(C1, (0, 2), [["1 + abs2(z)", "0"], ["0", "1 + abs2(z)"]], "symmetric", "g")
    G = g.jet(PTS[:, :2], 2)
    assert G.shape == (8, 2, 2)
    bad = TensorField.from_components(C1, (0, 2), [["1", "re(z)"], ["0", "1"]], "symmetric", "bad")
    with pytest.raises(ValueError):
        bad.jet(np.array([[0.5, 0.0]]), 1)


def test_wedge_normalization():
    e0, e1 = np.eye(2)
    w = ch.wedge(e0, e1)
    assert np.allclose(w, [[0, 1], [-1, 0]])


def test_d_squared_vanishes():
    a = TensorField.from_components(C2, (0, 1), ["re(z)*im(w)^2", "exp(re(w))*im(z)", "sin(abs2(z))", "re(z*w)"])
    da = ch.exterior_d(a, PTS, 3)
    dda = ch.exterior_d(da)
    assert dda.max_abs() < 1e-12
    # d of a 1-form is antisymmetric
    assert np.max(np.abs(da.value + np.swapaxes(da.value, 1, 2))) < 1e-14


def test_d_of_function_is_gradient():
    f = TensorField.from_components(C1, (0, 0), "abs2(z)^2")
    df = ch.exterior_d(f, PTS[:, :2], 1)
    r2 = np.sum(PTS[:, :2] ** 2, axis=1)
    assert np.allclose(df.value, 4 * r2[:, None] * PTS[:, :2])


def test_bidegree_parts_sum_to_form():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    form = (A - A.T)[None]
    J = C2.standard_J()
    parts = sum(ch.bidegree_project(form, J, pq) for pq in ((2, 0), (1, 1), (0, 2)))
    assert np.allclose(parts, form)


def test_dc_of_function_matches_minus_df_J():
    f = TensorField.from_components(C1, (0, 0), "re(z)^3 + im(z)*re(z)")
    J = C1.standard_J()
    out = ch.dc(f, J, PTS[:, :2], 2)
    df = ch.exterior_d(f, PTS[:, :2], 2)
    assert np.allclose(out.value, -(df.value @ J))


def test_dc_rejects_non_11_form():
    J = C2.standard_J()
    # dz ^ dw is (2,0)
    form = np.real(ch.wedge(C2.dcoord("z"), C2.dcoord("w")))
    fld = TensorField.constant(C2, (0, 2), form)
    with pytest.raises(ch.FormTypeError, match=r"\(2, 0\)"):
        ch.dc(fld, J, PTS, 1)


def test_dc_kahler_form_is_zero():
    c = Chart("kahler2", z=("z", "w"))
    K = ex.parse("log(1 + abs2(z) + abs2(w))", c)
    om = pt.kahler_form(ex.eval_jet(K, PTS, 3), c)
    assert ch.dc(om, c.standard_J()).max_abs() < 1e-12
    assert ch.exterior_d(om).max_abs() < 1e-12


def test_nijenhuis_vanishes_for_constant_and_detects_non_integrable():
    J0 = TensorField.constant(C2, (1, 1), C2.standard_J())
    assert ch.nijenhuis(J0, PTS, 1).max_abs() == 0

    # J = A J0 A^-1 with A depending non-holomorphically on the point
    def source(points, order):
        X = jets.Jet.variables(points, order)
        x = X[:, 0]
        one = x * 0 + 1.0
        zero = x * 0
        rows = [[one, zero, zero, zero], [zero, one, x, zero], [zero, zero, one, zero], [zero, zero, zero, one]]
        A = jets.stack([jets.stack(r, -1) for r in rows], -2)
        return jets.matmul(jets.matmul(A, np.broadcast_to(C2.standard_J(), A.shape)), jets.inv(A))

    Jx = TensorField(C2, (1, 1), source)
    assert ch.nijenhuis(Jx, PTS, 1).max_abs() > 1e-3


def test_schouten_linear_poisson_is_jacobi():
    # Lie-Poisson bivector of so(3) on R^3 embedded in the first three real coordinates
    def source(points, order):
        X = jets.Jet.variables(points, order)
        x, y, z = X[:, 0], X[:, 1], X[:, 2]
        zero = x * 0
        rows = [[zero, z, -y, zero], [-z, zero, x, zero], [y, -x, zero, zero], [zero, zero, zero, zero]]
        return jets.stack([jets.stack(r, -1) for r in rows], -2)

    pi = TensorField(C2, (2, 0), source)
    assert ch.schouten(pi, pi, PTS, 1).max_abs() < 1e-14

    def bad(points, order):
        X = jets.Jet.variables(points, order)
        x, y = X[:, 0], X[:, 1]
        zero = x * 0
        rows = [[zero, x, zero, zero], [-x, zero, y, zero], [zero, -y, zero, zero], [zero] * 4]
        return jets.stack([jets.stack(r, -1) for r in rows], -2)

    assert ch.schouten(TensorField(C2, (2, 0), bad), TensorField(C2, (2, 0), bad), PTS, 1).max_abs() > 1e-3


def test_christoffel_round_sphere():
    # stereographic metric 4/(1+r^2)^2 delta; Gamma^x_xx = -2x/(1+r^2)
    g = TensorField.from_components(C1, (0, 2), [["4/(1+abs2(z))^2", "0"], ["0", "4/(1+abs2(z))^2"]], "symmetric")
    G = ch.christoffel(g, PTS[:, :2], 1)
    x, y = PTS[:, 0], PTS[:, 1]
    r2 = x * x + y * y
    assert np.allclose(G.value[:, 0, 0, 0], -2 * x / (1 + r2))
    assert np.allclose(G.value[:, 1, 0, 0], 2 * y / (1 + r2))
    assert ch.covariant_deriv_metric(g, PTS[:, :2], 1).max_abs() < 1e-12


def test_metric_inverse_degenerate():
    g = jets.Jet.constant(np.zeros((1, 2, 2)), 2, 1)
    with pytest.raises(ch.DegeneracyError):
        ch.metric_inverse(g)


@given(st.floats(0.1, 3.0), st.floats(-1, 1))
@settings(max_examples=25, deadline=None)
def test_levi_civita_parallelizes_kahler_J(scale, shift):
    K = ex.parse(f"{scale}*log(1 + abs2(z - {shift}))", C1)
    om = pt.kahler_form(ex.eval_jet(K, PTS[:, :2], 4), C1)
    J = C1.standard_J()
    g = jets.matmul(om, jets.Jet.constant(np.broadcast_to(J, om.shape).copy(), 2, om.order))
    R = ch.covariant_deriv_J(g, None, jets.Jet.constant(np.broadcast_to(J, om.shape).copy(), 2, om.order))
    assert R.max_abs() < 1e-10 * max(1.0, scale)

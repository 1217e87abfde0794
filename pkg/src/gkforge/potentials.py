"""Generalized Kähler structures from scalar potentials.

Four constructions, one per chart shape:

``build_kahler``
    ``omega = i ddbar K`` with a single complex structure.
``build_commuting``
    ``[J+, J-] = 0``; ``omega_pm = i (d_z dbar_z -+ d_z' dbar_z') K`` and the
    third-derivative formula for ``H``.
``build_symplectic``
    invertible ``sigma``; ``K(q, P)`` is a generating function with
    ``p = dK/dq`` and ``Q = dK/dP``.
``build_general``
    all blocks present; ``omega_pm`` from the one-forms ``Re lambda_pm``.

In the word notation used below, ``d_a dbar_b K`` stands for
``sum K_{a bbar} da ^ dbbar``: the differential of the leftmost operator is
the leftmost factor of the wedge product.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import charts as ch
from . import expr as ex
from . import gkcore
from . import jets
from .charts import Chart
from .gkcore import FieldJets, StructureBundle
from .jets import Jet

CASES = ("kahler", "commuting", "symplectic", "general")
CONVENTION_TOL = 1e-10


class PositivityError(ValueError):
    """The metric built from a potential is not positive definite."""


class ConventionError(RuntimeError):
    """Two independent computations of the same tensor disagree."""


class InvalidPotentialError(ValueError):
    """The potential does not define a generalized Kähler structure."""


class RegularityError(ValueError):
    """A Hessian block required to be invertible is singular."""


class LegendreError(ValueError):
    """The inner solve of a Legendre transform failed."""


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class PotentialScenario:
    """A potential on an adapted chart together with sampling parameters.

    ``source`` overrides ``K`` when the potential is only known through its
    jets (e.g. after a Legendre transform).
    """

    name: str
    chart: Chart
    case: str
    K: Optional[ex.Expr] = None
    phi: Optional[ex.Expr] = None
    t: float = 0.0
    box: float = 0.5
    samples: int = 100
    tol: float = 1e-8
    g_sign: int = 1
    center: Optional[np.ndarray] = None
    source: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; expected one of {CASES}")
        c = self.chart
        need = {
            "kahler": (bool(c.z) and not (c.zp or c.q or c.P)),
            "commuting": (bool(c.z) and bool(c.zp) and not (c.q or c.P)),
            "symplectic": (bool(c.q) and not (c.z or c.zp)),
            "general": True,
        }[self.case]
        if not need:
            raise ValueError(f"scenario {self.name!r}: chart blocks do not match case {self.case!r}")
        if self.K is None and self.source is None:
            raise ValueError(f"scenario {self.name!r} has no potential")

    def potential(self, points, order: int) -> Jet:
        """Real jet of ``K + t phi``."""
        points = np.atleast_2d(points)
        if self.source is not None:
            K = self.source(points, order)
        else:
            K = ex.eval_jet(self.K, points, order)
        K = _assert_real(K, self.name)
        if self.phi is not None and self.t != 0.0:
            K = K + _assert_real(ex.eval_jet(self.phi, points, order), self.name) * self.t
        return K

    def sample_points(self, n: Optional[int] = None, seed: int = 0) -> np.ndarray:
        n = self.samples if n is None else n
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-self.box, self.box, size=(n, self.chart.dim))
        if self.center is not None:
            pts = pts + np.asarray(self.center, dtype=float)
        return pts

    def with_potential(self, K: ex.Expr, **kw) -> "PotentialScenario":
        return dataclasses.replace(self, K=K, source=None, **kw)


def _assert_real(K: Jet, name: str) -> Jet:
    if np.iscomplexobj(K.coef):
        imag = float(np.max(np.abs(K.coef.imag)))
        if imag > 1e-14 * max(1.0, float(np.max(np.abs(K.coef.real)))):
            raise InvalidPotentialError(f"potential of {name!r} is not real (imaginary part {imag:.3e})")
        return K.real
    return K


# ---------------------------------------------------------------------------
# assembling forms from Wirtinger data


def _times(s: Jet, arr: np.ndarray) -> Jet:
    """Scalar jet (shape ``(B,)``) times a constant array."""
    arr = np.asarray(arr)
    coef = s.coef.reshape(s.coef.shape + (1,) * arr.ndim) * arr
    return Jet(coef, s.nvars, s.order)


def _d(chart: Chart, name: str) -> np.ndarray:
    """``dw`` for a name, ``dw-bar`` for ``name~``."""
    if name.endswith("~"):
        return chart.dcoord(name[:-1], bar=True)
    return chart.dcoord(name)


def _bar(name: str) -> str:
    return name[:-1] if name.endswith("~") else name + "~"


def word_form(W: ex.WirtingerTable, chart: Chart, blocks: Sequence[Sequence[str]], coeff: complex = 1.0) -> Jet:
    """``coeff * sum K_{a b ..} da ^ db ^ ..`` over names drawn from ``blocks``.

    Each block is a list of coordinate names (``~`` marks conjugates); the
    ``k``-th differential ranges over the ``k``-th block.
    """
    out = None
    import itertools

    for names in itertools.product(*blocks):
        vecs = [_d(chart, n) for n in names]
        term = _times(W.jet(*names), ch.wedge(*vecs) * coeff)
        out = term if out is None else out + term
    return out


def _names(chart: Chart, block: str, bar: bool = False) -> list:
    return [c + ("~" if bar else "") for c in getattr(chart, block)]


def _realify(form: Jet, what: str, tol: float = 1e-9) -> Jet:
    if not np.iscomplexobj(form.coef):
        return form
    imag = float(np.max(np.abs(form.coef.imag)))
    if imag > tol * max(1.0, float(np.max(np.abs(form.coef.real)))):
        raise ConventionError(f"{what} came out complex (imaginary part {imag:.3e})")
    return form.real


def _const_field(arr: np.ndarray, B: int, nvars: int, order: int) -> Jet:
    return Jet.constant(np.broadcast_to(arr, (B,) + arr.shape).copy(), nvars, order)


def _check_agree(a, b, what: str, tol: float = CONVENTION_TOL):
    av = a.value if isinstance(a, Jet) else np.asarray(a)
    bv = b.value if isinstance(b, Jet) else np.asarray(b)
    scale = max(1.0, float(np.max(np.abs(av))))
    diff = float(np.max(np.abs(av - bv)))
    if diff > tol * scale:
        raise ConventionError(f"{what}: the two computations differ by {diff:.3e}")
    return diff


def check_positive(g, points, what: str = "metric"):
    gv = g.value if isinstance(g, Jet) else np.asarray(g)
    eig = np.linalg.eigvalsh(0.5 * (gv + np.swapaxes(gv, -1, -2)))
    i = int(np.argmin(eig[:, 0]))
    if not eig[i, 0] > 0:
        raise PositivityError(
            f"{what} is not positive definite: eigenvalue {eig[i, 0]:.6g} at point "
            f"{np.array2string(np.atleast_2d(points)[i], precision=4)}"
        )
    return eig[:, 0]


# ---------------------------------------------------------------------------
# Kähler


def kahler_form(K: Jet, chart: Chart) -> Jet:
    """``omega = i sum K_{z_a zbar_b} dz_a ^ dzbar_b`` (one order below ``K`` minus one)."""
    W = ex.wirtinger(K, chart.pairing, 2)
    om = word_form(W, chart, [_names(chart, "z"), _names(chart, "z", True)], 1j)
    return _realify(om, "Kähler form")


def build_kahler(scenario: PotentialScenario, points=None, check: bool = True) -> StructureBundle:
    chart = scenario.chart
    J = chart.standard_J()
    s = scenario.g_sign

    def source(pts, order):
        K = scenario.potential(pts, order + 2)
        om = kahler_form(K, chart)
        Jj = _const_field(J, len(pts), chart.dim, order)
        g = jets.matmul(om, Jj) * s
        return FieldJets(Jj, Jj, g, None)

    bundle = StructureBundle(chart, source, "kahler", {"g_sign": s, "scenario": scenario.name})
    if check:
        pts = scenario.sample_points() if points is None else points
        _validate_metric(bundle, pts)
    return bundle


def _validate_metric(bundle: StructureBundle, pts):
    f = bundle.fields(pts, 0)
    check_positive(f.g, pts, f"metric of {bundle.meta.get('scenario', bundle.case)!r}")


# ---------------------------------------------------------------------------
# commuting case


def commuting_forms(K: Jet, chart: Chart):
    """``omega_pm = i (d_z dbar_z -+ d_z' dbar_z') K``."""
    W = ex.wirtinger(K, chart.pairing, 2)
    zz = word_form(W, chart, [_names(chart, "z"), _names(chart, "z", True)], 1j)
    pp = word_form(W, chart, [_names(chart, "zp"), _names(chart, "zp", True)], 1j)
    return _realify(zz - pp, "omega_+"), _realify(zz + pp, "omega_-")


def commuting_H(K: Jet, chart: Chart) -> Jet:
    """``H = (d_z dbar_z' dbar_z + d_z' d_z dbar_z + dbar_z d_z' dbar_z' + d_z' d_z dbar_z') K``."""
    W = ex.wirtinger(K, chart.pairing, 3)
    z, zb = _names(chart, "z"), _names(chart, "z", True)
    w, wb = _names(chart, "zp"), _names(chart, "zp", True)
    H = (
        word_form(W, chart, [z, wb, zb])
        + word_form(W, chart, [w, z, zb])
        + word_form(W, chart, [zb, w, wb])
        + word_form(W, chart, [w, z, wb])
    )
    return _realify(H, "H")


def commuting_structures(chart: Chart):
    return chart.standard_J(), chart.standard_J({"zp": -1})


def build_commuting(scenario: PotentialScenario, points=None, check: bool = True) -> StructureBundle:
    """Commuting-case bundle; ``H`` is supplied from the third-derivative formula."""
    chart = scenario.chart
    Jp_c, Jm_c = commuting_structures(chart)
    s = scenario.g_sign

    def source(pts, order):
        K = scenario.potential(pts, order + 2)
        om_p, om_m = commuting_forms(K, chart)
        B = len(pts)
        Jp = _const_field(Jp_c, B, chart.dim, order)
        Jm = _const_field(Jm_c, B, chart.dim, order)
        g = jets.matmul(om_p, Jp) * s
        _check_agree(g, jets.matmul(om_m, Jm) * s, "g from omega_+ vs omega_-")
        H = commuting_H(K, chart) if order >= 1 else None
        return FieldJets(Jp, Jm, g, H)

    bundle = StructureBundle(chart, source, "commuting", {"g_sign": s, "scenario": scenario.name}, has_H=True)
    if check:
        pts = scenario.sample_points() if points is None else points
        _validate_metric(bundle, pts)
        b = bundle.at(pts, 1)
        _check_agree(b.f.H, b.dc_omega_p, "H formula vs d^c_+ omega_+")
    return bundle


def g_sign_experiment(scenario: PotentialScenario, builder=None, points=None) -> dict:
    """Try both g-extraction signs; report which (if any) gives a positive metric."""
    builder = builder or {"kahler": build_kahler, "commuting": build_commuting}[scenario.case]
    out = {}
    for s in (1, -1):
        try:
            builder(dataclasses.replace(scenario, g_sign=s), points)
            out[s] = "positive"
        except PositivityError as exc:
            out[s] = str(exc)
    return out


# ---------------------------------------------------------------------------
# deformations


@dataclass
class Deformation:
    bundle: StructureBundle
    t: float
    radius: float
    path_difference: float


def _positive_at(scenario: PotentialScenario, pts) -> bool:
    builder = {"kahler": build_kahler, "commuting": build_commuting}[scenario.case]
    try:
        check_positive(builder(scenario, pts, check=False).fields(pts, 0).g, pts)
        return True
    except (PositivityError, ConventionError):
        return False


def positivity_radius(scenario: PotentialScenario, phi: ex.Expr, pts, t_max: float = 1.0,
                      resolution: float = 1e-3) -> float:
    """Largest ``t`` in ``[0, t_max]`` (to ``resolution``) keeping ``K + t phi`` positive."""
    def ok(t):
        return _positive_at(dataclasses.replace(scenario, phi=phi, t=t), pts)

    if not ok(0.0):
        return 0.0
    if ok(t_max):
        return t_max
    lo, hi = 0.0, t_max
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def deform(scenario: PotentialScenario, phi: ex.Expr, t: float, points=None, t_max: float = 1.0) -> Deformation:
    """Bundle for ``K + t phi``; checked against the linear update of the forms."""
    if scenario.case not in ("kahler", "commuting"):
        raise ValueError("deformations are defined for the kahler and commuting cases")
    pts = scenario.sample_points() if points is None else points
    radius = positivity_radius(scenario, phi, pts, t_max=max(t_max, t))
    if t > radius:
        raise PositivityError(f"t = {t} exceeds the positivity radius {radius:.3f}")
    deformed = dataclasses.replace(scenario, phi=phi, t=t)
    builder = {"kahler": build_kahler, "commuting": build_commuting}[scenario.case]
    bundle = builder(deformed, pts)
    # second path: omega'(K) = omega(K) + t omega(phi)
    chart = scenario.chart
    K0 = scenario.potential(pts, 2)
    Kphi = _assert_real(ex.eval_jet(phi, pts, 2), scenario.name)
    if scenario.case == "kahler":
        lin = kahler_form(K0, chart).value + t * kahler_form(Kphi, chart).value
        direct = kahler_form(deformed.potential(pts, 2), chart).value
    else:
        a, b = commuting_forms(K0, chart), commuting_forms(Kphi, chart)
        d = commuting_forms(deformed.potential(pts, 2), chart)
        lin = np.concatenate([a[0].value + t * b[0].value, a[1].value + t * b[1].value])
        direct = np.concatenate([d[0].value, d[1].value])
    diff = _check_agree(direct, lin, "deformation: rebuild vs linear update", 1e-12)
    return Deformation(bundle, t, radius, diff)


# ---------------------------------------------------------------------------
# generating-function cases


def _real_rows(chart: Chart, name: str) -> list:
    return list(chart.pairing[name])


def _holomorphic_map_jacobian(K: Jet, chart: Chart, fixed: Sequence[str], derived) -> Jet:
    """Real Jacobian of a map ``x -> (w_1 .. w_m)`` given as complex jets.

    ``fixed`` coordinates map to themselves (a trailing ``~`` means the
    conjugate coordinate is used, i.e. the imaginary row flips sign);
    ``derived`` is a list of complex scalar jets (one order below ``K``).
    Rows are ordered ``fixed`` first, then ``derived``, each as (re, im).
    """
    n = chart.dim
    B = K.shape[0]
    order = derived[0].order - 1 if derived else K.order - 2
    rows = []
    for name in fixed:
        bar = name.endswith("~")
        ix, iy = chart.pairing[name.rstrip("~")]
        ex_ = np.zeros(n)
        ex_[ix] = 1.0
        ey = np.zeros(n)
        ey[iy] = -1.0 if bar else 1.0
        rows += [_const_field(ex_, B, n, order), _const_field(ey, B, n, order)]
    for w in derived:
        gw = w.grad()  # (B, n) complex
        rows += [gw.real, gw.imag]
    return jets.stack(rows, axis=1)


def pushforward_J(D: Jet, Jstd: np.ndarray) -> Jet:
    """``D^{-1} Jstd D``: the complex structure making the target coordinates holomorphic."""
    cond = np.linalg.cond(D.value)
    if not np.all(np.isfinite(cond)) or float(np.max(cond)) > 1e12:
        raise RegularityError(f"coordinate change is singular (condition number {float(np.max(cond)):.3e})")
    Dinv = jets.inv(D)
    Jc = _const_field(Jstd, D.shape[0], D.nvars, D.order)
    return jets.matmul(Dinv, jets.matmul(Jc, D))


def _target_J(k: int, signs: Sequence[int]) -> np.ndarray:
    J = np.zeros((2 * k, 2 * k))
    for i, s in enumerate(signs):
        J[2 * i + 1, 2 * i] = s
        J[2 * i, 2 * i + 1] = -s
    return J


def _block_cond(K: Jet, chart: Chart, rows: Sequence[str], cols: Sequence[str]) -> float:
    """Condition number of the real Jacobian ``d (dK/d rows) / d cols``."""
    if not rows:
        return 1.0
    W = ex.wirtinger(K, chart.pairing, 1)
    mats = []
    for r in rows:
        gw = W.jet(r).truncate(1).grad().value  # (B, n)
        mats += [gw.real, gw.imag]
    M = np.stack(mats, axis=1)
    idx = [i for c in cols for i in chart.pairing[c]]
    M = M[:, :, idx]
    c = np.linalg.cond(M)
    return float(np.max(c)) if np.all(np.isfinite(c)) else float("inf")


def leaf_structures(K: Jet, chart: Chart):
    """``J_pm`` as pushforwards through ``(.., q, p = dK/dq)`` and ``(.., Q = dK/dP, P)``.

    ``K`` must have order ``o + 2`` to give structures of order ``o``.
    """
    W = ex.wirtinger(K, chart.pairing, 1)
    p = [W.jet(q) for q in chart.q]
    Q = [W.jet(P) for P in chart.P]
    fixed_p = list(chart.z) + list(chart.zp) + list(chart.q)
    fixed_m = list(chart.z) + [c + "~" for c in chart.zp] + list(chart.P)
    Dp = _holomorphic_map_jacobian(K, chart, fixed_p, p)
    Dm = _holomorphic_map_jacobian(K, chart, fixed_m, Q)
    k = len(chart.coordinates)
    Jp = pushforward_J(Dp, _target_J(k, [1] * k))
    Jm = pushforward_J(Dm, _target_J(k, [1] * k))
    # Dm's rows list (z, zbar', P, Q) while Jm uses z-bar' as holomorphic coordinate.
    return Jp, Jm, Dp, Dm


def symplectic_forms(K: Jet, chart: Chart):
    """``Omega``, ``Omega_+``, ``Omega_-`` from second derivatives of ``K``.

    ``Omega   = (1/2) K_{qP} dq^dP + (1/2) K_{qPbar} dq^dPbar + c.c.``
    ``Omega_+ = 2 Re[(i/2)(K_{qqbar} dqbar^dq + K_{qbar Pbar} dqbar^dPbar + K_{qbar P} dqbar^dP)]``
    ``Omega_- = 2 Re[(i/2)(K_{P Pbar} dP^dPbar + K_{Pbar q} dq^dPbar + K_{Pbar qbar} dqbar^dPbar)]``
    """
    W = ex.wirtinger(K, chart.pairing, 2)
    q, qb = _names(chart, "q"), _names(chart, "q", True)
    P, Pb = _names(chart, "P"), _names(chart, "P", True)
    half = word_form(W, chart, [q, P], 0.5) + word_form(W, chart, [q, Pb], 0.5)
    Om = half + half.conj()
    plus = (
        word_form(W, chart, [qb, q], 0.5j)
        + word_form(W, chart, [qb, Pb], 0.5j)
        + word_form(W, chart, [qb, P], 0.5j)
    )
    Omp = plus + plus.conj()
    minus = (
        word_form(W, chart, [P, Pb], 0.5j)
        + word_form(W, chart, [q, Pb], 0.5j)
        + word_form(W, chart, [qb, Pb], 0.5j)
    )
    Omm = minus + minus.conj()
    return _realify(Om, "Omega"), _realify(Omp, "Omega_+"), _realify(Omm, "Omega_-")


def _pushforward_symplectic(Dp: Jet, Dm: Jet, chart: Chart):
    """``Im(dq ^ dp)`` and ``Im(dQ ^ dP)`` and ``Re(dq ^ dp)`` from the Jacobian rows."""
    m = len(chart.q)

    def cx(D, r):
        return D[:, 2 * r] + D[:, 2 * r + 1] * 1j

    outp = outm = None
    nq = len(chart.z) + len(chart.zp)
    for a in range(m):
        dq, dp = cx(Dp, nq + a), cx(Dp, nq + m + a)
        dP, dQ = cx(Dm, nq + a), cx(Dm, nq + m + a)
        tp = jets.einsum("...i,...j->...ij", dq, dp)
        tp = tp - tp.swapaxes(1, 2)
        tm = jets.einsum("...i,...j->...ij", dQ, dP)
        tm = tm - tm.swapaxes(1, 2)
        outp = tp if outp is None else outp + tp
        outm = tm if outm is None else outm + tm
    return outp.real, outp.imag, outm.real, outm.imag


def build_symplectic(scenario: PotentialScenario, points=None, check: bool = True,
                     tol: float = 1e-8) -> StructureBundle:
    """Invertible-sigma bundle from a generating function ``K(q, P)``.

    ``J_pm = -Omega^{-1} Omega_pm`` and ``g = Omega [J+, J-]``; ``J_pm`` are
    cross-checked against the pushforward construction.
    """
    chart = scenario.chart

    def source(pts, order):
        K = scenario.potential(pts, order + 2)
        Om, Omp, Omm = symplectic_forms(K, chart)
        try:
            Oinv = jets.inv(Om)
        except np.linalg.LinAlgError as exc:
            raise RegularityError(f"Omega is degenerate: {exc}") from None
        Jp = -jets.matmul(Oinv, Omp)
        Jm = -jets.matmul(Oinv, Omm)
        C = jets.matmul(Jp, Jm) - jets.matmul(Jm, Jp)
        g = jets.matmul(Om, C)
        return FieldJets(Jp, Jm, g, None)

    bundle = StructureBundle(chart, source, "symplectic", {"scenario": scenario.name})
    if check:
        pts = scenario.sample_points() if points is None else points
        validate_symplectic(scenario, bundle, pts, tol)
    return bundle


def _regularity(K: Jet, chart: Chart):
    for rows, cols, label in ((chart.q, chart.P, "K_qP"), (chart.P, chart.q, "K_Pq")):
        c = _block_cond(K, chart, list(rows), list(cols))
        if c > 1e12:
            raise RegularityError(f"Hessian block {label} is singular (condition number {c:.3e})")


def validate_symplectic(scenario: PotentialScenario, bundle: StructureBundle, pts, tol: float = 1e-8) -> dict:
    """Build-time battery; raises on failure, returns the residuals otherwise."""
    chart = scenario.chart
    K = scenario.potential(pts, 3)
    _regularity(K, chart)
    Om, Omp, Omm = symplectic_forms(K, chart)
    out = {}
    cond = np.linalg.cond(Om.value)
    if not np.all(np.isfinite(cond)) or float(np.max(cond)) > 1e12:
        raise RegularityError("Omega is degenerate at a sampled point")
    f = bundle.fields(pts, 1)
    n = chart.dim
    eye = np.eye(n)
    for s, J in (("plus", f.Jp), ("minus", f.Jm)):
        r = float(np.max(np.abs(J.value @ J.value + eye)))
        out[f"J_{s}_squared"] = r
        if r > tol:
            raise InvalidPotentialError(f"J_{s}^2 != -I (residual {r:.3e}): K does not define a GK structure")
    for name, form in (("Omega", Om), ("Omega_plus", Omp), ("Omega_minus", Omm)):
        out[f"d{name}"] = ch.exterior_d(form).max_abs()
        if out[f"d{name}"] > tol:
            raise InvalidPotentialError(f"d{name} != 0 (residual {out[f'd{name}']:.3e})")
    comm = f.Jp.value @ f.Jm.value - f.Jm.value @ f.Jp.value
    cc = np.linalg.cond(comm)
    if not np.all(np.isfinite(cc)) or float(np.max(cc)) > 1e12:
        raise InvalidPotentialError("[J+, J-] is singular: the metric cannot be extracted")
    g = f.g.value
    out["g_symmetric"] = float(np.max(np.abs(g - np.swapaxes(g, -1, -2))))
    if out["g_symmetric"] > tol * max(1.0, float(np.max(np.abs(g)))):
        raise InvalidPotentialError(f"extracted g is not symmetric (residual {out['g_symmetric']:.3e})")
    check_positive(g, pts, f"metric of {scenario.name!r}")
    # pushforward cross-check
    K4 = scenario.potential(pts, 2)
    Jp2, Jm2, Dp, Dm = leaf_structures(K4, chart)
    out["pushforward_plus"] = float(np.max(np.abs(Jp2.value - f.Jp.value)))
    out["pushforward_minus"] = float(np.max(np.abs(Jm2.value - f.Jm.value)))
    reP, imP, reM, imM = _pushforward_symplectic(Dp, Dm, chart)
    out["Omega_pushforward"] = max(
        float(np.max(np.abs(reP.value - Om.value))), float(np.max(np.abs(reM.value - Om.value)))
    )
    out["Omega_plus_pushforward"] = float(np.max(np.abs(imP.value - Omp.value)))
    out["Omega_minus_pushforward"] = float(np.max(np.abs(imM.value - Omm.value)))
    for key in ("Omega_pushforward", "Omega_plus_pushforward", "Omega_minus_pushforward"):
        if out[key] > tol:
            raise ConventionError(f"{key}: component formula and Jacobian route differ by {out[key]:.3e}")
    for s in ("plus", "minus"):
        if out[f"pushforward_{s}"] > tol:
            raise ConventionError(f"J_{s} from Omega disagrees with the pushforward by {out[f'pushforward_{s}']:.3e}")
    return out


# ---------------------------------------------------------------------------
# general case


@dataclass
class LambdaForms:
    """``Re lambda_pm`` and ``Im lambda_pm = -Re lambda_pm o J_pm`` as 1-form jets."""

    re_plus: Jet
    re_minus: Jet
    Jp: Jet
    Jm: Jet

    @property
    def im_plus(self) -> Jet:
        return _im_from_re(self.re_plus, self.Jp)

    @property
    def im_minus(self) -> Jet:
        return _im_from_re(self.re_minus, self.Jm)

    def type_residual(self) -> float:
        """Largest (0,1) component of ``lambda_pm`` w.r.t. ``J_pm``."""
        worst = 0.0
        for re_, J in ((self.re_plus, self.Jp), (self.re_minus, self.Jm)):
            o = min(re_.order, J.order)
            lam = re_.truncate(o) + _im_from_re(re_.truncate(o), J.truncate(o)) * 1j
            part = ch.bidegree_project(lam.value, J.value, (0, 1))
            worst = max(worst, float(np.max(np.abs(part))))
        return worst


def _im_from_re(re_: Jet, J: Jet) -> Jet:
    o = min(re_.order, J.order)
    return -jets.einsum("...k,...ki->...i", re_.truncate(o), J.truncate(o))


def lambda_forms(K: Jet, chart: Chart, Jp: Jet, Jm: Jet) -> LambdaForms:
    """``Re lambda_+ = Re[(i/2)(dbar_Pbar + dbar_zbar + d_z') K]``,
    ``Re lambda_- = Re[(i/2)(dbar_qbar + dbar_zbar + dbar_zbar') K]``."""
    W = ex.wirtinger(K, chart.pairing, 1)

    def one_form(words):
        out = None
        for w in words:
            term = _times(W.jet(w), _d(chart, w) * 0.5j)
            out = term if out is None else out + term
        if out is None:
            return Jet.constant(np.zeros((K.shape[0], chart.dim)), chart.dim, K.order - 1)
        return out.real

    plus = _names(chart, "P", True) + _names(chart, "z", True) + _names(chart, "zp")
    minus = _names(chart, "q", True) + _names(chart, "z", True) + _names(chart, "zp", True)
    return LambdaForms(one_form(plus), one_form(minus), Jp, Jm)


def general_forms(K: Jet, chart: Chart):
    """``omega_pm = 2 (d Re lambda_pm)^{(1,1)}`` with respect to ``J_pm``.

    This equals ``d Re lambda + d^c Im lambda`` for a (1,0)-form ``lambda``
    and needs only second derivatives of ``K``.  Returns
    ``(omega_+, omega_-, J+, J-, LambdaForms)`` all of order ``K.order - 2``.
    """
    Jp, Jm, _, _ = leaf_structures(K, chart)
    lam = lambda_forms(K, chart, Jp, Jm)
    out = []
    for re_, J in ((lam.re_plus, Jp), (lam.re_minus, Jm)):
        dre = ch.exterior_d(re_)
        om = ch.bidegree_project(dre, J, (1, 1)) * 2.0
        out.append(_realify(om, "omega"))
    return out[0], out[1], Jp, Jm, lam


def build_general(scenario: PotentialScenario, points=None, check: bool = True,
                  tol: float = 1e-8) -> StructureBundle:
    chart = scenario.chart
    s = scenario.g_sign

    def source(pts, order):
        K = scenario.potential(pts, order + 2)
        om_p, om_m, Jp, Jm, _ = general_forms(K, chart)
        g = jets.matmul(om_p, Jp) * s
        _check_agree(g, jets.matmul(om_m, Jm) * s, "g from omega_+ vs omega_-", tol)
        return FieldJets(Jp, Jm, g, None)

    bundle = StructureBundle(chart, source, "general", {"g_sign": s, "scenario": scenario.name})
    if check:
        pts = scenario.sample_points() if points is None else points
        validate_general(scenario, bundle, pts, tol)
    return bundle


def validate_general(scenario: PotentialScenario, bundle: StructureBundle, pts, tol: float = 1e-8) -> dict:
    chart = scenario.chart
    K = scenario.potential(pts, 3)
    _regularity(K, chart)
    out = {}
    om_p, om_m, Jp, Jm, lam = general_forms(K, chart)
    out["lambda_type"] = lam.type_residual()
    # compatibility: d^c_+ d Re l_+ + d^c_- d Re l_- = 0
    comp = ch.dc(ch.exterior_d(lam.re_plus), Jp, require_11=False) + ch.dc(ch.exterior_d(lam.re_minus), Jm, require_11=False)
    out["compatibility"] = comp.max_abs()
    if out["compatibility"] > tol:
        raise InvalidPotentialError(f"compatibility condition fails (residual {out['compatibility']:.3e})")
    g = jets.matmul(om_p, Jp) * scenario.g_sign
    out["g_dual"] = float(np.max(np.abs(g.value - (jets.matmul(om_m, Jm) * scenario.g_sign).value)))
    check_positive(g, pts, f"metric of {scenario.name!r}")
    for s, re_ in (("plus", lam.re_plus), ("minus", lam.re_minus)):
        dre = ch.exterior_d(re_).value
        c = np.linalg.cond(dre)
        out[f"d_re_lambda_{s}_cond"] = float(np.max(c)) if np.all(np.isfinite(c)) else float("inf")
        if out[f"d_re_lambda_{s}_cond"] > 1e12:
            raise InvalidPotentialError(f"d Re lambda_{s} is degenerate although g is not")
    return out


def literal_lambda_route(K: Jet, chart: Chart):
    """``omega_pm = d Re lambda_pm + d^c_pm Im lambda_pm`` taken literally (order ``K.order - 3``)."""
    Jp, Jm, _, _ = leaf_structures(K, chart)
    lam = lambda_forms(K, chart, Jp, Jm)
    out = []
    for re_, im_, J in ((lam.re_plus, lam.im_plus, Jp), (lam.re_minus, lam.im_minus, Jm)):
        dre = ch.exterior_d(re_)
        dci = ch.dc(im_, J, require_11=False)
        out.append(dre.truncate(dci.order) + dci)
    return out[0], out[1]


BUILDERS = {
    "kahler": build_kahler,
    "commuting": build_commuting,
    "symplectic": build_symplectic,
    "general": build_general,
}


def build(scenario: PotentialScenario, points=None, check: bool = True) -> StructureBundle:
    return BUILDERS[scenario.case](scenario, points, check=check)


# ---------------------------------------------------------------------------
# change of polarization

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50


def _swap_names(chart: Chart, swap: Sequence[str], names: Optional[dict]) -> dict:
    names = dict(names or {})
    out = {}
    for P in swap:
        if P not in chart.P:
            raise ValueError(f"{P!r} is not a momentum coordinate of chart {chart.name!r}")
        out[P] = names.get(P, "Q" if P == "P" else "Q_" + P)
    return out


def _solve_momenta(scenario: PotentialScenario, y: np.ndarray, swap_idx: list, guess: Optional[np.ndarray] = None):
    """Solve ``dK/dP_a (q, P) = Q_a`` for the swapped ``P_a`` at each point ``y``.

    ``y`` holds the new coordinates (same real layout as the old chart with the
    swapped ``P`` slots carrying ``Q``).  Damped Newton on the real system.
    """
    chart = scenario.chart
    cols = [i for a in swap_idx for i in chart.pairing[chart.P[a]]]
    x = y.copy()
    x[:, cols] = 0.0 if guess is None else guess
    target = y[:, cols]
    label = "d^2K/dP dP block for " + str([chart.P[a] for a in swap_idx])

    def residual_and_jac(xx):
        K = scenario.potential(xx, 2)
        W = ex.wirtinger(K, chart.pairing, 2)
        F, rows = [], []
        for a in swap_idx:
            Fa = W.jet(chart.P[a])
            F += [Fa.value.real, Fa.value.imag]
            ga = Fa.grad().value[:, cols]
            rows += [ga.real, ga.imag]
        return np.stack(F, axis=1) - target, np.stack(rows, axis=1)

    for it in range(NEWTON_MAXITER):
        R, M = residual_and_jac(x)
        cond = np.linalg.cond(M)
        if not np.all(np.isfinite(cond)) or float(np.max(cond)) > 1e12:
            raise RegularityError(f"singular swap block: {label} (condition number {float(np.max(cond)):.3e})")
        norm = np.max(np.abs(R), axis=1)
        if np.all(norm <= NEWTON_TOL):
            return x, M
        step = np.linalg.solve(M, R[..., None])[..., 0]
        lam = np.ones(len(x))
        for _ in range(30):
            trial = x.copy()
            trial[:, cols] -= lam[:, None] * step
            Rt, _ = residual_and_jac(trial)
            worse = np.max(np.abs(Rt), axis=1) > (1 - 1e-4 * lam) * norm
            worse &= norm > NEWTON_TOL
            if not np.any(worse):
                break
            lam = np.where(worse, lam * 0.5, lam)
        x = trial
    R, M = residual_and_jac(x)
    raise LegendreError(
        f"Legendre inner solve did not converge in {NEWTON_MAXITER} iterations "
        f"(residual {float(np.max(np.abs(R))):.3e})"
    )


def legendre_transform(scenario: PotentialScenario, swap: Sequence[str] = (), names: Optional[dict] = None) -> PotentialScenario:
    """Exchange momenta ``P_a`` for ``Q_a = dK/dP_a`` on the chosen pairs.

    The new potential is ``Kt(q, Q, P') = K(q, P) - 2 Re sum_a Q_a P_a`` at
    the stationary point; in the new chart ``p = dKt/dq`` still holds and
    ``dKt/dQ_a = -P_a``.  Jets of ``Kt`` are assembled from its gradient, so
    an order-``o`` jet needs only order-``o`` jets of ``K``.
    """
    if scenario.case != "symplectic":
        raise ValueError("legendre_transform applies to symplectic scenarios")
    if not swap:
        return scenario
    chart = scenario.chart
    rename = _swap_names(chart, swap, names)
    swap_idx = [chart.P.index(P) for P in swap]
    new_chart = Chart(chart.name + "~", q=chart.q, P=tuple(rename.get(P, P) for P in chart.P))
    cols = [i for a in swap_idx for i in chart.pairing[chart.P[a]]]
    n = chart.dim

    def source(y, order):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        x0, M = _solve_momenta(scenario, y, swap_idx)
        K0 = scenario.potential(x0, order)
        Qc = y[:, cols[0::2]] + 1j * y[:, cols[1::2]]
        Pc = x0[:, cols[0::2]] + 1j * x0[:, cols[1::2]]
        value = K0.value - 2.0 * np.sum((Qc * Pc).real, axis=1)
        if order == 0:
            return Jet.constant(value, n, 0)
        o = order - 1
        Y = Jet.variables(y, o)
        deltas = []
        for k in range(n):
            if k in cols:
                deltas.append(Jet.constant(np.zeros(len(y)), n, o))
            else:
                deltas.append(Y[:, k] - y[:, k])
        W = ex.wirtinger(K0, chart.pairing, 1)
        Fs = []
        for a in swap_idx:
            Fa = W.jet(chart.P[a]).truncate(o)
            Fs += [Fa.real, Fa.imag]
        Minv = np.linalg.inv(M)
        for _ in range(o + 1):
            R = [jets.compose_taylor(F, deltas) - (Y[:, c] - y[:, c]) - F.value for F, c in zip(Fs, cols)]
            R = jets.stack(R, axis=1)
            upd = jets.einsum("...ij,...j->...i", Minv, R)
            for j, c in enumerate(cols):
                deltas[c] = deltas[c] - upd[:, j]
        grads = []
        for k in range(n):
            if k in cols:
                j = cols.index(k)
                dP = deltas[k] + x0[:, k]
                grads.append(dP * (-2.0 if j % 2 == 0 else 2.0))
            else:
                grads.append(jets.compose_taylor(K0.deriv(k).truncate(o), deltas))
        return jets.from_gradient(value, jets.stack(grads, axis=1))

    return dataclasses.replace(
        scenario, name=scenario.name + ":legendre", chart=new_chart, K=None, source=source, phi=None, t=0.0,
    )


def polarization_map(scenario: PotentialScenario, swap: Sequence[str], points):
    """New coordinates of ``points`` and the real Jacobian ``d(new)/d(old)``."""
    chart = scenario.chart
    swap_idx = [chart.P.index(P) for P in swap]
    K = scenario.potential(points, 2)
    W = ex.wirtinger(K, chart.pairing, 1)
    y = np.array(points, dtype=float, copy=True)
    D = np.broadcast_to(np.eye(chart.dim), (len(y), chart.dim, chart.dim)).copy()
    for a in swap_idx:
        ix, iy = chart.pairing[chart.P[a]]
        Qa = W.jet(chart.P[a])
        y[:, ix], y[:, iy] = Qa.value.real, Qa.value.imag
        g = Qa.grad().value
        D[:, ix], D[:, iy] = g.real, g.imag
    return y, D

"""Structure bundles and the generalized Kähler verification battery.

Conventions (see ``charts`` for index placement):

* ``omega(X, Y) = g(J X, Y)``, i.e. ``omega = J^T g = -g J`` and ``g = omega J``;
* ``pi_pm = (J+ +- J-) g^{-1}``, ``sigma = [J+, J-] g^{-1}``, ``sigma_pm = J_pm sigma``;
* ``Pi = J+ J-``; when ``sigma`` is invertible ``Omega = sigma^{-1}`` and
  ``Omega_pm = -Omega J_pm`` so that ``Omega + i Omega_pm`` is of type (2,0);
* ``H = d^c_+ omega_+``; the Bismut connections are
  ``Gamma^k_ij +- kappa g^{kl} H_lij``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import charts as ch
from . import jets
from .charts import Chart, TensorField
from .jets import Jet

KAPPA_CANDIDATES = (0.5, 1.0)
RANK_THRESHOLD = 1e-8


class IntegrabilityError(ValueError):
    """A complex structure fails the Nijenhuis pre-check."""


class PreconditionError(ValueError):
    """A check was applied to a bundle outside its domain."""


# ---------------------------------------------------------------------------
# reports


@dataclass
class CheckResult:
    name: str
    max_abs: float
    max_rel: float
    samples: int
    tol: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_abs": _json_float(self.max_abs),
            "max_rel": _json_float(self.max_rel),
            "samples": self.samples,
            "tol": self.tol,
            "passed": self.passed,
            "detail": self.detail,
        }


def _json_float(x: float):
    x = float(x)
    if math.isfinite(x):
        return x
    return str(x)


@dataclass
class CheckReport:
    checks: list = field(default_factory=list)
    conventions: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self) -> list:
        return [c.name for c in self.checks]

    def add(self, name, residual, tol, samples, scale=1.0, detail="", passed=None) -> CheckResult:
        residual = float(residual)
        rel = residual / max(float(scale), 1e-300)
        ok = (residual <= tol) if passed is None else bool(passed)
        res = CheckResult(name, residual, rel, int(samples), float(tol), ok, detail)
        self.checks.append(res)
        return res

    def merge(self, other: "CheckReport") -> "CheckReport":
        out = CheckReport(self.checks + other.checks, {**self.conventions, **other.conventions})
        out.checks.sort(key=lambda c: c.name)
        return out

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "conventions": {k: _json_float(v) if isinstance(v, float) else v for k, v in sorted(self.conventions.items())},
            "checks": [c.to_dict() for c in sorted(self.checks, key=lambda c: c.name)],
        }


def _maxabs(x) -> float:
    v = x.value if isinstance(x, Jet) else np.asarray(x)
    return float(np.max(np.abs(v))) if v.size else 0.0


# ---------------------------------------------------------------------------
# bundles


@dataclass
class FieldJets:
    """Jets of the primary fields at a batch of points.

    ``Jp``, ``Jm`` and ``g`` share one order ``o``; a supplied ``H`` has order
    ``max(o - 1, 0)`` (it involves one more derivative of a potential).
    """

    Jp: Jet
    Jm: Jet
    g: Jet
    H: Optional[Jet] = None

    def truncate(self, order: int) -> "FieldJets":
        return FieldJets(
            self.Jp.truncate(order), self.Jm.truncate(order), self.g.truncate(order),
            None if self.H is None else self.H.truncate(min(self.H.order, max(order - 1, 0))),
        )


class StructureBundle:
    """The quadruple ``(J+, J-, g, H)`` on a chart, evaluable with derivatives.

    ``source(points, order)`` returns :class:`FieldJets`.  ``H`` is optional;
    when absent it is derived as ``d^c_+ omega_+``.  ``meta`` carries
    construction notes (case tag, g-extraction sign, ...).
    """

    def __init__(self, chart: Chart, source: Callable, case: str = "custom", meta: Optional[dict] = None,
                 has_H: bool = False, cache_size: int = 8):
        self.chart = chart
        self._source = source
        self.case = case
        self.meta = dict(meta or {})
        self.has_H = has_H
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    @classmethod
    def from_fields(cls, chart: Chart, Jp: TensorField, Jm: TensorField, g: TensorField,
                    H: Optional[TensorField] = None, case: str = "custom", meta=None):
        def source(points, order):
            return FieldJets(
                Jp.jet(points, order), Jm.jet(points, order), g.jet(points, order),
                None if H is None else H.jet(points, max(order - 1, 0)),
            )

        return cls(chart, source, case, meta, has_H=H is not None)

    def fields(self, points, order: int) -> FieldJets:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        key = (points.shape, points.tobytes())
        hit = self._cache.get(key)
        if hit is not None and hit.Jp.order >= order:
            self._cache.move_to_end(key)
            return hit.truncate(order)
        out = self._source(points, order)
        self._cache[key] = out
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return out

    def at(self, points, order: int) -> "BundleJets":
        """Derived tensors with jets of the given order.  Derived ``H`` is one order lower."""
        return BundleJets(self, np.atleast_2d(np.asarray(points, dtype=float)), order)

    def scaled(self, lam: float) -> "StructureBundle":
        """Same complex structures, metric ``lam * g`` (and ``H`` scaled alike)."""
        def source(points, order):
            f = self.fields(points, order)
            return FieldJets(f.Jp, f.Jm, f.g * lam, None if f.H is None else f.H * lam)

        return StructureBundle(self.chart, source, self.case, {**self.meta, "scale": lam}, self.has_H)


class BundleJets:
    """Lazily derived tensors of a bundle at fixed points and order."""

    def __init__(self, bundle: StructureBundle, points: np.ndarray, order: int):
        self.bundle = bundle
        self.points = points
        self.order = order
        self.f = bundle.fields(points, order)
        self._memo: dict = {}

    def _get(self, name, fn):
        if name not in self._memo:
            self._memo[name] = fn()
        return self._memo[name]

    @property
    def Jp(self) -> Jet:
        return self.f.Jp

    @property
    def Jm(self) -> Jet:
        return self.f.Jm

    @property
    def g(self) -> Jet:
        return self.f.g

    @property
    def ginv(self) -> Jet:
        return self._get("ginv", lambda: ch.metric_inverse(self.g))

    @property
    def omega_p(self) -> Jet:
        return self._get("omega_p", lambda: -jets.matmul(self.g, self.Jp))

    @property
    def omega_m(self) -> Jet:
        return self._get("omega_m", lambda: -jets.matmul(self.g, self.Jm))

    @property
    def pi_p(self) -> Jet:
        return self._get("pi_p", lambda: jets.matmul(self.Jp + self.Jm, self.ginv))

    @property
    def pi_m(self) -> Jet:
        return self._get("pi_m", lambda: jets.matmul(self.Jp - self.Jm, self.ginv))

    @property
    def commutator(self) -> Jet:
        return self._get("comm", lambda: jets.matmul(self.Jp, self.Jm) - jets.matmul(self.Jm, self.Jp))

    @property
    def sigma(self) -> Jet:
        return self._get("sigma", lambda: jets.matmul(self.commutator, self.ginv))

    @property
    def sigma_p(self) -> Jet:
        return self._get("sigma_p", lambda: jets.matmul(self.Jp, self.sigma))

    @property
    def sigma_m(self) -> Jet:
        return self._get("sigma_m", lambda: jets.matmul(self.Jm, self.sigma))

    @property
    def Pi(self) -> Jet:
        return self._get("Pi", lambda: jets.matmul(self.Jp, self.Jm))

    @property
    def Omega(self) -> Jet:
        return self._get("Omega", lambda: jets.inv(self.sigma))

    @property
    def Omega_p(self) -> Jet:
        return self._get("Omega_p", lambda: -jets.matmul(self.Omega, self.Jp))

    @property
    def Omega_m(self) -> Jet:
        return self._get("Omega_m", lambda: -jets.matmul(self.Omega, self.Jm))

    @property
    def dc_omega_p(self) -> Jet:
        return self._get("dcp", lambda: ch.dc(self.omega_p, self.Jp))

    @property
    def dc_omega_m(self) -> Jet:
        return self._get("dcm", lambda: ch.dc(self.omega_m, self.Jm))

    @property
    def H(self) -> Jet:
        """Supplied ``H`` (full order) or ``d^c_+ omega_+`` (one order lower)."""
        if self.f.H is not None:
            return self.f.H
        return self.dc_omega_p


# ---------------------------------------------------------------------------
# checks


def verify_pointwise_structure(bundle: StructureBundle, points, tol: float = 1e-9) -> CheckReport:
    """``J^2 = -I``, hermiticity, symmetry and positivity of ``g``, antisymmetry of ``omega``."""
    b = bundle.at(points, 0)
    n = bundle.chart.dim
    eye = np.eye(n)
    B = len(b.points)
    rep = CheckReport(conventions={"omega": "omega(X,Y) = g(JX,Y)"})
    g = b.g.value
    gscale = max(1.0, float(np.max(np.abs(g))))
    for s, J in (("plus", b.Jp.value), ("minus", b.Jm.value)):
        rep.add(f"structure.J_{s}_squared", np.max(np.abs(J @ J + eye)), tol, B)
        JT = np.swapaxes(J, -1, -2)
        rep.add(f"structure.hermitian_{s}", np.max(np.abs(JT @ g @ J - g)), tol * gscale, B, gscale)
        om = -g @ J
        rep.add(f"structure.omega_{s}_antisymmetric", np.max(np.abs(om + np.swapaxes(om, -1, -2))), tol * gscale, B, gscale)
    rep.add("structure.g_symmetric", np.max(np.abs(g - np.swapaxes(g, -1, -2))), tol * gscale, B, gscale)
    eig = np.linalg.eigvalsh(0.5 * (g + np.swapaxes(g, -1, -2)))
    mins = eig[:, 0]
    worst = int(np.argmin(mins))
    rep.add(
        "structure.g_positive", max(0.0, -float(mins[worst])), 0.0, B, gscale,
        detail=f"min eigenvalue {mins[worst]:.6g} at point {np.array2string(b.points[worst], precision=4)}",
        passed=bool(mins[worst] > 0),
    )
    rep.conventions["min_eigenvalue"] = float(mins[worst])
    return rep


def integrability(bundle: StructureBundle, points, tol: float = 1e-8) -> CheckReport:
    b = bundle.at(points, 1)
    rep = CheckReport()
    for s, J in (("plus", b.Jp), ("minus", b.Jm)):
        rep.add(f"integrability.N_{s}", ch.nijenhuis(J).max_abs(), tol, len(b.points))
    return rep


def verify_gk_conditions(bundle: StructureBundle, points, tol: float = 1e-8) -> CheckReport:
    """Checks ``d^c_+ w_+ + d^c_- w_- = 0``, ``d d^c_pm w_pm = 0``, ``dH = 0``, ``H = -d^c_- w_-``."""
    pre = integrability(bundle, points, tol)
    if not pre.passed:
        bad = [f"{c.name}={c.max_abs:.3e}" for c in pre.checks if not c.passed]
        raise IntegrabilityError("complex structure is not integrable: " + ", ".join(bad))
    b = bundle.at(points, 2)
    B = len(b.points)
    rep = CheckReport(checks=list(pre.checks))
    try:
        dcp, dcm = b.dc_omega_p, b.dc_omega_m
    except ch.FormTypeError as exc:
        rep.add("gk.omega_type_11", float("inf"), tol, B, detail=str(exc), passed=False)
        return rep
    scale = max(1.0, _maxabs(dcp))
    rep.add("gk.dc_sum", (dcp + dcm).max_abs(), tol, B, scale)
    rep.add("gk.ddc_plus", ch.exterior_d(dcp).max_abs(), tol, B, scale)
    rep.add("gk.ddc_minus", ch.exterior_d(dcm).max_abs(), tol, B, scale)
    if b.f.H is not None:
        H = b.f.H.truncate(dcp.order)
        rep.add("gk.H_supplied_matches", (H - dcp).max_abs(), tol, B, scale)
    else:
        H = dcp
    rep.add("gk.dH", ch.exterior_d(H).max_abs(), tol, B, scale)
    rep.add("gk.H_equals_minus_dc_minus", (H + dcm).max_abs(), tol, B, scale)
    rep.conventions["H_max"] = _maxabs(H)
    return rep


def _bivector_type_20_02(beta: np.ndarray, J: np.ndarray) -> np.ndarray:
    """(2,0)+(0,2) part of a real bivector: ``(beta - J beta J^T) / 2``."""
    return 0.5 * (beta - J @ beta @ np.swapaxes(J, -1, -2))


def schouten_constant(b: "BundleJets", H: np.ndarray):
    """Pointwise fit of ``[pi+, pi-] = c g^{-1}g^{-1}g^{-1} H``.

    Returns ``(c_per_point, residual_per_point, target_norm_per_point)``.
    """
    S = ch.schouten(b.pi_p, b.pi_m).value
    gi = b.ginv.value
    T = np.einsum("bia,bje,bkc,baec->bijk", gi, gi, gi, H)
    Sf = S.reshape(len(S), -1)
    Tf = T.reshape(len(T), -1)
    tn = np.sum(Tf * Tf, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(tn > 0, np.sum(Sf * Tf, axis=1) / np.where(tn > 0, tn, 1.0), np.nan)
    resid = np.max(np.abs(Sf - np.nan_to_num(c)[:, None] * Tf), axis=1)
    return c, resid, np.sqrt(tn), np.max(np.abs(Sf), axis=1)


def verify_poisson_family(bundle: StructureBundle, points, tol: float = 1e-8,
                          spread_tol: float = 1e-6, min_signal: float = 1e-6) -> CheckReport:
    b = bundle.at(points, 1)
    B = len(b.points)
    rep = CheckReport()
    pairs = {
        "pi_plus": (b.pi_p, b.pi_p),
        "pi_minus": (b.pi_m, b.pi_m),
        "sigma": (b.sigma, b.sigma),
        "sigma_plus": (b.sigma_p, b.sigma_p),
        "sigma_minus": (b.sigma_m, b.sigma_m),
        "sigma_sigma_plus": (b.sigma, b.sigma_p),
        "sigma_sigma_minus": (b.sigma, b.sigma_m),
    }
    for name, (x, y) in pairs.items():
        scale = max(1.0, _maxabs(x)) ** 2
        rep.add(f"poisson.schouten_{name}", ch.schouten(x, y).max_abs(), tol * scale, B, scale)

    # mixed bracket against g^-3 H
    H = b.H.value
    c, resid, tnorm, snorm = schouten_constant(b, H)
    signal = tnorm > min_signal
    if np.any(signal):
        cs = c[signal]
        mean = float(np.mean(cs))
        spread = float(np.std(cs) / abs(mean)) if mean != 0 else float("inf")
        rep.add("poisson.mixed_bracket_proportional", float(np.max(resid)), tol * max(1.0, float(np.max(snorm))),
                B, detail=f"c = {mean:.8g} over {int(signal.sum())} points")
        rep.add("poisson.mixed_bracket_constant_spread", spread, spread_tol, int(signal.sum()),
                detail=f"c = {mean:.8g}")
        rep.conventions["schouten_c"] = mean
    else:
        rep.add("poisson.mixed_bracket_vanishes", float(np.max(snorm)), tol, B, detail="H = 0 at all samples")
        rep.conventions["schouten_c"] = float("nan")

    # type decomposition of pi_pm
    Jp, Jm, sig = b.Jp.value, b.Jm.value, b.sigma.value
    for s, pi, sgn in (("plus", b.pi_p.value, -1.0), ("minus", b.pi_m.value, 1.0)):
        want_p = sgn * 0.5 * (Jp @ sig)
        rep.add(f"poisson.type_{s}_wrt_Jplus", np.max(np.abs(_bivector_type_20_02(pi, Jp) - want_p)), tol, B)
        want_m = 0.5 * (Jm @ sig)
        rep.add(f"poisson.type_{s}_wrt_Jminus", np.max(np.abs(_bivector_type_20_02(pi, Jm) - want_m)), tol, B)

    # sigma - i sigma_+ is a (2,0) bivector for J+
    beta = sig - 1j * b.sigma_p.value
    off = max(
        np.max(np.abs(ch.bivector_project(beta, Jp, (1, 1)))),
        np.max(np.abs(ch.bivector_project(beta, Jp, (0, 2)))),
    )
    rep.add("poisson.sigma_holomorphic_type", float(off), tol, B)
    return rep


def numerical_rank(M: np.ndarray, threshold: float = RANK_THRESHOLD) -> np.ndarray:
    s = np.linalg.svd(M, compute_uv=False)
    top = s[..., :1]
    return np.sum(s > threshold * np.maximum(top, 1e-300) * (top > 1e-14), axis=-1)


def _range_projector(M: np.ndarray, threshold: float = RANK_THRESHOLD) -> np.ndarray:
    U, s, _ = np.linalg.svd(M)
    keep = s > threshold * max(s[0], 1e-300) if s[0] > 1e-14 else np.zeros_like(s, bool)
    Uk = U[:, keep]
    return Uk @ Uk.T


@dataclass
class FoliationReport:
    ranks: dict
    containment_residual: float
    rank_jumps: dict
    threshold: float = RANK_THRESHOLD

    @property
    def regular(self) -> bool:
        return not any(self.rank_jumps.values())

    def to_dict(self) -> dict:
        return {
            "ranks": {k: sorted(set(int(r) for r in v)) for k, v in sorted(self.ranks.items())},
            "containment_residual": self.containment_residual,
            "rank_jumps": dict(sorted(self.rank_jumps.items())),
            "threshold": self.threshold,
        }


def foliation_report(bundle: StructureBundle, points, threshold: float = RANK_THRESHOLD) -> FoliationReport:
    """Ranks of ``pi_pm`` and ``sigma``; checks ``im sigma`` lies in ``im pi_+`` and ``im pi_-``."""
    b = bundle.at(points, 0)
    mats = {"pi_plus": b.pi_p.value, "pi_minus": b.pi_m.value, "sigma": b.sigma.value}
    ranks = {k: numerical_rank(v, threshold) for k, v in mats.items()}
    resid = 0.0
    for i in range(len(b.points)):
        sig = mats["sigma"][i]
        for k in ("pi_plus", "pi_minus"):
            P = _range_projector(mats[k][i], threshold)
            resid = max(resid, float(np.max(np.abs(sig - P @ sig))) if sig.size else 0.0)
    jumps = {k: bool(len(set(v.tolist())) > 1) for k, v in ranks.items()}
    return FoliationReport(ranks, resid, jumps, threshold)


def bismut_residuals(bundle: StructureBundle, points, kappa: float):
    """``(max |nabla^+ J+|, max |nabla^- J-|)`` for torsion coefficient ``kappa``."""
    b = bundle.at(points, 2)
    H = b.H if b.f.H is None else b.f.H.truncate(1)
    g, Jp, Jm = b.g.truncate(1), b.Jp.truncate(1), b.Jm.truncate(1)
    rp = ch.covariant_deriv_J(g, H, Jp, +1, kappa).max_abs()
    rm = ch.covariant_deriv_J(g, H, Jm, -1, kappa).max_abs()
    return rp, rm


def calibrate_kappa(bundle: StructureBundle, points, candidates=KAPPA_CANDIDATES) -> dict:
    """Residual of ``nabla^pm J_pm`` for each candidate ``kappa``; picks the smallest."""
    table = {}
    for k in candidates:
        table[k] = max(bismut_residuals(bundle, points, k))
    best = min(table, key=lambda k: table[k])
    return {"kappa": best, "residuals": table}


def verify_bismut(bundle: StructureBundle, points, kappa: float = 0.5, tol: float = 1e-7) -> CheckReport:
    rp, rm = bismut_residuals(bundle, points, kappa)
    B = len(np.atleast_2d(points))
    rep = CheckReport(conventions={"kappa": kappa})
    rep.add("bismut.nabla_plus_J_plus", rp, tol, B)
    rep.add("bismut.nabla_minus_J_minus", rm, tol, B)
    return rep


def verify_product_structure(bundle: StructureBundle, points, tol: float = 1e-8) -> CheckReport:
    b = bundle.at(points, 1)
    comm = _maxabs(b.commutator)
    if comm > 1e-6:
        raise PreconditionError(f"product structure needs commuting J+, J-; |[J+,J-]| = {comm:.3e}")
    n = bundle.chart.dim
    B = len(b.points)
    rep = CheckReport()
    Pi = b.Pi
    rep.add("product.commutator", comm, tol, B)
    rep.add("product.Pi_squared", float(np.max(np.abs(Pi.value @ Pi.value - np.eye(n)))), tol, B)
    rep.add("product.N_Pi", ch.nijenhuis(Pi, square=1).max_abs(), tol, B)
    return rep


def run_battery(bundle: StructureBundle, points, tol: float = 1e-8, kappa="auto",
                bismut_tol: float = 1e-7, structure_tol: Optional[float] = None) -> CheckReport:
    """Structure checks first; the remaining checks only if the structure is sound."""
    rep = verify_pointwise_structure(bundle, points, structure_tol or tol)
    if not rep.passed:
        return rep
    rep = rep.merge(verify_gk_conditions(bundle, points, tol))
    rep = rep.merge(verify_poisson_family(bundle, points, tol))
    if kappa == "auto":
        cal = calibrate_kappa(bundle, points)
        kappa = cal["kappa"]
        rep.conventions["kappa_calibration"] = {str(k): v for k, v in cal["residuals"].items()}
    rep = rep.merge(verify_bismut(bundle, points, float(kappa), bismut_tol))
    comm = _maxabs(bundle.at(points, 0).commutator)
    if comm <= 1e-6:
        rep = rep.merge(verify_product_structure(bundle, points, tol))
    fol = foliation_report(bundle, points)
    rep.conventions["foliation"] = fol.to_dict()
    return rep

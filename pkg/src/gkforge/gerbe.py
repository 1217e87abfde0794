"""Čech-level checks: gluing of potentials, line bundles and biholomorphic gerbes.

Data on an overlap ``(a, b, ...)`` is an expression in the coordinates of
its first chart ``a``; sample points on an overlap are stored in the
coordinates of that chart too.  A transition ``(a, b)`` lists the complex
coordinates of chart ``b`` as expressions in chart ``a``; a missing
transition between charts with the same coordinate count is the identity.

Multiplicative data (``G``, ``F``, ``h``) are stored as values in C*, never as
logarithms, so no branch choices enter the checks.  Residuals of
multiplicative identities are ``|lhs / rhs - 1|``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import expr as ex
from . import jets
from . import potentials as pt
from .charts import Chart
from .gkcore import CheckReport
from .jets import Jet


class CoverError(ValueError):
    """Inconsistent cover data (bad overlap points, missing charts)."""


class QuadratureError(RuntimeError):
    """The Chern-number quadrature did not converge under refinement."""


@dataclass
class CoverComplex:
    name: str
    case: str
    charts: dict
    potentials: dict = field(default_factory=dict)
    transitions: dict = field(default_factory=dict)
    overlaps: dict = field(default_factory=dict)
    stored_points: dict = field(default_factory=dict)
    F: dict = field(default_factory=dict)
    f: dict = field(default_factory=dict)
    g: dict = field(default_factory=dict)
    hp: dict = field(default_factory=dict)
    hm: dict = field(default_factory=dict)
    G3: dict = field(default_factory=dict)
    F3: dict = field(default_factory=dict)
    domains: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.case not in ("kahler", "commuting", "general"):
            raise CoverError(f"unknown cover case {self.case!r}")
        for key in itertools.chain(self.transitions, self.overlaps, self.F, self.f, self.g,
                                   self.hp, self.hm, self.G3, self.F3):
            for c in key:
                if c not in self.charts:
                    raise CoverError(f"cover {self.name!r}: unknown chart {c!r} in {key}")

    # -- coordinates -------------------------------------------------------
    def map_points(self, src: str, dst: str, pts: np.ndarray) -> np.ndarray:
        if src == dst:
            return pts
        if (src, dst) in self.transitions:
            vals = [ex.evaluate(e, pts) for e in self.transitions[(src, dst)]]
            out = np.empty((len(pts), 2 * len(vals)))
            for k, v in enumerate(vals):
                v = np.asarray(v, dtype=complex)
                out[:, 2 * k], out[:, 2 * k + 1] = v.real, v.imag
            return out
        if self.charts[src].dim == self.charts[dst].dim:
            return pts
        raise CoverError(f"no transition from {src!r} to {dst!r}")

    def pullback(self, e: ex.Expr, home: str, src: str, pts: np.ndarray, order: int) -> Jet:
        """Jet (in ``src`` coordinates) of an expression living on chart ``home``."""
        if home == src or (src, home) not in self.transitions:
            return ex.eval_jet(e, self.map_points(src, home, pts), order)
        y = self.map_points(src, home, pts)
        base = ex.eval_jet(e, y, order)
        deltas = []
        for t in self.transitions[(src, home)]:
            tj = ex.eval_jet(t, pts, order)
            tj = tj if np.iscomplexobj(tj.coef) else tj * (1.0 + 0j)
            for part in (tj.real, tj.imag):
                deltas.append(part - part.value)
        if np.iscomplexobj(base.coef):
            return jets.compose_taylor(base.real, deltas) + jets.compose_taylor(base.imag, deltas) * 1j
        return jets.compose_taylor(base, deltas)

    def points(self, key) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.overlaps[tuple(key)], dtype=float))

    def overlaps_of(self, size: int) -> list:
        return sorted(k for k in self.overlaps if len(k) == size)

    # -- oriented data -------------------------------------------------------
    def value(self, store: dict, key, pts: np.ndarray, src: str, additive: bool = False):
        """Value of double/triple data at ``pts`` (in chart ``src``), any orientation."""
        key = tuple(key)
        for perm in itertools.permutations(range(len(key))):
            k = tuple(key[i] for i in perm)
            if k in store:
                v = np.asarray(ex.evaluate(store[k], self.map_points(src, k[0], pts)), dtype=complex)
                odd = _parity(perm)
                if additive:
                    return -v if odd else v
                return 1.0 / v if odd else v
        raise KeyError(key)

    def has(self, store: dict, key) -> bool:
        return any(tuple(key[i] for i in p) in store for p in itertools.permutations(range(len(key))))


def _parity(perm) -> int:
    perm = list(perm)
    odd = 0
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            odd ^= 1
    return odd


def _ratio_residual(lhs, rhs) -> float:
    lhs, rhs = np.asarray(lhs), np.asarray(rhs)
    return float(np.max(np.abs(lhs / rhs - 1.0))) if lhs.size else 0.0


def check_overlap_points(cover: CoverComplex, tol: float = 1e-10) -> CheckReport:
    rep = CheckReport()
    for key, stored in sorted(cover.stored_points.items()):
        base = cover.points(key)
        for c, pts in sorted(stored.items()):
            mapped = cover.map_points(key[0], c, base)
            r = float(np.max(np.abs(mapped - np.asarray(pts, dtype=float))))
            if r > tol:
                raise CoverError(f"overlap {key}: stored {c!r} coordinates disagree with the transition by {r:.3e}")
            rep.add(f"cover.points_{'_'.join(key)}_{c}", r, tol, len(base))
    return rep


# ---------------------------------------------------------------------------
# holomorphy


FORBIDDEN = {
    # dependency restrictions: conjugated names carry a trailing "~"
    ("kahler", "F"): ("z~",),
    ("commuting", "f"): ("z~", "zp~"),
    ("commuting", "g"): ("z~", "zp"),
    ("commuting", "hp"): ("z~", "zp~"),
    ("commuting", "hm"): ("z~", "zp"),
    ("commuting", "G3"): ("z~", "zp", "zp~"),
    ("commuting", "F3"): ("z", "z~", "zp~"),
    ("general", "f"): ("z~", "zp~", "q~", "P", "P~"),
    ("general", "g"): ("z~", "zp", "P~", "q", "q~"),
    ("general", "hp"): ("z~", "zp~", "q~", "P", "P~"),
    ("general", "hm"): ("z~", "zp", "P~", "q", "q~"),
    ("general", "G3"): ("z~", "zp", "zp~", "q", "q~", "P", "P~"),
    ("general", "F3"): ("z", "z~", "zp~", "q", "q~", "P", "P~"),
}


def forbidden_residual(e: ex.Expr, chart: Chart, pts: np.ndarray, blocks, multiplicative: bool) -> float:
    """Largest derivative of ``e`` in a forbidden complex direction.

    For multiplicative data the logarithmic derivative ``d e / e`` is used so
    the residual of ``exp(eps * zbar)`` is ``eps``.
    """
    J = ex.eval_jet(e, pts, 1)
    W = ex.wirtinger(J, chart.pairing, 1)
    val = np.abs(J.value) if multiplicative else 1.0
    worst = 0.0
    for b in blocks:
        bar = b.endswith("~")
        for name in getattr(chart, b.rstrip("~")):
            d = np.abs(W(name + ("~" if bar else ""))) / val
            worst = max(worst, float(np.max(d)))
    return worst


# ---------------------------------------------------------------------------
# Kähler line bundles


def check_kahler_gluing(cover: CoverComplex, tol: float = 1e-10) -> CheckReport:
    """``K_a - K_b = F_ab + conj(F_ab)``, holomorphy of ``F``, cocycle and hermiticity of ``G = exp F``."""
    rep = check_overlap_points(cover, tol)
    for key in cover.overlaps_of(2):
        if not cover.has(cover.F, key):
            continue
        a, b = key
        pts = cover.points(key)
        tag = f"{a}_{b}"
        Ka = ex.evaluate(cover.potentials[a], pts).real
        Kb = ex.evaluate(cover.potentials[b], cover.map_points(a, b, pts)).real
        Fv = cover.value(cover.F, key, pts, a, additive=True)
        scale = max(1.0, float(np.max(np.abs(Ka))))
        rep.add(f"kahler.potential_difference_{tag}", np.max(np.abs(Ka - Kb - 2 * Fv.real)), tol, len(pts), scale)
        home = key if key in cover.F else (b, a)
        hpts = cover.map_points(a, home[0], pts)
        rep.add(f"kahler.F_holomorphic_{tag}",
                forbidden_residual(cover.F[home], cover.charts[home[0]], hpts, FORBIDDEN[("kahler", "F")], False),
                tol, len(pts))
        G = np.exp(Fv)
        rep.add(f"kahler.hermitian_{tag}", _ratio_residual(np.abs(G) ** 2, np.exp(Ka - Kb)), tol, len(pts))
    for key in cover.overlaps_of(3):
        a, b, c = key
        if not all(cover.has(cover.F, p) for p in ((a, b), (b, c), (c, a))):
            continue
        pts = cover.points(key)
        prod = np.ones(len(pts), dtype=complex)
        for p in ((a, b), (b, c), (c, a)):
            prod *= np.exp(cover.value(cover.F, p, cover.map_points(a, p[0], pts), p[0], additive=True))
        rep.add(f"kahler.cocycle_{a}_{b}_{c}", float(np.max(np.abs(prod - 1))), tol, len(pts))
    if not rep.checks:
        rep.add("kahler.vacuous", 0.0, tol, 0, detail="no overlaps")
    return rep


@dataclass
class ChernResult:
    value: float
    refinement_error: float
    nodes: int

    @property
    def nearest_integer(self) -> int:
        return int(round(self.value))


def _quadrature(domain: dict, n: int):
    """Nodes ``(N, 2)`` and weights ``(N,)`` in real chart coordinates."""
    kind = domain.get("type")
    if kind == "disc":
        R = float(domain["radius"])
        cx, cy = domain.get("center", (0.0, 0.0))
        r, wr = np.polynomial.legendre.leggauss(n)
        r = 0.5 * R * (r + 1)
        wr = 0.5 * R * wr
        th = 2 * np.pi * np.arange(2 * n) / (2 * n)
        wt = np.full(2 * n, 2 * np.pi / (2 * n))
        rr, tt = np.meshgrid(r, th, indexing="ij")
        w = np.outer(wr * r, wt)
        pts = np.stack([cx + rr * np.cos(tt), cy + rr * np.sin(tt)], axis=-1).reshape(-1, 2)
        return pts, w.reshape(-1)
    if kind == "rect":
        (x0, x1), (y0, y1) = domain["x"], domain["y"]
        u, wu = np.polynomial.legendre.leggauss(n)
        xs = 0.5 * (x1 - x0) * (u + 1) + x0
        ys = 0.5 * (y1 - y0) * (u + 1) + y0
        wx, wy = 0.5 * (x1 - x0) * wu, 0.5 * (y1 - y0) * wu
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X, Y], axis=-1).reshape(-1, 2), np.outer(wx, wy).reshape(-1)
    raise CoverError(f"unknown quadrature domain {kind!r}")


def _chern_sum(cover: CoverComplex, n: int) -> float:
    total = 0.0
    for name, domain in sorted(cover.domains.items()):
        chart = cover.charts[name]
        if chart.dim != 2:
            raise CoverError("chern_number needs complex one-dimensional charts")
        pts, w = _quadrature(domain, n)
        K = pt._assert_real(ex.eval_jet(cover.potentials[name], pts, 2), cover.name)
        om = pt.kahler_form(K, chart).value[:, 0, 1]
        if name in cover.weights:
            om = om * np.asarray(ex.evaluate(cover.weights[name], pts)).real
        total += float(np.sum(om * w))
    return total / (2 * np.pi)


def chern_number(cover: CoverComplex, nodes: int = 48, tol: float = 1e-6) -> ChernResult:
    """``(1/2pi) int omega`` over the chart domains (weighted), with a refinement test."""
    if not cover.domains:
        raise CoverError("cover has no quadrature domains")
    coarse = _chern_sum(cover, nodes)
    fine = _chern_sum(cover, 2 * nodes)
    err = abs(fine - coarse)
    if err > tol:
        raise QuadratureError(f"Chern integral not converged: {coarse:.10f} vs {fine:.10f}")
    return ChernResult(fine, err, 2 * nodes)


# ---------------------------------------------------------------------------
# generalized Kähler gluing


def _forms(case: str, K: Jet, chart: Chart):
    if case == "commuting":
        return pt.commuting_forms(K, chart)
    om_p, om_m, *_ = pt.general_forms(K, chart)
    return om_p, om_m


def check_commuting_gluing(cover: CoverComplex, tol: float = 1e-10) -> CheckReport:
    """``K_a - K_b = f + g + conj(f) + conj(g)`` with typed ``f``, ``g``; ``omega_pm`` glue."""
    rep = check_overlap_points(cover, tol)
    for key in cover.overlaps_of(2):
        a, b = key
        if not (cover.has(cover.f, key) or cover.has(cover.g, key)):
            continue
        pts = cover.points(key)
        tag = f"{a}_{b}"
        Ka = ex.evaluate(cover.potentials[a], pts).real
        Kb = ex.evaluate(cover.potentials[b], cover.map_points(a, b, pts)).real
        total = np.zeros(len(pts), dtype=complex)
        for label, store in (("f", cover.f), ("g", cover.g)):
            if not cover.has(store, key):
                continue
            total += cover.value(store, key, pts, a, additive=True)
            home = key if key in store else (b, a)
            r = forbidden_residual(store[home], cover.charts[home[0]], cover.map_points(a, home[0], pts),
                                   FORBIDDEN[(cover.case, label)], False)
            rep.add(f"gluing.{label}_typed_{tag}", r, tol, len(pts))
        scale = max(1.0, float(np.max(np.abs(Ka))))
        rep.add(f"gluing.potential_difference_{tag}", np.max(np.abs(Ka - Kb - 2 * total.real)), tol, len(pts), scale)
        chart = cover.charts[a]
        Ja = pt._assert_real(ex.eval_jet(cover.potentials[a], pts, 2), cover.name)
        Jb = pt._assert_real(cover.pullback(cover.potentials[b], b, a, pts, 2), cover.name)
        fa, fb = _forms(cover.case, Ja, chart), _forms(cover.case, Jb, chart)
        diff = max(float(np.max(np.abs(x.value - y.value))) for x, y in zip(fa, fb))
        rep.add(f"gluing.omega_agree_{tag}", diff, tol, len(pts))
    if not rep.checks:
        rep.add("gluing.vacuous", 0.0, tol, 0, detail="no overlaps")
    return rep


def _delta(cover: CoverComplex, store: dict, quad, pts: np.ndarray) -> np.ndarray:
    """``(delta G)_{abcd} = G_bcd G_acd^{-1} G_abd G_abc^{-1}`` at points of chart ``quad[0]``."""
    a, b, c, d = quad
    out = np.ones(len(pts), dtype=complex)
    for face, sign in (((b, c, d), 1), ((a, c, d), -1), ((a, b, d), 1), ((a, b, c), -1)):
        v = cover.value(store, face, cover.map_points(a, face[0], pts), face[0])
        out *= v if sign > 0 else 1.0 / v
    return out


def check_gerbe(cover: CoverComplex, tol: float = 1e-10) -> CheckReport:
    """Cocycle, antisymmetry, typing and hermiticity conditions for ``(G, F, h_pm, K)``."""
    rep = check_overlap_points(cover, tol)
    case = cover.case if cover.case != "kahler" else "commuting"
    # (a) cocycle on quadruple overlaps
    for quad in cover.overlaps_of(4):
        pts = cover.points(quad)
        tag = "_".join(quad)
        for label, store in (("G", cover.G3), ("F", cover.F3)):
            faces = [quad[:i] + quad[i + 1:] for i in range(4)]
            if all(cover.has(store, f) for f in faces):
                rep.add(f"gerbe.cocycle_{label}_{tag}", float(np.max(np.abs(_delta(cover, store, quad, pts) - 1))),
                        tol, len(pts))
    # (b) antisymmetry between stored permutations
    for label, store in (("G", cover.G3), ("F", cover.F3)):
        for key in sorted(store):
            for perm in itertools.permutations(range(3)):
                other = tuple(key[i] for i in perm)
                if other == key or other not in store:
                    continue
                ok = tuple(sorted(key))
                pts = cover.points(ok) if ok in cover.overlaps else None
                if pts is None:
                    continue
                pts = cover.map_points(ok[0], key[0], pts)
                v1 = np.asarray(ex.evaluate(store[key], pts), dtype=complex)
                v2 = np.asarray(ex.evaluate(store[other], cover.map_points(key[0], other[0], pts)), dtype=complex)
                want = 1.0 / v1 if _parity(perm) else v1
                rep.add(f"gerbe.antisymmetry_{label}_{'_'.join(key)}_{'_'.join(other)}", _ratio_residual(v2, want),
                        tol, len(pts))
    # (c) holomorphy typing
    for label, store in (("G3", cover.G3), ("F3", cover.F3), ("hp", cover.hp), ("hm", cover.hm)):
        for key in sorted(store):
            ok = tuple(sorted(key))
            if ok not in cover.overlaps:
                continue
            pts = cover.map_points(ok[0], key[0], cover.points(ok))
            r = forbidden_residual(store[key], cover.charts[key[0]], pts, FORBIDDEN[(case, label)], True)
            rep.add(f"gerbe.typed_{label}_{'_'.join(key)}", r, tol, len(pts))
    # (d) bihermitian conditions on triples
    for key in cover.overlaps_of(3):
        a, b, c = key
        if not (cover.has(cover.G3, key) and cover.has(cover.F3, key)):
            continue
        pairs = ((a, b), (b, c), (c, a))
        if not all(cover.has(cover.hp, p) and cover.has(cover.hm, p) for p in pairs):
            continue
        pts = cover.points(key)
        G = cover.value(cover.G3, key, pts, a)
        F = cover.value(cover.F3, key, pts, a)
        hp = np.ones(len(pts), dtype=complex)
        hm = np.ones(len(pts), dtype=complex)
        for p in pairs:
            q = cover.map_points(a, p[0], pts)
            hp *= cover.value(cover.hp, p, q, p[0])
            hm *= cover.value(cover.hm, p, q, p[0])
        tag = "_".join(key)
        rep.add(f"gerbe.bihermitian_plus_{tag}", _ratio_residual(G / F, hp), tol, len(pts))
        rep.add(f"gerbe.bihermitian_minus_{tag}", _ratio_residual(G * np.conj(F), hm), tol, len(pts))
    # (e) potential relation and (f) consistency with f, g
    for key in cover.overlaps_of(2):
        a, b = key
        if not (cover.has(cover.hp, key) and cover.has(cover.hm, key)):
            continue
        pts = cover.points(key)
        tag = f"{a}_{b}"
        hp = cover.value(cover.hp, key, pts, a)
        hm = cover.value(cover.hm, key, pts, a)
        if a in cover.potentials and b in cover.potentials:
            Ka = ex.evaluate(cover.potentials[a], pts).real
            Kb = ex.evaluate(cover.potentials[b], cover.map_points(a, b, pts)).real
            literal = hp * np.conj(hm) / (hm * np.conj(hp))
            rep.add(f"gerbe.potential_relation_{tag}", _ratio_residual(potential_relation_lhs_h(hp, hm), np.exp(Ka - Kb)),
                    tol, len(pts), detail=f"unimodular form deviates by {_ratio_residual(literal, np.exp(Ka - Kb)):.3e}")
        for label, h, store in (("plus", hp, cover.f), ("minus", hm, cover.g)):
            if cover.has(store, key):
                fv = cover.value(store, key, pts, a, additive=True)
                rep.add(f"gerbe.h_{label}_is_exp_{tag}", _ratio_residual(h, np.exp(fv)), tol, len(pts))
    if not rep.checks:
        rep.add("gerbe.vacuous", 0.0, tol, 0, detail="no overlap data")
    return rep


def potential_relation_lhs_h(hp: np.ndarray, hm: np.ndarray) -> np.ndarray:
    """``h+ h- conj(h+) conj(h-)``, compared against ``exp(K_a - K_b)``.

    The unimodular combination ``h+ conj(h-) / (h- conj(h+))`` cannot equal
    a positive real exponential of a non-constant potential difference; the
    modulus form is the one consistent with the potential decomposition.
    """
    return np.abs(hp * hm) ** 2


def potential_relation_lhs(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Left side of the potential relation for ``h+ = exp f``, ``h- = exp g``."""
    return potential_relation_lhs_h(np.exp(f), np.exp(g))

"""Chart-local tensor calculus on jets.

Index conventions (fixed project-wide):

* a complex structure ``J`` is stored as the endomorphism of tangent vectors,
  ``J[i, j] = J^i_j``; on a holomorphic coordinate ``z = x + i y`` the standard
  structure sends ``d/dx -> d/dy``, so ``dz o J = i dz``;
* a ``k``-form is a fully antisymmetric array ``a[i1..ik]`` with
  ``a = sum_{i1<..<ik} a[i1..ik] dx^i1 ^ .. ^ dx^ik``; wedge products carry no
  ``1/k!``;
* bivectors ``pi[i, j] = pi^{ij}``; metric ``g[i, j]``.

Every operation takes and returns :class:`~gkforge.jets.Jet` objects whose
first tensor axis is the batch of sample points.  An operation that
differentiates lowers the jet order by one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import expr as ex
from . import jets
from .jets import Jet


class InvalidStructureError(ValueError):
    """An endomorphism that should square to -I (or +I) does not."""


class FormTypeError(ValueError):
    """A form fails a required bidegree condition."""


class DegeneracyError(ValueError):
    """A metric (or other matrix that must be invertible) is singular."""


BLOCKS = ("z", "zp", "q", "P")


@dataclass(frozen=True)
class Chart:
    """Complex coordinates partitioned into role blocks.

    ``z`` spans the kernel of pi_-, ``zp`` the kernel of pi_+, and the leaf of
    sigma is polarized into ``q`` (positions) and ``P`` (momenta).  Real
    coordinates are ordered block by block, each complex coordinate
    contributing ``(re, im)``.
    """

    name: str
    z: tuple = ()
    zp: tuple = ()
    q: tuple = ()
    P: tuple = ()

    def __post_init__(self):
        for b in BLOCKS:
            object.__setattr__(self, b, tuple(getattr(self, b)))
        names = self.coordinates
        if len(set(names)) != len(names):
            raise ValueError(f"chart {self.name!r}: coordinate names must be distinct")
        if len(self.q) != len(self.P):
            raise ValueError(f"chart {self.name!r}: q and P blocks must have equal length")
        reserved = set(ex.FUNCTIONS) | set(ex.CONSTANTS)
        clash = reserved.intersection(names)
        if clash:
            raise ValueError(f"chart {self.name!r}: reserved names used as coordinates: {sorted(clash)}")

    @property
    def coordinates(self) -> tuple:
        return self.z + self.zp + self.q + self.P

    @property
    def dim(self) -> int:
        return 2 * len(self.coordinates)

    @property
    def pairing(self) -> dict:
        return {c: (2 * k, 2 * k + 1) for k, c in enumerate(self.coordinates)}

    def block_of(self, name: str) -> str:
        for b in BLOCKS:
            if name in getattr(self, b):
                return b
        raise KeyError(name)

    def real_indices(self, block: str) -> list:
        out = []
        for c in getattr(self, block):
            out += list(self.pairing[c])
        return out

    def standard_J(self, signs: Optional[dict] = None) -> np.ndarray:
        """Constant complex structure, ``+1`` (holomorphic) or ``-1`` per block."""
        signs = signs or {}
        J = np.zeros((self.dim, self.dim))
        for c, (ix, iy) in self.pairing.items():
            s = signs.get(self.block_of(c), 1)
            J[iy, ix] = s
            J[ix, iy] = -s
        return J

    def dcoord(self, name: str, bar: bool = False) -> np.ndarray:
        """Real components of ``dw`` (or ``d w-bar``) for coordinate ``name``."""
        ix, iy = self.pairing[name]
        v = np.zeros(self.dim, dtype=complex)
        v[ix] = 1.0
        v[iy] = -1j if bar else 1j
        return v

    def parse(self, text: str) -> ex.Expr:
        return ex.parse(text, self)


# ---------------------------------------------------------------------------
# tensor fields


@dataclass(frozen=True)
class TensorField:
    """A chart-local tensor field with jet-valued evaluation.

    ``source(points, order)`` returns a jet of shape ``(B, n, ..., n)``; the
    first ``valence[0]`` tensor axes are contravariant.
    """

    chart: Chart
    valence: tuple
    source: Callable = field(compare=False)
    symmetry: str = "none"
    name: str = ""

    @property
    def rank(self) -> int:
        return self.valence[0] + self.valence[1]

    def jet(self, points, order: int) -> Jet:
        out = self.source(np.atleast_2d(points), order)
        n = self.chart.dim
        expected = (n,) * self.rank
        if out.shape[1:] != expected:
            raise ValueError(f"field {self.name!r}: component shape {out.shape[1:]} != {expected}")
        if self.symmetry != "none" and self.rank == 2:
            check_symmetry(out.value, self.symmetry, self.name)
        return out

    @classmethod
    def from_components(cls, chart: Chart, valence, components, symmetry="none", name=""):
        """Components as a nested sequence of expression strings or numbers."""
        arr = np.empty(np.shape(components), dtype=object)
        flat = np.asarray(components, dtype=object).reshape(-1)
        parsed = [ex.parse(c, chart) if isinstance(c, str) else ex.constant(c, chart) for c in flat]
        arr = np.array(parsed, dtype=object).reshape(np.shape(components))
        shape = arr.shape

        def source(points, order):
            vals = [ex.eval_jet(e, points, order) for e in arr.reshape(-1)]
            stacked = jets.stack(vals, axis=1)
            return stacked.reshape(stacked.shape[0], *shape)

        return cls(chart, tuple(valence), source, symmetry, name)

    @classmethod
    def constant(cls, chart: Chart, valence, array, symmetry="none", name=""):
        array = np.asarray(array)

        def source(points, order):
            b = np.atleast_2d(points).shape[0]
            return Jet.constant(np.broadcast_to(array, (b,) + array.shape).copy(), chart.dim, order)

        return cls(chart, tuple(valence), source, symmetry, name)


def check_symmetry(values: np.ndarray, symmetry: str, name: str = "", tol: float = 1e-12):
    t = np.swapaxes(values, -1, -2)
    scale = max(1.0, float(np.max(np.abs(values))) if values.size else 1.0)
    if symmetry == "symmetric":
        resid = np.max(np.abs(values - t))
    else:
        resid = np.max(np.abs(values + t))
    if resid > tol * scale:
        raise ValueError(f"field {name!r} is not {symmetry} (residual {resid:.3e})")


class PointFrame:
    """Jets of a fixed set of fields at fixed points, computed once per order."""

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self._cache: dict = {}

    def jet(self, fld: TensorField, order: int) -> Jet:
        key = (id(fld), order)
        if key not in self._cache:
            self._cache[key] = fld.jet(self.points, order)
        return self._cache[key]


# ---------------------------------------------------------------------------
# helpers


def _as_jet(x, like: Jet) -> Jet:
    if isinstance(x, Jet):
        return x
    return Jet.constant(np.asarray(x), like.nvars, like.order)


def _value(x) -> np.ndarray:
    return x.value if isinstance(x, Jet) else np.asarray(x)


def _resolve(obj, points, order):
    if isinstance(obj, TensorField):
        if points is None:
            raise ValueError("points are required when passing a TensorField")
        return obj.jet(points, order)
    return obj


def wedge(*vectors) -> np.ndarray:
    """Antisymmetrized tensor product of covectors (no 1/k! factor)."""
    k = len(vectors)
    out = 0
    for perm in itertools.permutations(range(k)):
        sign = _perm_sign(perm)
        term = vectors[perm[0]]
        for p in perm[1:]:
            term = np.multiply.outer(term, vectors[p])
        out = out + sign * term
    return out


def _perm_sign(perm) -> int:
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def antisymmetrize(t: Jet) -> Jet:
    """Sum over signed permutations of all tensor axes after the batch axis."""
    k = t.ndim - 1
    out = None
    for perm in itertools.permutations(range(k)):
        term = t.transpose(0, *(p + 1 for p in perm)) * _perm_sign(perm)
        out = term if out is None else out + term
    return out


def check_complex_structure(J, tol: float = 1e-8, square: int = -1, name: str = "J"):
    """Raise unless ``J^2 = square * I`` at every point."""
    Jv = _value(J)
    n = Jv.shape[-1]
    resid = np.max(np.abs(Jv @ Jv - square * np.eye(n)))
    scale = max(1.0, float(np.max(np.abs(Jv))) ** 2)
    if resid > tol * scale:
        want = "-I" if square < 0 else "+I"
        raise InvalidStructureError(f"{name}^2 != {want} (max residual {resid:.3e})")
    return resid


# ---------------------------------------------------------------------------
# exterior calculus


def exterior_d(form, points=None, order: int = 1) -> Jet:
    """``(d a)_{i0..ik} = sum_j (-1)^j d_{ij} a_{i0..^ij..ik}``."""
    form = _resolve(form, points, order)
    if form.order < 1:
        raise jets.JetOrderError("exterior_d needs a jet of order >= 1")
    k = form.ndim - 1
    D = form.grad()  # (B, l, i1..ik)
    out = None
    for j in range(k + 1):
        term = D.moveaxis(1, 1 + j)
        term = term if j % 2 == 0 else -term
        out = term if out is None else out + term
    return out


def projectors(J):
    """Slot projectors ``P10 = (I - iJ)/2`` and ``P01 = (I + iJ)/2``."""
    if isinstance(J, Jet):
        n = J.shape[-1]
        eye = np.eye(n)
        return (J * (-0.5j)) + eye * 0.5, (J * 0.5j) + eye * 0.5
    J = np.asarray(J)
    eye = np.eye(J.shape[-1])
    return 0.5 * (eye - 1j * J), 0.5 * (eye + 1j * J)


def _contract_slots(form, mats):
    """Apply ``mats[s]`` to slot ``s`` of ``form``: a'_{..i..} = a_{..a..} M^a_i."""
    letters = "abcdefgh"
    outs = "ijklmnop"
    k = len(mats)
    sub_form = "..." + letters[:k]
    ops = [form]
    subs = [sub_form]
    for s, M in enumerate(mats):
        ops.append(M)
        subs.append("..." + letters[s] + outs[s])
    spec = ",".join(subs) + "->..." + outs[:k]
    if any(isinstance(o, Jet) for o in ops):
        return jets.einsum(spec, *ops)
    return np.einsum(spec, *ops)


def bidegree_project(form, J, pq, tol: float = 1e-8):
    """The ``(p, q)`` part of a (jet or array) form with respect to ``J``."""
    check_complex_structure(J, tol)
    p, q = pq
    k = (form.ndim - 1) if isinstance(form, Jet) else np.ndim(form) - 1
    if p + q != k:
        raise ValueError(f"bidegree ({p},{q}) does not match form degree {k}")
    P10, P01 = projectors(J)
    if isinstance(form, Jet) and not isinstance(P10, Jet):
        P10 = Jet.constant(np.broadcast_to(P10, form.shape[:1] + P10.shape[-2:]).copy(), form.nvars, form.order)
        P01 = Jet.constant(np.broadcast_to(P01, form.shape[:1] + P01.shape[-2:]).copy(), form.nvars, form.order)
    if k == 0:
        return form * (1.0 + 0j)
    out = None
    for holo in itertools.combinations(range(k), p):
        mats = [P10 if s in holo else P01 for s in range(k)]
        term = _contract_slots(form, mats)
        out = term if out is None else out + term
    return out


def bivector_project(bivector, J, pq, tol: float = 1e-8):
    """``(p, q)`` part of a bivector: vector slots projected by ``P10``/``P01``."""
    check_complex_structure(J, tol)
    P10, P01 = projectors(J)
    spec = "...ia,...ab,...jb->...ij"
    mats = {(2, 0): [(P10, P10)], (0, 2): [(P01, P01)], (1, 1): [(P10, P01), (P01, P10)]}[tuple(pq)]
    out = None
    for A, B in mats:
        if any(isinstance(o, Jet) for o in (A, bivector, B)):
            term = jets.einsum(spec, A, bivector, B)
        else:
            term = np.einsum(spec, A, bivector, B)
        out = term if out is None else out + term
    return out


def form_type_residual(form, J, pq) -> float:
    """Largest component of ``form`` outside bidegree ``pq``."""
    k = np.ndim(_value(form)) - 1
    total = 0
    for p in range(k + 1):
        if (p, k - p) == tuple(pq):
            continue
        part = _value(bidegree_project(_value(form), _value(J), (p, k - p)))
        total = max(total, float(np.max(np.abs(part))))
    return total


def dc(form, J, points=None, order: int = 1, require_11: bool = True, tol: float = 1e-8) -> Jet:
    """``d^c = i (dbar - d)`` with respect to ``J``, realified.

    For a 2-form the input must be of type (1,1); then ``d^c w`` is
    ``i((dw)^{1,2} - (dw)^{2,1})``.  Forms of other degrees are split into
    bidegree parts first, each part differentiated separately (``J`` must then
    be a jet of the same order, or constant).
    """
    form = _resolve(form, points, order)
    J = _resolve(J, points, order)
    k = form.ndim - 1
    Jv = _value(J)
    if k == 2 and require_11:
        scale = max(1.0, float(np.max(np.abs(form.value))))
        for pq in ((2, 0), (0, 2)):
            part = bidegree_project(form.value, Jv, pq)
            worst = np.unravel_index(np.argmax(np.abs(part)), part.shape)
            if np.abs(part[worst]) > tol * scale:
                raise FormTypeError(
                    f"form is not of type (1,1): {pq} component {worst[1:]} at sample "
                    f"{worst[0]} has magnitude {np.abs(part[worst]):.3e}"
                )
        dform = exterior_d(form)
        Jlow = J.truncate(dform.order) if isinstance(J, Jet) else J
        out = (bidegree_project(dform, Jlow, (1, 2)) - bidegree_project(dform, Jlow, (2, 1))) * 1j
    else:
        out = None
        for p in range(k + 1):
            part = bidegree_project(form, J, (p, k - p))
            dpart = exterior_d(part)
            Jlow = J.truncate(dpart.order) if isinstance(J, Jet) else J
            term = (bidegree_project(dpart, Jlow, (p, k - p + 1)) - bidegree_project(dpart, Jlow, (p + 1, k - p))) * 1j
            out = term if out is None else out + term
    if np.iscomplexobj(out.coef):
        imag = float(np.max(np.abs(out.coef.imag)))
        scale = max(1.0, out.max_abs())
        if imag > 1e-8 * scale:
            raise FormTypeError(f"d^c of a real form came out complex (imaginary part {imag:.3e})")
        out = out.real
    return out


# ---------------------------------------------------------------------------
# brackets


def schouten(a, b, points=None, order: int = 1) -> Jet:
    """Schouten bracket of two bivectors.

    ``[a,b]^{ijk} = a^{il} d_l b^{jk} + b^{il} d_l a^{jk}`` summed over cyclic
    permutations of ``(i, j, k)``; with this normalization ``[p,p] = 0`` is the
    Jacobi identity for ``p``.
    """
    a = _resolve(a, points, order)
    b = _resolve(b, points, order)
    Da, Db = a.grad(), b.grad()
    alow, blow = a.truncate(Da.order), b.truncate(Db.order)
    T = jets.einsum("...il,...ljk->...ijk", alow, Db) + jets.einsum("...il,...ljk->...ijk", blow, Da)
    return T + T.transpose(0, 2, 3, 1) + T.transpose(0, 3, 1, 2)


def nijenhuis(J, points=None, order: int = 1, square: int = -1, tol: float = 1e-8) -> Jet:
    """Nijenhuis tensor ``N[i, j, k] = N^i_{jk}`` of an endomorphism field.

    ``N(X,Y) = [AX,AY] - A[AX,Y] - A[X,AY] + A^2[X,Y]`` on coordinate fields.
    ``square`` is the required value of ``A^2`` (-1 for complex, +1 for
    product structures).
    """
    J = _resolve(J, points, order)
    check_complex_structure(J, tol, square)
    DJ = J.grad()  # DJ[l, i, j] = d_l J^i_j
    Jl = J.truncate(DJ.order)
    t1 = jets.einsum("...lj,...lik->...ijk", Jl, DJ)
    t2 = jets.einsum("...lk,...lij->...ijk", Jl, DJ)
    t3 = jets.einsum("...im,...kmj->...ijk", Jl, DJ)
    t4 = jets.einsum("...im,...jmk->...ijk", Jl, DJ)
    return t1 - t2 + t3 - t4


# ---------------------------------------------------------------------------
# connections


def metric_inverse(g: Jet) -> Jet:
    cond = np.linalg.cond(g.value)
    worst = float(np.max(cond)) if np.all(np.isfinite(cond)) else float("inf")
    if worst > 1e12:
        raise DegeneracyError(f"metric is singular (condition number {worst:.3e})")
    return jets.inv(g)


def christoffel(g, points=None, order: int = 1) -> Jet:
    """Levi-Civita symbols ``G[k, i, j] = Gamma^k_{ij}``."""
    g = _resolve(g, points, order)
    Dg = g.grad()  # Dg[l, i, j] = d_l g_ij
    ginv = metric_inverse(g).truncate(Dg.order)
    t = (
        jets.einsum("...kl,...ilj->...kij", ginv, Dg)
        + jets.einsum("...kl,...jli->...kij", ginv, Dg)
        - jets.einsum("...kl,...lij->...kij", ginv, Dg)
    )
    return t * 0.5


def torsion_part(g: Jet, H, kappa: float) -> Jet:
    """``T[k, i, j] = kappa g^{kl} H_{lji}``.

    ``i`` is the differentiating slot of ``nabla_i``; with this placement the
    connection ``Gamma + T`` parallelizes ``J_+`` when ``H = d^c_+ omega_+``.
    """
    ginv = metric_inverse(g)
    H = _as_jet(H, ginv)
    return jets.einsum("...kl,...lji->...kij", ginv, H) * kappa


def covariant_deriv_J(g, H, J, sign: int = 1, kappa: float = 0.5, points=None, order: int = 1) -> Jet:
    """``(nabla^s_i J)^k_m`` for the connection ``Gamma + s kappa g^{-1} H``.

    Returns an array ``R[i, k, m]``.  ``H`` may be ``None`` (Levi-Civita).
    """
    g = _resolve(g, points, order)
    J = _resolve(J, points, order)
    Gamma = christoffel(g)
    C = Gamma
    if H is not None:
        H = _resolve(H, points, order)
        T = torsion_part(g.truncate(Gamma.order), H.truncate(Gamma.order) if isinstance(H, Jet) else H, kappa)
        C = Gamma + T * sign
    DJ = J.grad()  # DJ[i, k, m]
    Jl = J.truncate(DJ.order)
    C = C.truncate(DJ.order)
    return DJ + jets.einsum("...kij,...jm->...ikm", C, Jl) - jets.einsum("...lim,...kl->...ikm", C, Jl)


def covariant_deriv_metric(g, points=None, order: int = 1) -> Jet:
    """``(nabla_i g)_{jk}`` for the Levi-Civita connection (vanishes identically)."""
    g = _resolve(g, points, order)
    Gamma = christoffel(g)
    Dg = g.grad()
    gl = g.truncate(Dg.order)
    return (
        Dg
        - jets.einsum("...lij,...lk->...ijk", Gamma, gl)
        - jets.einsum("...lik,...jl->...ijk", Gamma, gl)
    )


def raise_all(H: Jet, g: Jet) -> Jet:
    """``H^{ijk} = g^{ia} g^{jb} g^{kc} H_{abc}``."""
    ginv = metric_inverse(g)
    H = _as_jet(H, ginv)
    return jets.einsum("...ia,...jb,...kc,...abc->...ijk", ginv, ginv, ginv, H)


"""Truncated multivariate Taylor jets.

A :class:`Jet` stores, for every multi-index ``alpha`` with ``|alpha| <= order``,
the Taylor coefficient ``d^alpha f / alpha!`` of a (possibly tensor- and
batch-valued) function at a base point.  Coefficients live on axis 0 of
``coef``; every further axis is a batch or tensor axis.  Multi-indices are
ordered by total degree, so truncating to a lower order is a prefix slice.

Products are computed with precomputed index tables: every pair of
multi-indices whose sum has degree ``<= order`` is gathered, the pointwise
operation (multiplication, matmul, einsum) is applied to the stacked pairs and
the results are scattered back with ``np.add.reduceat``.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

MAX_ORDER = 4


class JetOrderError(ValueError):
    """Raised when an operation needs more derivatives than a jet carries."""


class DomainError(ValueError):
    """Raised when a function is evaluated outside its real domain."""


@dataclass(frozen=True)
class JetTables:
    nvars: int
    order: int
    multi: tuple[tuple[int, ...], ...]
    index: dict
    left: np.ndarray
    right: np.ndarray
    starts: np.ndarray
    factorials: np.ndarray

    @property
    def size(self) -> int:
        return len(self.multi)


def _multi_indices(nvars: int, order: int) -> list[tuple[int, ...]]:
    out = []
    for d in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            alpha = [0] * nvars
            for v in combo:
                alpha[v] += 1
            out.append(tuple(alpha))
    return out


@functools.lru_cache(maxsize=None)
def tables(nvars: int, order: int) -> JetTables:
    if not 0 <= order <= MAX_ORDER:
        raise JetOrderError(f"jet order must be in 0..{MAX_ORDER}, got {order}")
    multi = _multi_indices(nvars, order)
    index = {a: i for i, a in enumerate(multi)}
    left, right, starts = [], [], []
    for k, gamma in enumerate(multi):
        starts.append(len(left))
        for beta in itertools.product(*(range(g + 1) for g in gamma)):
            rest = tuple(g - b for g, b in zip(gamma, beta))
            left.append(index[beta])
            right.append(index[rest])
    fact = np.array([math.prod(math.factorial(a) for a in alpha) for alpha in multi], float)
    return JetTables(
        nvars, order, tuple(multi), index,
        np.array(left, dtype=np.intp), np.array(right, dtype=np.intp),
        np.array(starts, dtype=np.intp), fact,
    )


def ncoef(nvars: int, order: int) -> int:
    return math.comb(nvars + order, order)


@functools.lru_cache(maxsize=None)
def _derivative_map(nvars: int, order: int, var: int):
    """Source indices and factors for d/dx_var mapping order -> order-1."""
    hi = tables(nvars, order)
    lo = tables(nvars, order - 1)
    src = np.empty(lo.size, dtype=np.intp)
    fac = np.empty(lo.size)
    for i, alpha in enumerate(lo.multi):
        up = list(alpha)
        up[var] += 1
        src[i] = hi.index[tuple(up)]
        fac[i] = alpha[var] + 1
    return src, fac


def _expand_to(coef: np.ndarray, ndim: int) -> np.ndarray:
    """Insert tensor axes after the coefficient axis so ``coef.ndim == ndim``."""
    missing = ndim - coef.ndim
    if missing <= 0:
        return coef
    return coef.reshape(coef.shape[:1] + (1,) * missing + coef.shape[1:])


class Jet:
    """Truncated Taylor expansion of an array-valued function of ``nvars`` reals."""

    __slots__ = ("coef", "nvars", "order")
    __array_priority__ = 100

    def __init__(self, coef, nvars: int, order: int):
        coef = np.asarray(coef)
        if coef.shape[0] != ncoef(nvars, order):
            raise ValueError(
                f"coefficient axis has length {coef.shape[0]}, expected "
                f"{ncoef(nvars, order)} for nvars={nvars}, order={order}"
            )
        self.coef = coef
        self.nvars = nvars
        self.order = order

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, value, nvars: int, order: int) -> "Jet":
        value = np.asarray(value)
        coef = np.zeros((ncoef(nvars, order),) + value.shape, dtype=np.result_type(value, float))
        coef[0] = value
        return cls(coef, nvars, order)

    @classmethod
    def variables(cls, points, order: int) -> "Jet":
        """Coordinate functions at a batch of points; shape ``(B, nvars)``."""
        if not 0 <= order <= MAX_ORDER:
            raise JetOrderError(f"order must be in 0..{MAX_ORDER}")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        nvars = points.shape[1]
        coef = np.zeros((ncoef(nvars, order),) + points.shape)
        coef[0] = points
        if order >= 1:
            for v in range(nvars):
                coef[1 + v, :, v] = 1.0
        return cls(coef, nvars, order)

    # basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.coef.shape[1:]

    @property
    def ndim(self) -> int:
        return self.coef.ndim - 1

    @property
    def value(self) -> np.ndarray:
        return self.coef[0]

    @property
    def dtype(self):
        return self.coef.dtype

    def _wrap(self, coef, order=None) -> "Jet":
        return Jet(coef, self.nvars, self.order if order is None else order)

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise JetOrderError(f"cannot raise jet order {self.order} to {order}")
        if order == self.order:
            return self
        return self._wrap(self.coef[: ncoef(self.nvars, order)], order)

    def partial(self, alpha) -> np.ndarray:
        """The partial derivative ``d^alpha f`` (not divided by ``alpha!``)."""
        alpha = tuple(alpha)
        if sum(alpha) > self.order:
            raise JetOrderError(f"derivative of degree {sum(alpha)} exceeds jet order {self.order}")
        t = tables(self.nvars, self.order)
        i = t.index[alpha]
        return self.coef[i] * t.factorials[i]

    def deriv(self, var: int) -> "Jet":
        """Partial derivative in real variable ``var``; the order drops by one."""
        if self.order < 1:
            raise JetOrderError("cannot differentiate an order-0 jet")
        src, fac = _derivative_map(self.nvars, self.order, var)
        c = self.coef[src] * fac.reshape((-1,) + (1,) * self.ndim)
        return self._wrap(c, self.order - 1)

    def grad(self) -> "Jet":
        """Stack of all first partials, new tensor axis appended *after* the batch axis.

        For a jet of shape ``(B, *s)`` the result has shape ``(B, n, *s)``.
        """
        parts = [self.deriv(v).coef for v in range(self.nvars)]
        return self._wrap(np.stack(parts, axis=2), self.order - 1)

    # shape manipulation -------------------------------------------------
    def __getitem__(self, key) -> "Jet":
        if not isinstance(key, tuple):
            key = (key,)
        return self._wrap(self.coef[(slice(None),) + key])

    def transpose(self, *axes) -> "Jet":
        return self._wrap(np.transpose(self.coef, (0,) + tuple(a + 1 for a in axes)))

    def swapaxes(self, a: int, b: int) -> "Jet":
        return self._wrap(np.swapaxes(self.coef, a + 1, b + 1))

    def moveaxis(self, src: int, dst: int) -> "Jet":
        return self._wrap(np.moveaxis(self.coef, src + 1, dst + 1))

    def reshape(self, *shape) -> "Jet":
        return self._wrap(self.coef.reshape(self.coef.shape[:1] + tuple(shape)))

    @property
    def real(self) -> "Jet":
        return self._wrap(self.coef.real)

    @property
    def imag(self) -> "Jet":
        return self._wrap(self.coef.imag)

    def conj(self) -> "Jet":
        return self._wrap(np.conj(self.coef))

    def sum(self, axis) -> "Jet":
        if isinstance(axis, int):
            axis = (axis,)
        return self._wrap(self.coef.sum(axis=tuple(a + 1 for a in axis)))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coef))) if self.coef.size else 0.0

    # arithmetic ---------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.nvars != self.nvars:
                raise ValueError("jets over different numbers of variables")
            d = min(self.order, other.order)
            return self.truncate(d), other.truncate(d)
        return self, Jet.constant(other, self.nvars, self.order)

    def __add__(self, other):
        a, b = self._coerce(other)
        n = max(a.coef.ndim, b.coef.ndim)
        return a._wrap(_expand_to(a.coef, n) + _expand_to(b.coef, n))

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self._coerce(other)
        n = max(a.coef.ndim, b.coef.ndim)
        return a._wrap(_expand_to(a.coef, n) - _expand_to(b.coef, n))

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return self._wrap(-self.coef)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other)
            return self._wrap(_expand_to(self.coef, other.ndim + 1) * other)
        a, b = self._coerce(other)
        t = tables(a.nvars, a.order)
        n = max(a.coef.ndim, b.coef.ndim)
        prod = _expand_to(a.coef, n)[t.left] * _expand_to(b.coef, n)[t.right]
        return a._wrap(np.add.reduceat(prod, t.starts, axis=0))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other))
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, n: int):
        if not isinstance(n, (int, np.integer)):
            return power(self, float(n))
        if n < 0:
            return reciprocal(self) ** (-n)
        result = Jet.constant(np.ones(self.shape, dtype=self.dtype), self.nvars, self.order)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def __repr__(self) -> str:
        return f"Jet(nvars={self.nvars}, order={self.order}, shape={self.shape}, dtype={self.dtype})"


# ---------------------------------------------------------------------------
# contractions


def einsum(subscripts: str, *operands) -> Jet:
    """``np.einsum`` over jets and plain arrays (arrays act as constants).

    Subscripts address the non-coefficient axes and may use a leading ``...``.
    Operands are contracted pairwise from the left.
    """
    ins, out = subscripts.replace(" ", "").split("->")
    items = list(zip(ins.split(","), operands))
    if len(items) != len(operands) or not any(isinstance(o, Jet) for _, o in items):
        raise ValueError("einsum needs matching subscripts and at least one jet")
    acc_s, acc = items[0]
    for k in range(1, len(items)):
        s, o = items[k]
        later = set(out) | set("".join(t for t, _ in items[k + 1:]))
        letters = dict.fromkeys(acc_s.replace(".", "") + s.replace(".", ""))
        ell = "..." if ("..." in acc_s or "..." in s) else ""
        res_s = ell + "".join(ch for ch in letters if ch in later)
        acc = _pair_einsum(acc_s, acc, s, o, res_s)
        acc_s = res_s
    if acc_s != out:
        acc = acc._wrap(np.einsum(f"Z{acc_s}->Z{out}", acc.coef))
    return acc


def _pair_einsum(sa: str, a, sb: str, b, out: str):
    if isinstance(a, Jet) and isinstance(b, Jet):
        a, b = a._coerce(b)
        t = tables(a.nvars, a.order)
        prod = np.einsum(f"Z{sa},Z{sb}->Z{out}", a.coef[t.left], b.coef[t.right], optimize=True)
        return a._wrap(np.add.reduceat(prod, t.starts, axis=0))
    if isinstance(a, Jet):
        return a._wrap(np.einsum(f"Z{sa},{sb}->Z{out}", a.coef, np.asarray(b), optimize=True))
    if isinstance(b, Jet):
        return b._wrap(np.einsum(f"{sa},Z{sb}->Z{out}", np.asarray(a), b.coef, optimize=True))
    return np.einsum(f"{sa},{sb}->{out}", np.asarray(a), np.asarray(b))


def matmul(a, b) -> Jet:
    """Matrix product over the last two axes (batch axes broadcast)."""
    if not isinstance(a, Jet):
        return b._wrap(np.matmul(np.asarray(a), b.coef))
    if not isinstance(b, Jet):
        return a._wrap(np.matmul(a.coef, np.asarray(b)))
    a, b = a._coerce(b)
    t = tables(a.nvars, a.order)
    prod = np.matmul(a.coef[t.left], b.coef[t.right])
    return a._wrap(np.add.reduceat(prod, t.starts, axis=0))


def inv(a: Jet) -> Jet:
    """Matrix inverse over the last two axes, by the Neumann series about the value."""
    a0 = a.value
    cond = np.linalg.cond(a0)
    if not np.all(np.isfinite(cond)) or np.any(cond > 1e14):
        raise np.linalg.LinAlgError(f"singular matrix jet (condition number {np.max(cond):.3e})")
    inv0 = np.linalg.inv(a0)
    nil = a - Jet.constant(a0, a.nvars, a.order)
    step = matmul(-Jet.constant(inv0, a.nvars, a.order), nil)
    result = Jet.constant(inv0, a.nvars, a.order)
    term = result
    for _ in range(a.order):
        term = matmul(step, term)
        result = result + term
    return result


def stack(jets, axis: int = 0) -> Jet:
    """Stack jets along a new non-coefficient axis."""
    jets = list(jets)
    d = min(j.order for j in jets)
    n = jets[0].nvars
    coefs = [j.truncate(d).coef for j in jets]
    dtype = np.result_type(*coefs)
    if axis < 0:
        axis += jets[0].ndim + 1
    return Jet(np.stack([c.astype(dtype, copy=False) for c in coefs], axis=axis + 1), n, d)


def zeros(shape, nvars: int, order: int, dtype=float) -> Jet:
    return Jet(np.zeros((ncoef(nvars, order),) + tuple(shape), dtype=dtype), nvars, order)


# ---------------------------------------------------------------------------
# scalar functions by Taylor composition


def _compose(a: Jet, coeffs) -> Jet:
    """``sum_k coeffs[k] * (a - a0)**k``; ``coeffs[k]`` are arrays of a's shape."""
    a0 = a.value
    h = a - Jet.constant(a0, a.nvars, a.order)
    result = Jet.constant(coeffs[a.order], a.nvars, a.order)
    for k in range(a.order - 1, -1, -1):
        result = result * h + coeffs[k]
    return result


def _is_real(a: Jet) -> bool:
    return not np.iscomplexobj(a.coef)


def exp(a: Jet) -> Jet:
    e = np.exp(a.value)
    return _compose(a, [e / math.factorial(k) for k in range(a.order + 1)])


def log(a: Jet) -> Jet:
    a0 = a.value
    if _is_real(a):
        if np.any(a0 <= 0):
            raise DomainError(f"log of non-positive value {np.min(a0):.6g}")
    elif np.any(a0 == 0):
        raise DomainError("log of zero")
    coeffs = [np.log(a0)]
    for k in range(1, a.order + 1):
        coeffs.append((-1.0) ** (k + 1) / (k * a0**k))
    return _compose(a, coeffs)


def power(a: Jet, p: float) -> Jet:
    """Real power ``a**p`` for positive real jets (principal branch if complex)."""
    a0 = a.value
    if _is_real(a) and np.any(a0 <= 0) and p != int(p):
        raise DomainError(f"non-integer power of non-positive value {np.min(a0):.6g}")
    if np.any(a0 == 0) and p < a.order:
        raise DomainError("power is not differentiable at zero")
    coeffs = []
    binom = 1.0
    for k in range(a.order + 1):
        coeffs.append(binom * a0 ** (p - k))
        binom *= (p - k) / (k + 1)
    return _compose(a, coeffs)


def sqrt(a: Jet) -> Jet:
    a0 = a.value
    if _is_real(a) and np.any(a0 <= 0):
        raise DomainError(f"sqrt of non-positive value {np.min(a0):.6g}")
    return power(a, 0.5)


def reciprocal(a: Jet) -> Jet:
    a0 = a.value
    if np.any(a0 == 0):
        raise DomainError("division by zero")
    coeffs = [(-1.0) ** k / a0 ** (k + 1) for k in range(a.order + 1)]
    return _compose(a, coeffs)


def sin(a: Jet) -> Jet:
    a0 = a.value
    cycle = [np.sin(a0), np.cos(a0), -np.sin(a0), -np.cos(a0)]
    return _compose(a, [cycle[k % 4] / math.factorial(k) for k in range(a.order + 1)])


def cos(a: Jet) -> Jet:
    a0 = a.value
    cycle = [np.cos(a0), -np.sin(a0), -np.cos(a0), np.sin(a0)]
    return _compose(a, [cycle[k % 4] / math.factorial(k) for k in range(a.order + 1)])


def atan2(y: Jet, x: Jet) -> Jet:
    """Angle of ``x + i y``, continued smoothly from its value at the base point."""
    y, x = y._coerce(x)
    x0, y0 = x.value, y.value
    r2 = x0 * x0 + y0 * y0
    if np.any(r2 == 0):
        raise DomainError("atan2 at the origin")
    theta0 = np.arctan2(y0, x0)
    u = (y * x0 - x * y0) / (x * x0 + y * y0)
    # arctan(u), u has no constant term
    result = Jet.constant(theta0, x.nvars, x.order)
    upow = u
    u2 = u * u
    for k in range(0, x.order // 2 + 1):
        result = result + upow * ((-1.0) ** k / (2 * k + 1))
        upow = upow * u2
    return result


def compose_taylor(base: Jet, deltas) -> Jet:
    """Substitute jets into a Taylor polynomial.

    ``base`` holds the Taylor coefficients of a scalar function of ``n``
    variables (shape ``(B,)``); ``deltas`` are ``n`` jets of shape ``(B,)``
    with zero value, the displacements from the base point.  Returns
    ``sum_alpha c_alpha prod_i deltas[i]**alpha_i``.
    """
    if len(deltas) != base.nvars:
        raise ValueError(f"need {base.nvars} displacement jets, got {len(deltas)}")
    m, order = deltas[0].nvars, deltas[0].order
    top = min(base.order, order)
    tb = tables(base.nvars, base.order)
    dtype = np.result_type(base.coef, *(d.coef for d in deltas))
    out = Jet.constant(np.broadcast_to(base.coef[0], base.shape).astype(dtype), m, order)
    mono = {tuple([0] * base.nvars): None}
    for alpha in tb.multi[1:]:
        if sum(alpha) > top:
            break
        i = max(k for k, a in enumerate(alpha) if a)
        prev = list(alpha)
        prev[i] -= 1
        prev = tuple(prev)
        term = deltas[i] if mono[prev] is None else mono[prev] * deltas[i]
        mono[alpha] = term
        out = out + term * _expand_to(base.coef[tb.index[alpha]], base.ndim)
    return out


def from_gradient(value, grad: Jet) -> Jet:
    """Jet of order ``grad.order + 1`` with the given value and gradient jets.

    ``grad`` has shape ``(B, n)``: component ``i`` is the jet of ``d f/d x_i``.
    The gradient is assumed to be exact (curl free).
    """
    n, order = grad.nvars, grad.order + 1
    t = tables(n, order)
    lo = tables(n, order - 1)
    value = np.asarray(value)
    coef = np.zeros((t.size,) + value.shape, dtype=np.result_type(value, grad.coef))
    coef[0] = value
    for k, alpha in enumerate(t.multi[1:], start=1):
        i = next(j for j, a in enumerate(alpha) if a)
        prev = list(alpha)
        prev[i] -= 1
        coef[k] = grad.coef[lo.index[tuple(prev)], :, i] / alpha[i]
    return Jet(coef, n, order)

"""Shared oracles for the test-suite: finite differences and random expressions."""

from __future__ import annotations

import itertools
import math

import numpy as np

# central-difference stencils, O(h^2), indexed by derivative order
STENCILS = {
    0: {0: 1.0},
    1: {-1: -0.5, 1: 0.5},
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
    4: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0},
}


def _fd(f, x: np.ndarray, alpha, h: float) -> float:
    total = 0.0
    axes = [sorted(STENCILS[a].items()) for a in alpha]
    for combo in itertools.product(*axes):
        w = math.prod(c for _, c in combo)
        step = np.array([k for k, _ in combo], dtype=float) * h
        total += w * f(x + step)
    return total / h ** sum(alpha)


def finite_difference(f, x, alpha, h: float = 2e-2, steps: int = 2) -> float:
    """Mixed partial ``d^alpha f(x)`` by tensor-product central differences.

    ``steps`` rounds of Richardson extrapolation on halved step sizes remove
    the ``h^2, h^4, ...`` error terms.
    """
    x = np.asarray(x, dtype=float)
    row = [_fd(f, x, alpha, h / 2 ** k) for k in range(steps + 1)]
    for m in range(1, steps + 1):
        w = 4 ** m
        row = [(w * row[k + 1] - row[k]) / (w - 1) for k in range(len(row) - 1)]
    return row[0]


LEAVES = ["z", "w", "conj(z)", "conj(w)", "re(z)", "im(w)", "0.7", "(0.3 - 0.4*i)"]
UNARY = ["exp(0.5*{})", "sin({})", "cos({})", "log(2 + abs2({}))", "sqrt(3 + re({}))", "conj({})",
         "abs2({})", "re({})", "im({})", "({})^2", "({})^3"]
BINARY = ["{} + {}", "{} - {}", "{} * {}", "{} / (2 + abs2({}))"]


def random_expression(rng: np.random.Generator, depth: int = 3) -> str:
    """A random well-conditioned expression in the coordinates ``z``, ``w``."""
    if depth == 0 or rng.random() < 0.2:
        return str(rng.choice(LEAVES))
    if rng.random() < 0.45:
        return str(rng.choice(UNARY)).format(random_expression(rng, depth - 1))
    a, b = random_expression(rng, depth - 1), random_expression(rng, depth - 1)
    return "(" + str(rng.choice(BINARY)).format(a, b) + ")"


def cnum(c) -> str:
    """A complex number in the expression grammar."""
    c = complex(c)
    return f"({c.real!r} + ({c.imag!r})*i)"


def cp1_cover(F: str = "log(z)", n: int = 40, seed: int = 0):
    from gkforge import gerbe as gb
    from gkforge.charts import Chart

    c0, c1 = Chart("U0", z=("z",)), Chart("U1", z=("w",))
    rng = np.random.default_rng(seed)
    r, th = rng.uniform(0.5, 2.0, n), rng.uniform(0, 2 * np.pi, n)
    pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    return gb.CoverComplex(
        "cp1", "kahler", {"U0": c0, "U1": c1},
        potentials={"U0": c0.parse("log(1 + abs2(z))"), "U1": c1.parse("log(1 + abs2(w))")},
        transitions={("U0", "U1"): [c0.parse("1/z")]},
        overlaps={("U0", "U1"): pts},
        F={("U0", "U1"): c0.parse(F)},
        domains={"U0": {"type": "disc", "radius": 1.0}, "U1": {"type": "disc", "radius": 1.0}},
    )


TOY = ("A", "B", "C", "D")


def toy_cover(planted: dict = None, seed: int = 0, case: str = "commuting"):
    """Four charts; G, F are Cech coboundaries of exp(c z), exp(d z'); h_pm satisfy both triple conditions.

    ``planted`` maps a store name ("G3", "F3", "hp", "hm") and key to an extra
    factor appended to that entry.
    """
    from gkforge import gerbe as gb
    from gkforge.charts import Chart

    rng = np.random.default_rng(seed)
    blocks = dict(z=("z",), zp=("u",)) if case == "commuting" else dict(z=("z",), zp=("u",), q=("q",), P=("p",))
    charts = {n: Chart(n, **blocks) for n in TOY}
    pairs = list(itertools.combinations(TOY, 2))
    c = {k: complex(*rng.normal(size=2)) * 0.5 for k in pairs}
    d = {k: complex(*rng.normal(size=2)) * 0.5 for k in pairs}

    def val(t, a, b):
        return t[(a, b)] if (a, b) in t else -t[(b, a)]

    planted = planted or {}
    stores = {"G3": {}, "F3": {}, "hp": {}, "hm": {}}

    def put(store, key, text):
        extra = planted.get((store, key))
        stores[store][key] = charts[key[0]].parse(text + (f" * {extra}" if extra else ""))

    for a, b, cc in itertools.combinations(TOY, 3):
        sc = val(c, a, b) + val(c, b, cc) + val(c, cc, a)
        sd = val(d, a, b) + val(d, b, cc) + val(d, cc, a)
        put("G3", (a, b, cc), f"exp({cnum(sc)}*z)")
        put("F3", (a, b, cc), f"exp({cnum(sd)}*u)")
    for a, b in pairs:
        put("hp", (a, b), f"exp({cnum(c[(a, b)])}*z - {cnum(d[(a, b)])}*u)")
        put("hm", (a, b), f"exp({cnum(c[(a, b)])}*z + {cnum(np.conj(d[(a, b)]))}*conj(u))")
    overlaps = {}
    dim = charts["A"].dim
    for k in range(2, 5):
        for key in itertools.combinations(TOY, k):
            th = rng.uniform(0, 2 * np.pi, 12)
            rest = rng.uniform(-0.3, 0.3, (12, dim - 2))
            overlaps[key] = np.column_stack([np.cos(th), np.sin(th), rest])
    return gb.CoverComplex("toy", case, charts, overlaps=overlaps, **stores)

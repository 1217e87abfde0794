"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

import json
import pathlib
import time

import numpy as np
import pytest

from gkforge import cli
from gkforge import expr as ex
from gkforge import gerbe as gb
from gkforge import gkcore as gk
from gkforge import potentials as pt
from gkforge.charts import Chart
from helpers import cp1_cover, finite_difference, random_expression, toy_cover

SCEN = pathlib.Path(__file__).resolve().parents[1] / "scenarios"
GOLDEN = "abs2(z) - abs2(w) + 0.1*exp(re(z*w))*im(z*conj(w)) + 0.05*abs2(z)*abs2(w)"
SYMP_K = "2*re(q*P) + 0.5*(abs2(q) + abs2(P)) + 0.05*re(q^2*conj(P)) + 0.03*abs2(q)*abs2(P)"
COUPLED = "abs2(z) - abs2(w) + 2*re(q*P) + 0.5*(abs2(q) + abs2(P)) + 0.05*re(z*conj(q))*im(conj(w)*P)"


@pytest.fixture
def verdict(capsys):
    def emit(n: int, measured: dict, limits: dict, elapsed: float = None, budget: float = None):
        ok = all(measured[k] <= limits[k] for k in limits)
        if budget is not None:
            ok = ok and elapsed < budget
        parts = [f"{k}={measured[k]:.2e}<={limits[k]:.0e}" for k in limits]
        if budget is not None:
            parts.append(f"time={elapsed:.2f}s<{budget:.0f}s")
        with capsys.disabled():
            print(f"\ncriterion {n} {'PASS' if ok else 'FAIL'} " + " ".join(parts))
        bad = {k: measured[k] for k in limits if not measured[k] <= limits[k]}
        assert ok, (bad, elapsed)
    return emit


def worst(rep, prefix=""):
    return max(c.max_abs for c in rep.checks if c.name.startswith(prefix))


def test_criterion_1_kahler(verdict):
    t = time.perf_counter()
    c = Chart("k", z=("z",))
    m = {}
    for name, K, box in (("flat", "abs2(z)", 0.5), ("fs", "log(1 + abs2(z))", 1.0)):
        sc = pt.PotentialScenario(name, c, "kahler", ex.parse(K, c), box=box)
        pts = sc.sample_points(100)
        rep = gk.run_battery(pt.build_kahler(sc, pts), pts, tol=1e-9)
        assert rep.passed
        m[name] = worst(rep)
    chern = gb.chern_number(cp1_cover(), tol=1e-6)
    m["chern"] = abs(chern.value - 1)
    verdict(1, m, {"flat": 1e-9, "fs": 1e-9, "chern": 1e-6}, time.perf_counter() - t, 5)


def test_criterion_2_commuting(verdict):
    t = time.perf_counter()
    c = Chart("c", z=("z",), zp=("w",))
    sc = pt.PotentialScenario("golden", c, "commuting", ex.parse(GOLDEN, c))
    pts = sc.sample_points(100)
    bundle = pt.build_commuting(sc, pts)
    rep = gk.run_battery(bundle, pts)
    m = {
        "gk_identities": max(rep[n].max_abs for n in ("gk.dc_sum", "gk.ddc_plus", "gk.ddc_minus", "gk.H_equals_minus_dc_minus")),
        "H_formula": rep["gk.H_supplied_matches"].max_abs,
        "dH": rep["gk.dH"].max_abs,
        "bismut": max(rep["bismut.nabla_plus_J_plus"].max_abs, rep["bismut.nabla_minus_J_minus"].max_abs),
        "pi_self": max(rep["poisson.schouten_pi_plus"].max_abs, rep["poisson.schouten_pi_minus"].max_abs),
        "sigma": bundle.at(pts, 0).sigma.max_abs(),
        "Pi": max(rep["product.Pi_squared"].max_abs, rep["product.N_Pi"].max_abs),
    }
    assert rep.conventions["kappa"] == 0.5
    verdict(2, m, {"gk_identities": 1e-8, "H_formula": 1e-10, "dH": 1e-8, "bismut": 1e-7, "pi_self": 1e-8,
                   "sigma": 1e-12, "Pi": 1e-8}, time.perf_counter() - t, 10)


def test_criterion_3_symplectic(verdict):
    c = Chart("s", q=("q",), P=("P",))
    sc = pt.PotentialScenario("symp", c, "symplectic", ex.parse(SYMP_K, c), box=0.3)
    pts = sc.sample_points(50)
    bundle = pt.build_symplectic(sc, pts)
    val = pt.validate_symplectic(sc, bundle, pts)
    struct = gk.verify_pointwise_structure(bundle, pts)
    assert struct.passed
    b = bundle.at(pts, 0)
    Om = pt.symplectic_forms(sc.potential(pts, 2), c)[0].value
    poisson = gk.verify_poisson_family(bundle, pts)
    m = {
        "J_squared": max(val["J_plus_squared"], val["J_minus_squared"]),
        "dOmega": max(val["dOmega"], val["dOmega_plus"], val["dOmega_minus"]),
        "sigma_roundtrip": float(np.max(np.abs(b.sigma.value - np.linalg.inv(Om)))),
        "pushforward": max(val[k] for k in val if "pushforward" in k),
        "c_spread": poisson["poisson.mixed_bracket_constant_spread"].max_abs,
    }
    verdict(3, m, {"J_squared": 1e-10, "dOmega": 1e-9, "sigma_roundtrip": 1e-8, "pushforward": 1e-8,
                   "c_spread": 1e-6})


def test_criterion_4_general(verdict):
    gen = Chart("g", z=("z",), zp=("w",), q=("q",), P=("P",))
    comm = Chart("c", z=("z",), zp=("w",))
    symp = Chart("s", q=("q",), P=("P",))
    Kc, Ks = "abs2(z) - abs2(w) + 0.1*exp(re(z*w))*im(z*conj(w))", SYMP_K
    sc = pt.PotentialScenario("prod", gen, "general", ex.parse(f"{Kc} + {Ks}", gen), box=0.3)
    pts = sc.sample_points(30)
    f = pt.build_general(sc, pts).fields(pts, 1)
    a = pt.build_commuting(pt.PotentialScenario("c", comm, "commuting", ex.parse(Kc, comm)), pts[:, :4]).fields(pts[:, :4], 1)
    s = pt.PotentialScenario("s", symp, "symplectic", ex.parse(f"0.5*({Ks})", symp), box=0.3)
    b = pt.build_symplectic(s, pts[:, 4:]).fields(pts[:, 4:], 1)
    block = 0.0
    for x, y, z in ((f.Jp, a.Jp, b.Jp), (f.Jm, a.Jm, b.Jm), (f.g, a.g, b.g)):
        want = np.zeros_like(x.coef)
        # value and first derivatives; each factor depends on its own four variables only
        want[0, :, :4, :4] = y.coef[0]
        want[0, :, 4:, 4:] = z.coef[0]
        want[1:5, :, :4, :4] = y.coef[1:5]
        want[5:9, :, 4:, 4:] = z.coef[1:5]
        block = max(block, float(np.max(np.abs(x.coef - want))))
    cs = pt.PotentialScenario("coupled", gen, "general", ex.parse(COUPLED, gen), box=0.5)
    cpts = cs.sample_points(30)
    val = pt.validate_general(cs, pt.build_general(cs, cpts), cpts)
    verdict(4, {"block": block, "compat": val["compatibility"], "g_dual": val["g_dual"]},
            {"block": 1e-10, "compat": 1e-8, "g_dual": 1e-8})


def test_criterion_5_degenerations(verdict):
    comm = Chart("c", z=("z",), zp=("w",))
    symp = Chart("s", q=("q",), P=("P",))
    kah = Chart("k", z=("z", "u"))

    def diff(x, y):
        return max(float(np.max(np.abs(u.coef - v.coef))) for u, v in ((x.Jp, y.Jp), (x.Jm, y.Jm), (x.g, y.g)))

    K = ex.parse(GOLDEN, comm)
    pts = pt.PotentialScenario("c", comm, "commuting", K).sample_points(30)
    to_comm = diff(pt.build_general(pt.PotentialScenario("g", comm, "general", K), pts).fields(pts, 2),
                   pt.build_commuting(pt.PotentialScenario("c", comm, "commuting", K), pts).fields(pts, 2))
    gs = pt.PotentialScenario("g", symp, "general", ex.parse(SYMP_K, symp), box=0.3)
    ss = pt.PotentialScenario("s", symp, "symplectic", ex.parse(f"0.5*({SYMP_K})", symp), box=0.3)
    spts = gs.sample_points(30)
    to_symp = diff(pt.build_general(gs, spts).fields(spts, 2), pt.build_symplectic(ss, spts).fields(spts, 2))
    ks = pt.PotentialScenario("k", kah, "general", ex.parse("log(1 + abs2(z) + abs2(u))", kah), box=0.5)
    kpts = ks.sample_points(30)
    b = pt.build_general(ks, kpts).at(kpts, 2)
    lim = max(b.H.max_abs(), b.sigma.max_abs(), b.pi_m.max_abs())
    assert float(np.max(np.abs(b.Jp.value - b.Jm.value))) == 0
    verdict(5, {"to_commuting": to_comm, "to_symplectic": to_symp, "kahler_limit": lim},
            {"to_commuting": 1e-12, "to_symplectic": 1e-12, "kahler_limit": 1e-10})


def planted_factor(value, planted=0.01):
    """How far the reported magnitude is from the planted one, as a ratio >= 1."""
    return max(value / planted, planted / value) if value > 0 else float("inf")


def test_criterion_6_gerbe(verdict):
    m = {"cp1": worst(gb.check_kahler_gluing(cp1_cover()))}
    rep = gb.check_gerbe(toy_cover())
    assert rep.passed
    m["delta"] = worst(rep, "gerbe.cocycle")

    def bad(rep, name):
        c = rep[name]
        assert not c.passed
        return planted_factor(c.max_abs)

    m["nonholomorphic_F"] = bad(gb.check_kahler_gluing(cp1_cover("log(z) + 0.01*conj(z)")), "kahler.F_holomorphic_U0_U1")
    m["broken_cocycle"] = bad(gb.check_gerbe(toy_cover({("G3", ("A", "B", "C")): "exp(0.01*z)"})),
                              "gerbe.cocycle_G_A_B_C_D")
    m["broken_bihermitian"] = bad(gb.check_gerbe(toy_cover({("hp", ("A", "B")): "exp(0.01)"})),
                                  "gerbe.bihermitian_plus_A_B_C")
    verdict(6, m, {"cp1": 1e-10, "delta": 1e-12, "nonholomorphic_F": 2, "broken_cocycle": 2,
                   "broken_bihermitian": 2})


def test_criterion_7_jets_vs_fd(verdict):
    c = Chart("c", z=("z",), zp=("w",))
    rng = np.random.default_rng(7)
    err = {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}
    for _ in range(200):
        e = ex.parse(random_expression(rng), c)
        x = rng.uniform(-0.6, 0.6, 4)
        jet = ex.eval_jet(e, x, 4)
        part = np.real if rng.random() < 0.5 else np.imag
        for order in err:
            alpha = tuple(int(k) for k in rng.multinomial(order, [0.25] * 4))
            exact = part(jet.partial(alpha)[0])
            fd = finite_difference(lambda y: part(ex.evaluate(e, y)[0]), x, alpha, h=2e-2 if order < 3 else 5e-2)
            err[order] = max(err[order], abs(exact - fd) / max(1.0, abs(fd)))
    verdict(7, {"order1": err[1], "order3": err[3], "order4": err[4]},
            {"order1": 1e-6, "order3": 1e-4, "order4": 1e-4})


def test_criterion_8_determinism_and_exit_codes(verdict, tmp_path, monkeypatch, capsys):
    t = time.perf_counter()
    outs = []
    for n in ("1", "4"):
        monkeypatch.setenv("GKFORGE_THREADS", n)
        path = tmp_path / f"r{n}.json"
        assert cli.main(["check", str(SCEN / "golden.json"), "--json", str(path)]) == 0
        outs.append(path.read_bytes())
    codes = (
        cli.main(["check", str(SCEN / "golden.json")]),
        cli.main(["check", str(SCEN / "planted_gerbe.json")]),
        cli.main(["check", str(SCEN / "malformed.json")]),
    )
    capsys.readouterr()
    assert json.loads(outs[0])["passed"]
    m = {"byte_diff": float(outs[0] != outs[1]), "exit_codes": float(codes != (0, 1, 2))}
    verdict(8, m, {"byte_diff": 0, "exit_codes": 0}, time.perf_counter() - t, 60)

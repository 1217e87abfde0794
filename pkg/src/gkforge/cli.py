"""Scenario files, the run orchestrator and the ``gkforge`` command line.

Exit codes: 0 when every check passes, 1 when at least one check fails,
2 for malformed input or a scenario that cannot be built.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from . import expr as ex
from . import gerbe as gb
from . import gkcore as gk
from . import potentials as pt
from .charts import Chart

SCENARIO_FORMAT = "gkforge-scenario/1"
REPORT_FORMAT = "gkforge-report/1"

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

_names = {"type": "array", "items": {"type": "string"}}
_point = {"type": "array", "items": {"type": "number"}, "minItems": 2}
_sample = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "box": {"type": "number", "exclusiveMinimum": 0},
        "center": {"type": "array", "items": {"type": "number"}},
        "radius": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2},
        "rest_box": {"type": "number", "minimum": 0},
    },
}
_data = {
    "type": "array",
    "items": {
        "type": "object",
        "additionalProperties": False,
        "required": ["charts", "expr"],
        "properties": {"charts": {**_names, "minItems": 2, "maxItems": 3}, "expr": {"type": "string"}},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["format", "charts"],
    "properties": {
        "format": {"const": SCENARIO_FORMAT},
        "config": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "kappa": {"enum": ["auto", 0.5, 1, 1.0]},
            },
        },
        "charts": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "properties": {"z": _names, "zp": _names, "q": _names, "P": _names},
            },
        },
        "scenarios": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "chart", "case", "K"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "chart": {"type": "string"},
                    "case": {"enum": list(pt.CASES)},
                    "K": {"type": "string"},
                    "phi": {"type": "string"},
                    "t": {"type": "number"},
                    "box": {"type": "number", "exclusiveMinimum": 0},
                    "center": {"type": "array", "items": {"type": "number"}},
                    "samples": {"type": "integer", "minimum": 1},
                    "tol": {"type": "number", "exclusiveMinimum": 0},
                    "g_sign": {"enum": [1, -1]},
                    "legendre": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["swap"],
                        "properties": {"swap": _names, "names": {"type": "object", "additionalProperties": {"type": "string"}}},
                    },
                },
            },
        },
        "covers": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "case", "charts"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "case": {"enum": ["kahler", "commuting", "general"]},
                    "charts": {**_names, "minItems": 1},
                    "tol": {"type": "number", "exclusiveMinimum": 0},
                    "checks": {"type": "array", "items": {"enum": ["kahler_gluing", "chern", "commuting_gluing", "gerbe"]}},
                    "potentials": {"type": "object", "additionalProperties": {"type": "string"}},
                    "transitions": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["from", "to", "map"],
                            "properties": {"from": {"type": "string"}, "to": {"type": "string"}, "map": _names},
                        },
                    },
                    "overlaps": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["charts"],
                            "properties": {
                                "charts": {**_names, "minItems": 2, "maxItems": 4},
                                "points": {"type": "array", "items": _point, "minItems": 1},
                                "sample": _sample,
                                "stored": {"type": "object", "additionalProperties": {"type": "array", "items": _point}},
                            },
                            "oneOf": [{"required": ["points"]}, {"required": ["sample"]}],
                        },
                    },
                    "F": _data,
                    "f": _data,
                    "g": _data,
                    "h_plus": _data,
                    "h_minus": _data,
                    "G": _data,
                    "F_triple": _data,
                    "chern": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["domains"],
                        "properties": {
                            "domains": {"type": "object", "additionalProperties": {"type": "object"}},
                            "weights": {"type": "object", "additionalProperties": {"type": "string"}},
                            "expect": {"type": "integer"},
                            "nodes": {"type": "integer", "minimum": 4},
                            "tol": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                },
            },
        },
    },
}


class ScenarioError(ValueError):
    """Invalid scenario file; ``pointer`` is the JSON pointer of the offending value."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


@dataclass
class Config:
    samples: int = 100
    seed: int = 0
    tol: float = 1e-8
    kappa: object = "auto"


@dataclass
class CoverSpec:
    cover: gb.CoverComplex
    tol: float
    checks: tuple
    chern: Optional[dict] = None


@dataclass
class ScenarioFile:
    path: str
    config: Config
    charts: dict
    scenarios: list = field(default_factory=list)
    legendre: dict = field(default_factory=dict)
    covers: list = field(default_factory=list)


def _parse(text: str, chart: Chart, pointer: str) -> ex.Expr:
    try:
        return ex.parse(text, chart)
    except ex.ExprSyntaxError as exc:
        raise ScenarioError(str(exc), pointer) from exc


def _chart_ref(charts: dict, name: str, pointer: str) -> Chart:
    if name not in charts:
        raise ScenarioError(f"unknown chart {name!r}", pointer)
    return charts[name]


CASE_BLOCKS = {
    "kahler": ("a non-empty 'z' block and no other blocks", lambda c: bool(c.z) and not (c.zp or c.q or c.P)),
    "commuting": ("non-empty 'z' and 'zp' blocks and no leaf blocks", lambda c: bool(c.z and c.zp) and not (c.q or c.P)),
    "symplectic": ("non-empty 'q'/'P' blocks and no 'z'/'zp' blocks", lambda c: bool(c.q) and not (c.z or c.zp)),
    "general": ("at least one coordinate", lambda c: bool(c.coordinates)),
}


def load(path: str) -> ScenarioFile:
    """Read and validate a scenario file."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from exc
    except OSError as exc:
        raise ScenarioError(f"cannot read {path!r}: {exc.strerror}") from exc
    return load_dict(raw, path)


def load_dict(raw: dict, path: str = "<memory>") -> ScenarioFile:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ScenarioError(err.message, _pointer(err.absolute_path))

    cfg = Config(**raw.get("config", {}))
    charts = {}
    for name, blocks in sorted(raw["charts"].items()):
        try:
            charts[name] = Chart(name, **blocks)
        except ValueError as exc:
            raise ScenarioError(str(exc), f"/charts/{name}") from exc

    out = ScenarioFile(path, cfg, charts)
    seen = set()
    for i, s in enumerate(raw.get("scenarios", [])):
        ptr = f"/scenarios/{i}"
        if s["name"] in seen:
            raise ScenarioError(f"duplicate scenario name {s['name']!r}", ptr + "/name")
        seen.add(s["name"])
        chart = _chart_ref(charts, s["chart"], ptr + "/chart")
        need, ok = CASE_BLOCKS[s["case"]]
        if not ok(chart):
            raise ScenarioError(f"case {s['case']!r} requires a chart with {need}", ptr + "/chart")
        center = s.get("center")
        if center is not None and len(center) != chart.dim:
            raise ScenarioError(f"center needs {chart.dim} real coordinates", ptr + "/center")
        scen = pt.PotentialScenario(
            name=s["name"],
            chart=chart,
            case=s["case"],
            K=_parse(s["K"], chart, ptr + "/K"),
            phi=_parse(s["phi"], chart, ptr + "/phi") if "phi" in s else None,
            t=float(s.get("t", 0.0)),
            box=float(s.get("box", 0.5)),
            samples=int(s.get("samples", cfg.samples)),
            tol=float(s.get("tol", cfg.tol)),
            g_sign=int(s.get("g_sign", 1)),
            center=None if center is None else np.asarray(center, dtype=float),
        )
        out.scenarios.append(scen)
        if "legendre" in s:
            if s["case"] != "symplectic":
                raise ScenarioError("a Legendre transform needs a symplectic scenario", ptr + "/legendre")
            for P in s["legendre"]["swap"]:
                if P not in chart.P:
                    raise ScenarioError(f"{P!r} is not a momentum coordinate", ptr + "/legendre/swap")
            out.legendre[scen.name] = s["legendre"]

    names = set()
    for i, c in enumerate(raw.get("covers", [])):
        out.covers.append(_load_cover(c, charts, cfg, f"/covers/{i}", i))
        if c["name"] in names:
            raise ScenarioError(f"duplicate cover name {c['name']!r}", f"/covers/{i}/name")
        names.add(c["name"])
    return out


def _sample_overlap(spec: dict, chart: Chart, rng: np.random.Generator, pointer: str) -> np.ndarray:
    n = spec["n"]
    if "radius" in spec:
        r0, r1 = spec["radius"]
        k = len(chart.coordinates)
        r = rng.uniform(r0, r1, size=(n, 1))
        th = rng.uniform(0, 2 * np.pi, size=(n, 1))
        rest = rng.uniform(-1, 1, size=(n, chart.dim - 2)) * spec.get("rest_box", 0.5)
        pts = np.column_stack([r * np.cos(th), r * np.sin(th), rest]) if k > 1 else np.column_stack([r * np.cos(th), r * np.sin(th)])
    else:
        pts = rng.uniform(-1, 1, size=(n, chart.dim)) * spec.get("box", 0.5)
    if "center" in spec:
        if len(spec["center"]) != chart.dim:
            raise ScenarioError(f"center needs {chart.dim} real coordinates", pointer + "/center")
        pts = pts + np.asarray(spec["center"], dtype=float)
    return pts


def _load_cover(c: dict, charts: dict, cfg: Config, ptr: str, index: int) -> CoverSpec:
    members = {}
    for j, name in enumerate(c["charts"]):
        members[name] = _chart_ref(charts, name, f"{ptr}/charts/{j}")

    def member(name, pointer):
        if name not in members:
            raise ScenarioError(f"chart {name!r} is not part of cover {c['name']!r}", pointer)
        return members[name]

    potentials = {}
    for name, text in sorted(c.get("potentials", {}).items()):
        potentials[name] = _parse(text, member(name, f"{ptr}/potentials/{name}"), f"{ptr}/potentials/{name}")
    transitions = {}
    for j, t in enumerate(c.get("transitions", [])):
        p = f"{ptr}/transitions/{j}"
        src, dst = member(t["from"], p + "/from"), member(t["to"], p + "/to")
        if len(t["map"]) != len(dst.coordinates):
            raise ScenarioError(f"map must give {len(dst.coordinates)} coordinates of {dst.name!r}", p + "/map")
        transitions[(src.name, dst.name)] = [_parse(e, src, f"{p}/map/{k}") for k, e in enumerate(t["map"])]
    overlaps, stored = {}, {}
    for j, o in enumerate(c.get("overlaps", [])):
        p = f"{ptr}/overlaps/{j}"
        key = tuple(o["charts"])
        for k, name in enumerate(key):
            member(name, f"{p}/charts/{k}")
        if len(set(key)) != len(key):
            raise ScenarioError("overlap charts must be distinct", p + "/charts")
        first = members[key[0]]
        if "points" in o:
            pts = np.asarray(o["points"], dtype=float)
            if pts.shape[1] != first.dim:
                raise ScenarioError(f"points need {first.dim} real coordinates of {first.name!r}", p + "/points")
        else:
            rng = np.random.default_rng([cfg.seed, index, j])
            pts = _sample_overlap(o["sample"], first, rng, p + "/sample")
        overlaps[key] = pts
        if "stored" in o:
            stored[key] = {}
            for name, arr in sorted(o["stored"].items()):
                member(name, f"{p}/stored/{name}")
                stored[key][name] = np.asarray(arr, dtype=float)
    stores = {}
    for label, size in (("F", 2), ("f", 2), ("g", 2), ("h_plus", 2), ("h_minus", 2), ("G", 3), ("F_triple", 3)):
        stores[label] = {}
        for j, d in enumerate(c.get(label, [])):
            p = f"{ptr}/{label}/{j}"
            key = tuple(d["charts"])
            if len(key) != size:
                raise ScenarioError(f"{label} lives on {size}-fold overlaps", p + "/charts")
            for k, name in enumerate(key):
                member(name, f"{p}/charts/{k}")
            stores[label][key] = _parse(d["expr"], members[key[0]], p + "/expr")
    chern = c.get("chern")
    domains, weights = {}, {}
    if chern:
        for name, dom in sorted(chern["domains"].items()):
            member(name, f"{ptr}/chern/domains/{name}")
            if dom.get("type") not in ("disc", "rect"):
                raise ScenarioError("domain type must be 'disc' or 'rect'", f"{ptr}/chern/domains/{name}")
            domains[name] = dom
        for name, text in sorted(chern.get("weights", {}).items()):
            weights[name] = _parse(text, member(name, f"{ptr}/chern/weights/{name}"), f"{ptr}/chern/weights/{name}")
    try:
        cover = gb.CoverComplex(
            c["name"], c["case"], members, potentials, transitions, overlaps, stored,
            F=stores["F"], f=stores["f"], g=stores["g"], hp=stores["h_plus"], hm=stores["h_minus"],
            G3=stores["G"], F3=stores["F_triple"], domains=domains, weights=weights,
        )
    except gb.CoverError as exc:
        raise ScenarioError(str(exc), ptr) from exc
    checks = c.get("checks")
    if checks is None:
        checks = []
        if c["case"] == "kahler":
            checks.append("kahler_gluing")
        if chern:
            checks.append("chern")
        if stores["f"] or stores["g"]:
            checks.append("commuting_gluing")
        if stores["h_plus"] or stores["h_minus"] or stores["G"] or stores["F_triple"]:
            checks.append("gerbe")
    return CoverSpec(cover, float(c.get("tol", 1e-10)), tuple(checks), chern)


# ---------------------------------------------------------------------------
# running


@dataclass
class Outcome:
    name: str
    kind: str
    report: Optional[gk.CheckReport] = None
    error: Optional[str] = None

    @property
    def status(self) -> int:
        if self.error is not None:
            return EXIT_ERROR
        return EXIT_OK if self.report.passed else EXIT_FAIL

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "passed": self.status == EXIT_OK}
        if self.error is not None:
            d["error"] = self.error
        else:
            d.update(self.report.to_dict())
        return d


@dataclass
class RunReport:
    path: str
    config: Config
    outcomes: list

    @property
    def exit_code(self) -> int:
        return max((o.status for o in self.outcomes), default=EXIT_OK)

    @property
    def passed(self) -> bool:
        return self.exit_code == EXIT_OK

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": __version__,
            "file": os.path.basename(self.path),
            "config": {"samples": self.config.samples, "seed": self.config.seed, "tol": self.config.tol,
                       "kappa": self.config.kappa},
            "passed": self.passed,
            "results": [o.to_dict() for o in self.outcomes],
        }

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"gkforge {__version__}  file={os.path.basename(self.path)}  seed={self.config.seed}  "
                 f"samples={self.config.samples}  tol={self.config.tol:.3g}"]
        for o in self.outcomes:
            head = "PASS" if o.status == EXIT_OK else ("ERROR" if o.error else "FAIL")
            lines.append(f"[{head}] {o.kind} {o.name}")
            if o.error:
                lines.append(f"    {o.error}")
                continue
            for c in sorted(o.report.checks, key=lambda c: c.name):
                mark = "ok  " if c.passed else "FAIL"
                extra = f"  ({c.detail})" if c.detail else ""
                lines.append(f"    {mark} {c.name:<48s} {c.max_abs:.2e}  tol {c.tol:.1e}{extra}")
            for key, val in sorted(o.report.conventions.items()):
                if key in ("kappa", "schouten_c", "g_sign", "min_eigenvalue"):
                    lines.append(f"    convention {key} = {_fmt(val)}")
        lines.append("overall: " + {EXIT_OK: "PASS", EXIT_FAIL: "FAIL", EXIT_ERROR: "ERROR"}[self.exit_code])
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _clean(obj):
    """Make a report JSON-safe with a fixed float rendering."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(f"{x:.12e}") if math.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _validation_report(values: dict, tol: float, n: int) -> gk.CheckReport:
    rep = gk.CheckReport()
    for key, val in sorted(values.items()):
        if key.endswith("_cond"):
            rep.conventions[key] = val
        else:
            rep.add(f"build.{key}", val, tol, n)
    return rep


def run_scenario(scen: pt.PotentialScenario, cfg: Config, label: Optional[str] = None) -> Outcome:
    name = label or scen.name
    try:
        pts = scen.sample_points(scen.samples, cfg.seed)
        bundle = pt.build(scen, pts)
        rep = gk.run_battery(bundle, pts, scen.tol, cfg.kappa)
        if scen.case == "symplectic":
            rep = rep.merge(_validation_report(pt.validate_symplectic(scen, bundle, pts, scen.tol), scen.tol, len(pts)))
        elif scen.case == "general":
            rep = rep.merge(_validation_report(pt.validate_general(scen, bundle, pts, scen.tol), scen.tol, len(pts)))
        rep.conventions["g_sign"] = scen.g_sign
        return Outcome(name, "scenario", rep)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        return Outcome(name, "scenario", error=f"{type(exc).__name__}: {exc}")


def run_cover(spec: CoverSpec, cfg: Config) -> Outcome:
    cover = spec.cover
    rep = gk.CheckReport()
    try:
        for check in spec.checks:
            if check == "kahler_gluing":
                rep = rep.merge(gb.check_kahler_gluing(cover, spec.tol))
            elif check == "commuting_gluing":
                rep = rep.merge(gb.check_commuting_gluing(cover, spec.tol))
            elif check == "gerbe":
                rep = rep.merge(gb.check_gerbe(cover, spec.tol))
            elif check == "chern":
                chern = spec.chern or {}
                res = gb.chern_number(cover, chern.get("nodes", 48), chern.get("tol", 1e-6))
                want = chern.get("expect", res.nearest_integer)
                one = gk.CheckReport()
                one.add("chern.integrality", abs(res.value - want), chern.get("tol", 1e-6), res.nodes,
                        detail=f"c1 = {res.value:.9f}, expected {want}")
                one.conventions["chern_number"] = res.value
                rep = rep.merge(one)
        return Outcome(cover.name, "cover", rep)
    except (ValueError, ArithmeticError, RuntimeError, KeyError) as exc:
        return Outcome(cover.name, "cover", error=f"{type(exc).__name__}: {exc}")


def threads() -> int:
    raw = os.environ.get("GKFORGE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = min(4, os.cpu_count() or 1)
    return max(1, n)


def run(sf: ScenarioFile, samples: Optional[int] = None, seed: Optional[int] = None,
        tol: Optional[float] = None, kappa=None) -> RunReport:
    """Run every scenario and cover; results are merged in file order."""
    cfg = Config(
        samples if samples is not None else sf.config.samples,
        seed if seed is not None else sf.config.seed,
        tol if tol is not None else sf.config.tol,
        kappa if kappa is not None else sf.config.kappa,
    )
    jobs = []
    for scen in sf.scenarios:
        over = {}
        if samples is not None:
            over["samples"] = samples
        if tol is not None:
            over["tol"] = tol
        scen = dataclasses.replace(scen, **over) if over else scen
        jobs.append((run_scenario, scen, None))
        if scen.name in sf.legendre:
            leg = sf.legendre[scen.name]
            jobs.append((_run_legendre, scen, leg))
    for spec in sf.covers:
        jobs.append((run_cover, spec, None))

    def call(job):
        fn, obj, extra = job
        return fn(obj, cfg) if extra is None else fn(obj, cfg, extra)

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        outcomes = list(pool.map(call, jobs))
    return RunReport(sf.path, cfg, outcomes)


def _run_legendre(scen: pt.PotentialScenario, cfg: Config, leg: dict) -> Outcome:
    label = f"{scen.name}:legendre"
    try:
        new = pt.legendre_transform(scen, leg["swap"], leg.get("names"))
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        return Outcome(label, "scenario", error=f"{type(exc).__name__}: {exc}")
    return run_scenario(new, cfg, label)


def calibrate(sf: ScenarioFile, seed: Optional[int] = None) -> dict:
    """Convention ledger: kappa residuals, fitted Schouten constant and g-sign test per scenario."""
    seed = sf.config.seed if seed is None else seed
    out = {}
    for scen in sf.scenarios:
        entry = {}
        try:
            pts = scen.sample_points(min(scen.samples, 50), seed)
            bundle = pt.build(scen, pts)
            cal = gk.calibrate_kappa(bundle, pts)
            entry["kappa"] = cal["kappa"]
            entry["kappa_residuals"] = {str(k): v for k, v in cal["residuals"].items()}
            fam = gk.verify_poisson_family(bundle, pts, scen.tol)
            entry["schouten_c"] = fam.conventions.get("schouten_c")
            if scen.case in ("kahler", "commuting"):
                entry["g_sign"] = {str(k): v for k, v in pt.g_sign_experiment(scen, points=pts).items()}
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
        out[scen.name] = entry
    return out


# ---------------------------------------------------------------------------
# command line


def _kappa(text: str):
    if text == "auto":
        return "auto"
    v = float(text)
    if v not in (0.5, 1.0):
        raise argparse.ArgumentTypeError("kappa must be auto, 0.5 or 1")
    return v


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gkforge", description="Verify generalized Kähler scenarios.")
    parser.add_argument("--version", action="version", version=f"gkforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    chk = sub.add_parser("check", help="run every scenario and cover in a file")
    chk.add_argument("file")
    chk.add_argument("--samples", type=int)
    chk.add_argument("--seed", type=int)
    chk.add_argument("--tol", type=float)
    chk.add_argument("--kappa", type=_kappa)
    chk.add_argument("--json", dest="json_out", help="write the machine-readable report here ('-' for stdout)")
    cal = sub.add_parser("calibrate", help="run the convention calibration and print the ledger")
    cal.add_argument("file")
    cal.add_argument("--seed", type=int)
    sub.add_parser("schema", help="print the scenario JSON schema")
    args = parser.parse_args(argv)

    if args.command == "schema":
        print(json.dumps(SCHEMA, indent=2, sort_keys=True))
        return EXIT_OK
    try:
        sf = load(args.file)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.command == "calibrate":
        print(json.dumps(_clean(calibrate(sf, args.seed)), indent=2, sort_keys=True))
        return EXIT_OK
    report = run(sf, args.samples, args.seed, args.tol, args.kappa)
    if args.json_out == "-":
        sys.stdout.write(report.to_json())
    else:
        sys.stdout.write(report.to_text())
        if args.json_out:
            with open(args.json_out, "w", encoding="utf-8") as fh:
                fh.write(report.to_json())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())

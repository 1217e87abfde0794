import json
import pathlib
import re

import pytest

from gkforge import cli

SCEN = pathlib.Path(__file__).resolve().parents[1] / "scenarios"


def write(tmp_path, obj, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def minimal(**extra):
    d = {"format": "gkforge-scenario/1", "charts": {"c": {"z": ["z"]}},
         "scenarios": [{"name": "flat", "chart": "c", "case": "kahler", "K": "abs2(z)"}]}
    d.update(extra)
    return d


@pytest.fixture(scope="module")
def golden_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden")
    code = cli.main(["check", str(SCEN / "golden.json"), "--json", str(out / "a.json")])
    return code, (out / "a.json").read_text()


def test_minimal_file_loads(tmp_path):
    sf = cli.load(write(tmp_path, minimal()))
    assert [s.name for s in sf.scenarios] == ["flat"]
    assert sf.config.samples == 100


def test_unknown_field_reports_pointer(tmp_path):
    d = minimal()
    d["scenarios"][0]["colour"] = "red"
    with pytest.raises(cli.ScenarioError) as info:
        cli.load(write(tmp_path, d))
    assert info.value.pointer == "/scenarios/0"
    assert "colour" in str(info.value)


def test_case_block_requirement(tmp_path):
    d = minimal()
    d["scenarios"][0]["case"] = "commuting"
    with pytest.raises(cli.ScenarioError, match="'zp'") as info:
        cli.load(write(tmp_path, d))
    assert info.value.pointer == "/scenarios/0/chart"


def test_bad_expression_and_reference(tmp_path):
    d = minimal()
    d["scenarios"][0]["K"] = "abs2(x)"
    with pytest.raises(cli.ScenarioError, match="'x'") as info:
        cli.load(write(tmp_path, d))
    assert info.value.pointer == "/scenarios/0/K"
    d = minimal()
    d["scenarios"][0]["chart"] = "nowhere"
    with pytest.raises(cli.ScenarioError, match="nowhere"):
        cli.load(write(tmp_path, d))


def test_cover_reference_errors(tmp_path):
    d = minimal(covers=[{"name": "c", "case": "kahler", "charts": ["c"],
                         "overlaps": [{"charts": ["c", "d"], "sample": {"n": 3}}]}])
    with pytest.raises(cli.ScenarioError) as info:
        cli.load(write(tmp_path, d))
    assert info.value.pointer == "/covers/0/overlaps/0/charts/1"


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(cli.ScenarioError, match="invalid JSON"):
        cli.load(str(p))
    assert cli.main(["check", str(p)]) == 2


def test_golden_exit_zero(golden_run):
    code, text = golden_run
    assert code == 0
    rep = json.loads(text)
    assert rep["passed"] and rep["format"] == "gkforge-report/1"
    comm = next(r for r in rep["results"] if r["name"] == "commuting-golden")
    h = next(c for c in comm["checks"] if c["name"] == "gk.H_supplied_matches")
    assert h["max_abs"] <= 1e-10


def test_json_report_is_deterministic(golden_run, tmp_path, monkeypatch):
    monkeypatch.setenv("GKFORGE_THREADS", "1")
    cli.main(["check", str(SCEN / "golden.json"), "--json", str(tmp_path / "b.json")])
    assert (tmp_path / "b.json").read_text() == golden_run[1]


def test_planted_violation_exit_one(capsys):
    code = cli.main(["check", str(SCEN / "planted_gerbe.json")])
    out = capsys.readouterr().out
    assert code == 1
    assert re.search(r"FAIL gerbe\.cocycle_G_A_B_C_D\s+1\.0\de-02", out)


def test_malformed_exit_two(capsys):
    assert cli.main(["check", str(SCEN / "malformed.json")]) == 2
    assert "/scenarios/0" in capsys.readouterr().err


def test_build_error_exit_two(tmp_path, capsys):
    d = minimal()
    d["charts"]["cc"] = {"z": ["z"], "zp": ["w"]}
    d["scenarios"] = [{"name": "indefinite", "chart": "cc", "case": "commuting", "K": "abs2(z) + abs2(w)"}]
    assert cli.main(["check", write(tmp_path, d)]) == 2
    assert "PositivityError" in capsys.readouterr().out


def test_human_report_sorted_three_digits(tmp_path, capsys):
    cli.main(["check", write(tmp_path, minimal()), "--samples", "10"])
    out = capsys.readouterr().out
    names = re.findall(r"^\s+(?:ok  |FAIL) (\S+)\s+(\S+)", out, re.M)
    assert [n for n, _ in names] == sorted(n for n, _ in names)
    assert all(re.fullmatch(r"\d\.\d\de[+-]\d\d", v) for _, v in names)
    assert "samples=10" in out


def test_kappa_override_fails_bismut(tmp_path, capsys):
    d = minimal()
    d["charts"]["cc"] = {"z": ["z"], "zp": ["w"]}
    d["scenarios"] = [{"name": "g", "chart": "cc", "case": "commuting", "samples": 10,
                       "K": "abs2(z) - abs2(w) + 0.1*exp(re(z*w))*im(z*conj(w))"}]
    path = write(tmp_path, d)
    assert cli.main(["check", path]) == 0
    assert cli.main(["check", path, "--kappa", "1"]) == 1
    assert "FAIL bismut.nabla_plus_J_plus" in capsys.readouterr().out


def test_calibrate_prints_ledger(tmp_path, capsys):
    d = minimal()
    d["charts"]["cc"] = {"z": ["z"], "zp": ["w"]}
    d["scenarios"].append({"name": "c", "chart": "cc", "case": "commuting", "K": "abs2(z) - abs2(w) + 0.1*re(z*w)*im(z*conj(w))"})
    assert cli.main(["calibrate", write(tmp_path, d)]) == 0
    ledger = json.loads(capsys.readouterr().out)
    assert ledger["c"]["kappa"] == 0.5
    assert ledger["c"]["g_sign"]["1"] == "positive"
    assert ledger["flat"]["schouten_c"] == "nan"


def test_schema_command(capsys):
    assert cli.main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out)["properties"]["format"]["const"] == "gkforge-scenario/1"


def test_threads_env(monkeypatch):
    monkeypatch.setenv("GKFORGE_THREADS", "3")
    assert cli.threads() == 3
    monkeypatch.setenv("GKFORGE_THREADS", "zero")
    assert cli.threads() >= 1


def test_sampled_overlaps_are_seeded(tmp_path):
    d = minimal(covers=[{"name": "one", "case": "kahler", "charts": ["c", "d"],
                         "overlaps": [{"charts": ["c", "d"], "sample": {"n": 4, "radius": [0.5, 2]}}]}])
    d["charts"]["d"] = {"z": ["w"]}
    a = cli.load(write(tmp_path, d)).covers[0].cover.overlaps[("c", "d")]
    b = cli.load(write(tmp_path, d)).covers[0].cover.overlaps[("c", "d")]
    assert (a == b).all()
    r = (a ** 2).sum(axis=1) ** 0.5
    assert ((r >= 0.5) & (r <= 2)).all()

import csv
import json

import numpy as np
import pytest

from vlasovlab import cli
from vlasovlab.kinetic import make_datum
from vlasovlab.waves import make_wave


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    rows = list(csv.reader(lines[1:]))
    return rows[0], [[_num(c) for c in r] for r in rows[1:]]


def _num(cell):
    try:
        return float(cell)
    except ValueError:
        return cell


def write_scenario(tmp_path, data, name="sc.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_empty_scenario_writes_manifest_only(tmp_path):
    assert run("verify", "--scenario", "empty", "--out", tmp_path) == cli.EXIT_PASS
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json"]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["schema_version"] and man["checks"] == {} and len(man["scenario_hash"]) == 64


def test_malformed_json_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"name": "x", "n": 3,\n  "datum": }')
    assert run("verify", "--scenario", p, "--out", tmp_path) == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "line 2" in err


@pytest.mark.parametrize(
    "patch, where",
    [
        ({"n": 7}, "$.n"),
        ({"datum": {"id": "no-such-datum"}}, "datum"),
        ({"checks": ["nonsense"]}, "checks"),
        ({"extra_key": 1}, "extra_key"),
        ({"mass": -1.0}, "mass"),
    ],
)
def test_schema_errors_report_location(tmp_path, capsys, patch, where):
    data = {"name": "s", "n": 3, "datum": {"id": "gaussian-xv"}}
    data.update(patch)
    p = write_scenario(tmp_path, data)
    assert run("verify", "--scenario", p, "--out", tmp_path) == cli.EXIT_USAGE
    assert where in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["frobnicate"], ["verify", "bogus-check"], ["moments"]])
def test_usage_errors_exit_2(tmp_path, argv):
    assert run(*argv, "--out", tmp_path) == cli.EXIT_USAGE


def test_bad_flags_exit_2(tmp_path):
    assert run("verify", "--scenario", "empty", "--tol-scale", "0", "--out", tmp_path) == 2
    assert run("verify", "--scenario", "empty", "--threads", "0", "--out", tmp_path) == 2


def test_free_massive_moments_monotone(tmp_path):
    assert run("moments", "--scenario", "free-massive-n3", "--out", tmp_path) == cli.EXIT_PASS
    header, rows = read_csv(tmp_path / "moments.csv")
    k = header.index("rho_m")
    rho = np.array([r[k] for r in rows])
    assert rho.size >= 10 and np.all(np.diff(rho) < 0)
    gp = (tmp_path / "moments.gp").read_text()
    assert "moments.csv" in gp and "plot" in gp


def test_manifest_measured_values_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("moments", "--scenario", "free-massive-n3", "--out", d) == 0
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    for m in (ma, mb):
        for entry in m["checks"].values():
            entry.pop("wall_time_s")
    assert ma == mb
    assert (a / "moments.csv").read_text() == (b / "moments.csv").read_text()


@pytest.mark.parametrize("command, files", [
    ("tables", ["commutators.csv"]),
    ("evolve", ["evolve.csv"]),
    ("norms", ["norms.csv"]),
])
def test_commands_write_csv_with_units_line(tmp_path, command, files):
    assert run(command, "--scenario", "free-massless-n2", "--out", tmp_path) == cli.EXIT_PASS
    for name in files:
        header, rows = read_csv(tmp_path / name)
        assert header and rows
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert set(files) <= set(man["artifacts"])


def test_verify_pass_and_fail_codes(tmp_path, capsys):
    assert run("verify", "commutators", "--scenario", "algebra-n3", "--out", tmp_path / "p") == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out
    rep = json.loads((tmp_path / "p" / "report.json").read_text())
    assert rep["passed"] is True and rep["schema_version"]
    assert run("verify", "appendixb", "--scenario", "algebra-n3", "--out", tmp_path / "f") == 1
    assert "[FAIL]" in capsys.readouterr().out


def test_tol_scale_recorded(tmp_path):
    assert run("verify", "commutators", "--scenario", "algebra-n3", "--tol-scale", "10",
               "--out", tmp_path) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["tolerances"]["commutator_tol"] == pytest.approx(1e-4)
    assert man["tolerances"]["tol_scale"] == 10.0


def test_catalog_roundtrip_and_instantiation(tmp_path, capsys):
    assert run("catalog", "--out", tmp_path) == cli.EXIT_PASS
    listing = json.loads(capsys.readouterr().out)
    assert json.loads((tmp_path / "catalog.json").read_text()) == listing
    for name in ("gaussian-xv", "bump-compact-xv", "shell-in-v"):
        entry = listing["data"][name]
        assert entry["doc"]
        d = make_datum(name, 3, **entry["defaults"])
        assert np.isfinite(d.fn(np.zeros(3), np.ones(3) * 0.1))
    for name in ("plane-packet", "radial3-bump"):
        entry = listing["waves"][name]
        w = make_wave(name, 3, **entry["defaults"])
        assert np.all(np.isfinite(w(np.array([1.0]), np.zeros((1, 3)))))
    assert "free-massive-n3" in listing["scenarios"] and "vn-massless" in listing["checks"]


@pytest.mark.parametrize("name", cli.bundled_scenarios())
def test_bundled_scenarios_validate(name):
    sc = cli.load_scenario(name)
    assert sc["name"] == name
    assert cli.scenario_hash(sc) == cli.scenario_hash(cli.load_scenario(name))

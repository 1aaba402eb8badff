"""Command-line front end: scenarios, catalogs, reports and run manifests.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or schema error
(with its location), 3 or more internal error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
import traceback
from importlib import resources
from pathlib import Path

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_INTERNAL, EXIT_NUMERICAL = 0, 1, 2, 3, 4

CHECKS = ("decay", "ks", "conservation", "commutators", "weights", "identities", "appendixb",
          "vn-massless", "vn-massive")
LAWS = ("free", "duhamel", "vn-massless", "vn-massive")

_NUM = {"type": "number"}
_PARAMS = {"type": "object", "additionalProperties": {"type": ["number", "integer"]}}
_ITEM = {
    "type": "object",
    "required": ["id"],
    "additionalProperties": False,
    "properties": {"id": {"type": "string"}, "params": _PARAMS},
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "vlasovlab scenario",
    "type": "object",
    "required": ["name", "n", "datum"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"type": "string"},
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "n": {"type": "integer", "minimum": 1, "maximum": 4},
        "mass": {"type": "number", "minimum": 0},
        "law": {"enum": list(LAWS)},
        "surface": {"enum": ["t0", "H1"]},
        "datum": _ITEM,
        "source": _ITEM,
        "wave": _ITEM,
        "quadrature": {"type": "object"},
        "times": {"type": "array", "items": _NUM, "minItems": 1},
        "points": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "velocities": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "norms": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["family", "order"],
                "additionalProperties": False,
                "properties": {"family": {"enum": ["K", "ENq", "P"]},
                               "order": {"type": "integer", "minimum": 0, "maximum": 4},
                               "q": {"type": "integer", "minimum": 0, "maximum": 2}},
            },
        },
        "checks": {"type": "array", "items": {"enum": list(CHECKS)}},
        "check_options": {
            "type": "object",
            "propertyNames": {"enum": list(CHECKS)},
            "additionalProperties": {"type": "object"},
        },
        "tolerances": {"type": "object", "additionalProperties": {"type": "number"}},
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"gnuplot": {"type": "boolean"}},
        },
    },
}

# memory budget for (nodes per axis) * n over all axes of one leaf
NODE_BUDGET = 4096


class SchemaError(Exception):
    def __init__(self, message, location="$"):
        super().__init__(f"{location}: {message}")
        self.location = location


def _location(path):
    loc = "$"
    for p in path:
        loc += f"[{p}]" if isinstance(p, int) else f".{p}"
    return loc


def _tool_version():
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:
        from . import __version__
        return __version__


# ----------------------------------------------------------------------------
# scenarios


def bundled_scenarios():
    base = resources.files("vlasovlab") / "scenarios"
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def load_scenario(ref):
    """Parse and validate a scenario file (a path or a bundled name)."""
    import jsonschema

    path = Path(ref)
    if path.exists():
        text = path.read_text()
    else:
        res = resources.files("vlasovlab") / "scenarios" / f"{ref}.json"
        if not res.is_file():
            raise SchemaError(f"no scenario file or bundled scenario named {ref!r}")
        text = res.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON: {exc.msg}", f"line {exc.lineno} column {exc.colno}")
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SchemaError(err.message, _location(err.absolute_path))
    return _normalize(data)


def _normalize(data):
    sc = dict(data)
    sc.setdefault("schema_version", "1.0")
    sc.setdefault("mass", 0.0)
    m = float(sc["mass"])
    sc.setdefault("law", "free")
    sc.setdefault("surface", "H1" if sc["law"] == "vn-massive" else "t0")
    sc.setdefault("checks", [])
    sc.setdefault("check_options", {})
    sc.setdefault("tolerances", {})
    sc.setdefault("outputs", {})
    law = sc["law"]
    if law == "vn-massless" and m != 0:
        raise SchemaError("the massless Vlasov-Nordstrom law needs mass 0", "$.mass")
    if law == "vn-massive" and not m > 0:
        raise SchemaError("the massive Vlasov-Nordstrom law needs mass > 0", "$.mass")
    if sc["surface"] == "H1" and not m > 0:
        raise SchemaError("data on H1 need mass > 0", "$.surface")
    if law == "duhamel" and "source" not in sc:
        raise SchemaError("the Duhamel law needs a source", "$")
    if law.startswith("vn") and "wave" not in sc:
        raise SchemaError("Vlasov-Nordstrom laws need a wave", "$")
    n = sc["n"]
    for key in ("points", "velocities"):
        for k, p in enumerate(sc.get(key, [])):
            if len(p) != n:
                raise SchemaError(f"expected {n} components", f"$.{key}[{k}]")
    from .kinetic import DATA, SOURCES
    from .waves import WAVES

    for key, table in (("datum", DATA), ("source", SOURCES), ("wave", WAVES)):
        if key in sc:
            item = sc[key]
            if item["id"] not in table:
                raise SchemaError(f"unknown id {item['id']!r}; expected one of {sorted(table)}",
                                  f"$.{key}.id")
            unknown = set(item.get("params", {})) - set(table[item["id"]][1])
            if unknown:
                raise SchemaError(f"unknown parameters {sorted(unknown)}", f"$.{key}.params")
    if "quadrature" in sc:
        from .geometry import QuadratureSpec

        try:
            q = QuadratureSpec.from_dict(sc["quadrature"])
        except Exception as exc:
            raise SchemaError(str(exc), "$.quadrature")
        nodes = n * (q.x_radial * q.x_panels + q.x_polar + q.x_fibre
                     + q.v_radial * q.v_panels + q.v_polar + q.v_fibre)
        if nodes > NODE_BUDGET:
            raise SchemaError(f"quadrature exceeds the node budget ({nodes} > {NODE_BUDGET})",
                              "$.quadrature")
    known_tols = {"tol_scale", "commutator_tol", "conservation_tol", "drift_tol",
                  "exponent_rel_tol", "refinement_tol", "derivative_tol", "appendix_band"}
    for k in sc["tolerances"]:
        if k not in known_tols:
            raise SchemaError(f"unknown tolerance {k!r}", f"$.tolerances.{k}")
    return sc


def scenario_hash(sc):
    blob = json.dumps(sc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def build_field(sc):
    from .kinetic import DistributionField, Law, make_datum, make_source
    from .waves import make_wave

    n, m = sc["n"], float(sc["mass"])
    datum = make_datum(sc["datum"]["id"], n, **sc["datum"].get("params", {}))
    law = sc["law"]
    if law == "free":
        L = Law.free(m)
    elif law == "duhamel":
        L = Law.duhamel(make_source(sc["source"]["id"], n, **sc["source"].get("params", {})), m)
    elif law == "vn-massless":
        L = Law.vn_massless(make_wave(sc["wave"]["id"], n, **sc["wave"].get("params", {})))
    else:
        L = Law.vn_massive(make_wave(sc["wave"]["id"], n, **sc["wave"].get("params", {})), m)
    return DistributionField(datum, L, sc["surface"])


def _quad(sc):
    from .geometry import QuadratureSpec

    return QuadratureSpec.from_dict(sc["quadrature"]) if "quadrature" in sc else QuadratureSpec()


def _config(sc, tol_scale):
    from dataclasses import replace

    from .verify import DEFAULT_CONFIG

    tols = dict(sc["tolerances"])
    scale = float(tols.pop("tol_scale", 1.0)) * tol_scale
    cfg = replace(DEFAULT_CONFIG, **tols) if tols else DEFAULT_CONFIG
    return cfg.scaled(scale) if scale != 1.0 else cfg


def _times(sc, default):
    return [float(t) for t in sc.get("times", default)]


def _points(sc):
    n = sc["n"]
    return [list(map(float, p)) for p in sc.get("points", [[0.0] * n])]


# ----------------------------------------------------------------------------
# output


def write_csv(path, header, rows, definitions):
    """CSV with a definitions comment line followed by the header row."""
    with open(path, "w", newline="") as fh:
        fh.write("# " + "; ".join(f"{k}: {v}" for k, v in definitions.items()) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(c)) if isinstance(c, float) else c for c in row])


def write_json(path, obj):
    from .verify import _jsonable

    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_gnuplot(path, csv_name, columns, title):
    lines = [
        "# decay curves on log-log axes",
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set logscale xy",
        "set xlabel 't'",
        f"set title '{title}'",
        "set key autotitle columnhead",
        "plot " + ", ".join(f"'{csv_name}' using 1:{c} with linespoints" for c in columns),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


class Manifest:
    """RunManifest: version, scenario hash, per-check wall time, tolerances
    and measured values."""

    def __init__(self, sc, command):
        self.sc = sc
        self.data = {
            "schema_version": None,
            "tool_version": _tool_version(),
            "command": command,
            "scenario": sc["name"],
            "scenario_hash": scenario_hash(sc),
            "tolerances": {},
            "checks": {},
            "artifacts": [],
        }

    def record(self, name, seconds, results=None, values=None, tolerances=None):
        entry = {"wall_time_s": round(seconds, 6)}
        if results is not None:
            entry["passed"] = all(r.passed for r in results)
            entry["measured"] = {r.check: r.value for r in results}
            entry["thresholds"] = {r.check: r.threshold for r in results}
        if values is not None:
            entry["measured"] = values
        self.data["checks"][name] = entry
        if tolerances:
            self.data["tolerances"].update(tolerances)

    def artifact(self, path):
        self.data["artifacts"].append(os.path.basename(path))

    def write(self, out):
        from .verify import SCHEMA_VERSION

        self.data["schema_version"] = SCHEMA_VERSION
        write_json(Path(out) / "manifest.json", self.data)


# ----------------------------------------------------------------------------
# commands


def cmd_catalog(args):
    from .kinetic import DATA, SOURCES
    from .waves import WAVES

    listing = {
        "data": {k: {"defaults": v[1], "doc": v[2]} for k, v in sorted(DATA.items())},
        "waves": {k: {"defaults": v[1], "doc": v[2]} for k, v in sorted(WAVES.items())},
        "sources": {k: {"defaults": v[1], "doc": v[2]} for k, v in sorted(SOURCES.items())},
        "scenarios": bundled_scenarios(),
        "checks": list(CHECKS),
    }
    text = json.dumps(listing, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "catalog.json").write_text(text + "\n")
    print(text)
    return EXIT_PASS


def _need_scenario(args):
    if not args.scenario:
        raise SchemaError("--scenario is required for this command", "argv")
    return load_scenario(args.scenario)


def _outdir(args):
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_tables(args, sc, out, man):
    from .fields import ALGEBRAS, bracket_table, catalog, transport_commutator

    t0 = time.perf_counter()
    n, m = sc["n"], float(sc["mass"])
    algebras = ["P^", "K^", "K^0"] if m == 0 else ["P^", "P^0"]
    rows = []
    for alg in algebras:
        if alg not in ALGEBRAS:
            continue
        for Z in catalog(alg, n, m):
            c = transport_commutator(Z, m)
            rows.append((alg, Z.name, c.label()))
    path = out / "commutators.csv"
    write_csv(path, ["algebra", "field", "commutator_class"], rows,
              {"commutator_class": "classification of [T_m, Z]", "units": "dimensionless"})
    man.artifact(path)
    brackets = {}
    for alg in algebras:
        if alg in ALGEBRAS:
            brackets[alg] = [
                {"a": a, "b": b,
                 "decomposition": None if d is None else {k: str(v) for k, v in sorted(d.coeffs.items())}}
                for a, b, d in bracket_table(alg, n, m)]
    path = out / "brackets.json"
    write_json(path, {"schema_version": _schema(), "n": n, "mass": m, "brackets": brackets})
    man.artifact(path)
    man.record("tables", time.perf_counter() - t0, values={"fields": len(rows)})
    return EXIT_PASS


def _schema():
    from .verify import SCHEMA_VERSION

    return SCHEMA_VERSION


def cmd_evolve(args, sc, out, man):
    import numpy as np

    t0 = time.perf_counter()
    F = build_field(sc)
    n = sc["n"]
    times = _times(sc, [1.0, 2.0, 5.0])
    vels = sc.get("velocities", [[1.0] + [0.0] * (n - 1)])
    rows = []
    for t in times:
        for x in _points(sc):
            for v in vels:
                val = float(F(np.array([t]), np.array([x]), np.array([v]))[0])
                rows.append([t, *x, *v, val])
    head = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)] + ["f"]
    path = out / "evolve.csv"
    write_csv(path, head, rows, {"t, x, v": "phase-space point (c = 1, mass units)",
                                 "f": f"distribution function of law {sc['law']}"})
    man.artifact(path)
    man.record("evolve", time.perf_counter() - t0, values={"samples": len(rows)})
    return EXIT_PASS


def cmd_moments(args, sc, out, man):
    import numpy as np

    from .moments import mass_average, rho_0, rho_m

    t0 = time.perf_counter()
    F = build_field(sc)
    n, m = sc["n"], float(sc["mass"])
    times = _times(sc, [1.0, 2.0, 5.0, 10.0])
    quad = _quad(sc)
    rows = []
    for x in _points(sc):
        T = np.array(times)
        X = np.tile(np.array(x), (T.size, 1))
        if m > 0:
            a, b = rho_m(F, T, X, quad=quad), mass_average(F, T, X, quad=quad)
        else:
            a, b = rho_0(F, T, X, quad=quad), rho_0(F, T, X, absolute=True, quad=quad)
        for k in range(T.size):
            rows.append([float(T[k]), *x, float(a[k]), float(b[k])])
    if m > 0:
        head = ["t"] + [f"x{i + 1}" for i in range(n)] + ["rho_m", "int_f_dv_over_v0"]
        defs = {"t, x": "spacetime point (c = 1, mass units)",
                "rho_m": "int f v0 dv", "int_f_dv_over_v0": "int f dv/v0"}
    else:
        head = ["t"] + [f"x{i + 1}" for i in range(n)] + ["rho_0", "rho_0_abs"]
        defs = {"t, x": "spacetime point (c = 1)", "rho_0": "int f |v| dv",
                "rho_0_abs": "int |f| |v| dv"}
    path = out / "moments.csv"
    write_csv(path, head, rows, defs)
    man.artifact(path)
    if sc["outputs"].get("gnuplot"):
        gp = out / "moments.gp"
        write_gnuplot(gp, "moments.csv", [n + 2, n + 3], f"{sc['name']}: velocity averages")
        man.artifact(gp)
    man.record("moments", time.perf_counter() - t0,
               values={head[n + 1]: [r[n + 1] for r in rows], head[n + 2]: [r[n + 2] for r in rows]})
    return EXIT_PASS


def cmd_norms(args, sc, out, man):
    from .norms import norm_ENq, norm_K, norm_P

    t0 = time.perf_counter()
    F = build_field(sc)
    m = float(sc["mass"])
    specs = sc.get("norms", [{"family": "P" if m > 0 else "K", "order": 0}])
    times = _times(sc, [1.0] if m > 0 else [0.0])
    quad = _quad(sc)
    rows = []
    for spec in specs:
        fam, k = spec["family"], spec["order"]
        if (fam == "P") != (m > 0):
            raise SchemaError(f"norm family {fam} does not match mass {m}", "$.norms")
        for t in times:
            if fam == "K":
                rep = norm_K(F, k, t, quad)
            elif fam == "ENq":
                rep = norm_ENq(F, k, spec.get("q", 0), t, quad)
            else:
                rep = norm_P(F, k, t, quad)
            rows.append([fam, k, spec.get("q", 0), t, rep.value, rep.error_bound, rep.terms])
    path = out / "norms.csv"
    write_csv(path, ["family", "order", "q", "parameter", "value", "error_bound", "terms"], rows,
              {"parameter": "t (Sigma_t leaves) or rho (hyperboloids)",
               "value": "norm in mass units", "error_bound": "quadrature tail bound"})
    man.artifact(path)
    man.record("norms", time.perf_counter() - t0, values={f"{r[0]}{r[1]},{r[2]}@{r[3]}": r[4] for r in rows})
    return EXIT_PASS


# ----------------------------------------------------------------------------
# checks


def _opt(sc, name):
    return dict(sc["check_options"].get(name, {}))


def check_decay(sc, cfg, out, man):
    import numpy as np

    from .verify import CheckResult, improved_derivative_decay, interior_decay

    F = build_field(sc)
    o = _opt(sc, "decay")
    n, m = F.n, F.m
    lo, hi = o.get("window", cfg.massive_window if m > 0 else cfg.fit_window)
    times = o.get("times", np.geomspace(lo, hi, 7).tolist())
    quad = _quad(sc)
    base = interior_decay(F, times, (lo, hi), predicted=-n, quad=quad)
    rel = abs(base.exponent + n) / n
    res = [CheckResult.compare("interior decay exponent (relative error)", rel, cfg.exponent_rel_tol,
                               "<=", "config", exponent=base.exponent, predicted=-n,
                               stderr=base.stderr, refinement_delta=base.refinement_delta)]
    csv_rows = [[t, v] for t, v in zip(base.parameters, base.values)]
    if o.get("derivative", True):
        b, d = improved_derivative_decay(F, times, window=(lo, hi), quad=quad)
        gain = b.exponent - d.exponent
        res.append(CheckResult.compare("one derivative steepens the exponent by 1", abs(gain - 1.0),
                                       cfg.derivative_tol, "<=", "config", base=b.exponent,
                                       derivative=d.exponent, excluded=d.excluded))
        dmap = dict(zip(d.parameters, d.values))
        csv_rows = [[t, v, dmap.get(t, float("nan"))] for t, v in csv_rows]
    head = ["t", "average_abs"] + (["derivative_abs"] if len(csv_rows[0]) == 3 else [])
    path = out / "decay.csv"
    avg = "int |f| dv/v0" if m > 0 else "int |f| |v| dv"
    write_csv(path, head, csv_rows, {"t": "time at x = 0", "average_abs": avg,
                                     "derivative_abs": "|one derivative of the signed average|"})
    man.artifact(path)
    if sc["outputs"].get("gnuplot"):
        gp = out / "decay.gp"
        write_gnuplot(gp, "decay.csv", list(range(2, len(head) + 1)), f"{sc['name']}: decay at x = 0")
        man.artifact(gp)
    return res


def check_ks(sc, cfg, out, man):
    from .verify import CheckResult, ks_check_massive, ks_check_massless

    F = build_field(sc)
    o = _opt(sc, "ks")
    if F.m > 0:
        rep = ks_check_massive(F, o.get("times"), o.get("fractions"), norm=o.get("norm"))
    else:
        rep = ks_check_massless(F, o.get("times"), o.get("offsets"), norm=o.get("norm"))
    path = out / "ks.csv"
    write_csv(path, ["t", "r", "normalized"], rep.table,
              {"normalized": "weighted average / norm (dimensionless)", "t, r": "sample point"})
    man.artifact(path)
    return [CheckResult.compare("KS normalized sup refinement change", rep.refinement_delta,
                                cfg.refinement_tol, "<", "config", sup=rep.sup,
                                refined_sup=rep.refined_sup, norm=rep.norm, argmax=rep.argmax)]


def check_conservation(sc, cfg, out, man):
    from .verify import conservation_checks

    return conservation_checks(tol=cfg.conservation_tol)


def check_commutators(sc, cfg, out, man):
    from .kinetic import DistributionField, Law, make_datum
    from .verify import algebra_checks, averaging_checks

    n = sc["n"] if sc["n"] >= 2 else 3
    F = None
    if sc["law"] == "free" and sc["surface"] == "t0":
        F = build_field(sc)
    elif sc["n"] >= 2:
        F = DistributionField(make_datum("gaussian-xv", sc["n"]), Law.free(0.0))
    return algebra_checks(n) + averaging_checks(F, tol=cfg.commutator_tol)


def check_weights(sc, cfg, out, man):
    from .verify import weight_checks

    return weight_checks(sc["n"])


def check_identities(sc, cfg, out, man):
    from .verify import identity_checks

    return identity_checks(max(sc["n"], 2))


def check_appendixb(sc, cfg, out, man):
    from .verify import CheckResult, appendix_b_check

    o = _opt(sc, "appendixb")
    triples = o.get("triples", [[3, 2, 2], [3, 1, 2], [4, 2, 3]])
    res, rows = [], []
    for a, b, n in triples:
        rep = appendix_b_check(a, b, n)
        rows += [[a, b, n, t, lhs, r] for t, lhs, r in zip(rep.t, rep.lhs, rep.ratio)]
        res.append(CheckResult.compare(f"radial integral band (alpha={a}, beta={b}, n={n})", rep.band,
                                       cfg.appendix_band, "<=", "config", late_band=rep.late_band,
                                       decade_band=rep.decade_band, max_ratio=rep.max_ratio,
                                       min_ratio=rep.min_ratio))
    path = out / "appendixb.csv"
    write_csv(path, ["alpha", "beta", "n", "t", "lhs", "ratio"], rows,
              {"lhs": "int r^(n-1) dr / ((1+t+r)^alpha (1+|t-r|)^beta)",
               "ratio": "lhs / claimed profile"})
    man.artifact(path)
    return res


def check_vn_massless(sc, cfg, out, man):
    from .kinetic import make_datum
    from .waves import make_wave
    from .verify import vn_massless_checks

    o = _opt(sc, "vn-massless")
    wave = make_wave(sc["wave"]["id"], 3, **sc["wave"].get("params", {}))
    datum = make_datum(sc["datum"]["id"], sc["n"], **sc["datum"].get("params", {}))
    return vn_massless_checks(wave, datum, cfg, epsilon=o.get("epsilon", 1e-2))


def check_vn_massive(sc, cfg, out, man):
    from .kinetic import make_datum
    from .waves import make_wave
    from .verify import vn_massive_prescribed_checks

    o = _opt(sc, "vn-massive")
    wave = make_wave(sc["wave"]["id"], sc["n"], **sc["wave"].get("params", {}))
    datum = make_datum(sc["datum"]["id"], sc["n"], **sc["datum"].get("params", {}))
    return vn_massive_prescribed_checks(wave, datum, cfg, epsilon=o.get("epsilon", 1e-2),
                                        compare_half=o.get("compare_half", False))


CHECK_FUNCS = {
    "decay": check_decay,
    "ks": check_ks,
    "conservation": check_conservation,
    "commutators": check_commutators,
    "weights": check_weights,
    "identities": check_identities,
    "appendixb": check_appendixb,
    "vn-massless": check_vn_massless,
    "vn-massive": check_vn_massive,
}


def cmd_verify(args, sc, out, man):
    from dataclasses import asdict

    cfg = _config(sc, args.tol_scale)
    names = [args.check] if args.check else list(sc["checks"])
    man.data["tolerances"] = {k: v for k, v in asdict(cfg).items()}
    report = {"schema_version": _schema(), "scenario": sc["name"],
              "scenario_hash": scenario_hash(sc), "checks": {}}
    passed = True
    for name in names:
        t0 = time.perf_counter()
        results = CHECK_FUNCS[name](sc, cfg, out, man)
        dt = time.perf_counter() - t0
        for r in results:
            r.seconds = dt
            print(r.line())
        man.record(name, dt, results)
        ok = all(r.passed for r in results)
        passed &= ok
        report["checks"][name] = {"passed": ok, "results": [r.to_dict() for r in results]}
    if names:
        path = out / "report.json"
        report["passed"] = passed
        write_json(path, report)
        man.artifact(path)
    return EXIT_PASS if passed else EXIT_FAIL


COMMANDS = {"tables": cmd_tables, "evolve": cmd_evolve, "moments": cmd_moments,
            "norms": cmd_norms, "verify": cmd_verify}


def build_parser():
    p = argparse.ArgumentParser(prog="vlasovlab",
                                description="Vector-field method verification for Vlasov fields.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON path or bundled scenario name")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for numerics")
    common.add_argument("--tol-scale", type=float, default=1.0, help="multiply check tolerances")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("tables", "commutator and bracket tables"),
                       ("evolve", "distribution function at phase-space samples"),
                       ("moments", "velocity averages at spacetime samples"),
                       ("norms", "vector-field norms on leaves"),
                       ("catalog", "list built-in data, waves, sources and scenarios")):
        sub.add_parser(name, parents=[common], help=text)
    v = sub.add_parser("verify", parents=[common], help="run one check or the scenario's check list")
    v.add_argument("check", nargs="?", choices=CHECKS, help="check to run")
    return p


def _configure_threads(k):
    if k is None:
        return
    if k < 1:
        raise SchemaError("--threads must be positive", "argv")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(k)
    flags = os.environ.get("XLA_FLAGS", "")
    os.environ["XLA_FLAGS"] = (flags + f" --xla_cpu_multi_thread_eigen={'true' if k > 1 else 'false'}"
                               f" intra_op_parallelism_threads={k}").strip()


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        _configure_threads(args.threads)
        if args.tol_scale <= 0 or not math.isfinite(args.tol_scale):
            raise SchemaError("--tol-scale must be positive", "argv")
        if args.command == "catalog":
            return cmd_catalog(args)
        sc = _need_scenario(args)
        out = _outdir(args)
        man = Manifest(sc, args.command if args.command != "verify" else f"verify {args.check or ''}".strip())
        code = COMMANDS[args.command](args, sc, out, man)
        man.write(out)
        return code
    except SchemaError as exc:
        print(f"vlasovlab: schema error at {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # mapped to the exit-code contract
        from .errors import DomainError, ToleranceError, UsageError

        if isinstance(exc, (UsageError, DomainError)):
            print(f"vlasovlab: usage error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if isinstance(exc, ToleranceError):
            print(f"vlasovlab: tolerance not met: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

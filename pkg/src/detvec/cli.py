"""Scenario-driven command line front end.

Usage::

    detvec COMMAND --scenario FILE.toml --out PATH [--seed N] [--jobs N]

Exit codes: 0 success, 1 verdict mismatch, 2 configuration or parse error,
3 numeric failure.  ``DETVEC_JOBS`` is the fallback for ``--jobs``.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from detvec import autcheck, constructions, dsl, flows, lie
from detvec.autcheck import SamplePlan, Verdict
from detvec.dsl import Chart, DSLError

SCHEMA_VERSION = 1
COMMANDS = ("verify", "invariants", "dense", "flow", "straighten", "nullspace", "counterexample")

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------- parsing


def load_scenario(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed scenario file: {exc}") from exc
    if data.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported scenario schema {data.get('schema')!r} (expected {SCHEMA_VERSION})")
    if not isinstance(data.get("id"), str) or not data["id"]:
        raise ConfigError("scenario needs a non-empty string id")
    return data


def parse_group(text: str) -> lie.GroupSpec:
    m = re.fullmatch(r"\s*(SO|O|SU|U|Sp|Torus)\(\s*(\d+)\s*\)\s*", str(text))
    if not m:
        raise ConfigError(f"unknown group {text!r}")
    return lie.GroupSpec(m.group(1), int(m.group(2)))


def parse_plan(table: dict | None, seed: int, default: SamplePlan | None = None) -> SamplePlan:
    if table is None:
        if default is None:
            raise ConfigError("missing [plan] table")
        return default
    try:
        return SamplePlan(
            int(table.get("count", default.count if default else 100)),
            str(table.get("domain", default.domain if default else "Ball")),
            tuple(table.get("radii", default.radii if default else (1.0,))),
            seed,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sample plan: {exc}") from exc


_PAIR = re.compile(r"\s*(un_pair|sp_pair)\(\s*(\d+)\s*\)\s*")


def parse_fields(data: dict) -> list[dsl.VFieldExpr]:
    fields = []
    if "pair" in data:
        m = _PAIR.fullmatch(str(data["pair"]))
        if not m:
            raise ConfigError(f"unknown pair {data['pair']!r}")
        pair = getattr(constructions, m.group(1))(int(m.group(2)))
        fields.extend(pair.fields)
    texts = data.get("fields", [])
    if texts:
        if "chart" not in data:
            raise ConfigError("DSL fields need a chart")
        chart = Chart.parse(str(data["chart"]))
        for i, text in enumerate(texts):
            fields.append(dsl.parse_field(str(text), chart, name=f"field{i + 1}"))
    if not fields:
        raise ConfigError("scenario defines no fields")
    if len({f.chart for f in fields}) != 1:
        raise ConfigError("all fields must share one chart")
    return fields


def _expected(entry: dict) -> str | None:
    exp = entry.get("expected")
    if exp is None:
        return None
    if exp not in {v.value for v in Verdict}:
        raise ConfigError(f"unknown expected verdict {exp!r}")
    return exp


# ------------------------------------------------------------- commands


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("DETVEC_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"DETVEC_JOBS must be an integer, got {env!r}") from exc
    return 1


def _tolerances(data: dict) -> tuple[float, float]:
    t = data.get("tolerances", {})
    return float(t.get("preserve_tol", autcheck.PRESERVE_TOL)), float(t.get("violate_floor", autcheck.VIOLATE_FLOOR))


def _map_entry_report(entry: dict, fields, plan: SamplePlan, seed: int, jobs: int, tols) -> autcheck.ResidualReport:
    kind = entry.get("kind")
    chart = fields[0].chart
    count = int(entry.get("count", 1))
    plan = parse_plan(entry.get("plan"), seed, plan)
    if kind == "haar":
        return autcheck.group_preserves(parse_group(entry["group"]), fields, count, plan, seed, jobs, *tols)
    if kind == "complement":
        sampler = autcheck.complement_sampler(str(entry["sampler"]), int(entry.get("n", 1)))
        return autcheck.probe_outside(sampler, fields, count, plan, seed, jobs, *tols)
    if kind == "linear":
        F = dsl.linear_map(np.array(entry["matrix"], dtype=float), chart, entry.get("name", ""))
        return autcheck.check_automorphism(F, fields, plan, *tols)
    if kind == "identity":
        return autcheck.check_automorphism(dsl.identity_map(chart), fields, plan, *tols)
    if kind == "hopf_twist":
        mu = dsl.parse_scalar(entry["mu"], Chart.euclidean(3)) if "mu" in entry else None
        return autcheck.check_automorphism(constructions.hopf_twist(mu), fields, plan, *tols)
    raise ConfigError(f"unknown map kind {kind!r}")


def cmd_verify(data: dict, seed: int, jobs: int) -> tuple[dict, int]:
    fields = parse_fields(data)
    plan = parse_plan(data.get("plan"), seed)
    tols = _tolerances(data)
    maps = data.get("maps", [])
    if not maps:
        raise ConfigError("scenario defines no maps")
    cases, ok = [], True
    for entry in maps:
        expected = _expected(entry)
        rep = _map_entry_report(entry, fields, plan, seed, jobs, tols)
        verdicts = rep.map_verdicts()
        for c in rep.cases:
            c.expected = expected
            cases.append(c)
        if expected is not None and any(str(v) != expected for v in verdicts.values()):
            ok = False
    report = autcheck.ResidualReport(cases, *tols)
    out = {"cases": [c.to_dict() for c in cases], "verdict": str(report.verdict), "matches_expected": ok}
    return out, EXIT_OK if ok else EXIT_MISMATCH


def cmd_invariants(data: dict, seed: int, jobs: int) -> tuple[dict, int]:
    t = data.get("invariants", {})
    spec = parse_group(t.get("group", ""))
    degree = int(t.get("degree", 3))
    space = autcheck.invariant_field_space(spec, degree)
    out = {"group": str(spec), "degree": degree, "dimension": space.dimension, "basis": [str(b) for b in space.basis]}
    ok = True
    if "expected_dimension" in t:
        ok &= space.dimension == int(t["expected_dimension"])
    if "compare_with" in t:
        other = parse_group(t["compare_with"])
        equal = autcheck.compare_invariant_spaces(spec, other, degree)
        out["compare_with"] = str(other)
        out["equal"] = equal
        if "expected_equal" in t:
            ok &= equal == bool(t["expected_equal"])
    out["matches_expected"] = ok
    return out, EXIT_OK if ok else EXIT_MISMATCH


def _algebra_element(spec: lie.GroupSpec, coeffs) -> lie.AlgebraElement:
    c = np.asarray(coeffs, float)
    basis = spec.algebra_basis
    if c.shape != (len(basis),):
        raise ConfigError(f"{spec} needs {len(basis)} algebra coefficients, got {c.shape}")
    return lie.AlgebraElement(sum(ci * E.matrix for ci, E in zip(c, basis)), spec)


def cmd_dense(data: dict, seed: int, jobs: int) -> tuple[dict, int]:
    t = data.get("dense", {})
    spec = parse_group(t.get("group", ""))
    A = _algebra_element(spec, t.get("A", []))
    B = _algebra_element(spec, t.get("B", []))
    verdict = lie.is_dense_couple(spec, A, B)
    out = {"group": str(spec), "subalgebra_dim": lie.generated_subalgebra_dim(A, B), "verdict": str(verdict)}
    ok = "expected" not in t or str(verdict) == t["expected"]
    out["matches_expected"] = ok
    return out, EXIT_OK if ok else EXIT_MISMATCH


def cmd_flow(data: dict, seed: int, jobs: int) -> tuple[str, int]:
    t = data.get("flow", {})
    chart = Chart.parse(str(t.get("chart", "")))
    X = dsl.parse_field(str(t["field"]), chart)
    traj = flows.integrate_trajectory(X, np.asarray(t["p0"], float), float(t["t"]), float(t.get("tol", 1e-10)))
    text = traj.to_csv()
    ok = True
    if "expected" in t:
        final = chart.reduce(traj.final)[0]
        ok = bool(np.max(np.abs(final - np.asarray(t["expected"], float))) < float(t.get("expected_tol", 1e-8)))
    return text, EXIT_OK if ok else EXIT_MISMATCH


def cmd_straighten(data: dict, seed: int, jobs: int) -> tuple[dict, int]:
    t = data.get("straighten", {})
    k, s = int(t.get("k", 1)), int(t.get("s", 1))
    chart = Chart.product(k, s)
    W = dsl.parse_field(str(t["W"]), chart)
    a, b = float(t.get("a", 1.0)), float(t.get("b", 2.0))
    S = flows.straighten(W, a, b, bool(t.get("keep_near", True)))
    plan = parse_plan(data.get("plan"), seed, SamplePlan(200, "ProductBox", (2 * b + 1,), seed))
    P = plan.points(chart)
    R = np.linalg.norm(S.residual(P), axis=1)
    xs = np.linalg.norm(P[:, :k], axis=1)
    inner = P[xs <= a]
    outer = P[xs >= b]
    id_gap = float(np.max(np.abs(S.apply(inner) - chart.reduce(inner)))) if len(inner) else 0.0
    far = float(np.max(np.abs(S.W_tilde.evaluate(outer)))) if len(outer) else 0.0
    ok = float(R.max()) < 1e-6 and id_gap == 0.0 and far < 1e-9
    out = {
        "W": str(W),
        "W_tilde": str(S.W_tilde),
        "a": a,
        "b": b,
        "points": int(len(P)),
        "max_residual": float(R.max()),
        "identity_gap_inside_a": id_gap,
        "W_tilde_max_outside_b": far,
        "verdict": "ok" if ok else "failed",
    }
    return out, EXIT_OK if ok else EXIT_MISMATCH


def cmd_nullspace(data: dict, seed: int, jobs: int) -> tuple[dict, int]:
    t = data.get("nullspace", {})
    k, s = int(t.get("k", 1)), int(t.get("s", 1))
    h = dsl.parse_scalar(str(t["h"]), Chart.euclidean(k)) if "h" in t else None
    res = flows.commuting_field_nullspace(
        k, s, _reals(t.get("V", [])), _reals(t.get("V1", [])), h, int(t.get("deg_x", 4)), int(t.get("max_freq", 3)), seed
    )
    out = res.to_dict()
    expected = int(t.get("expected_dimension", res.expected))
    out["matches_expected"] = res.dimension == expected
    return out, EXIT_OK if res.dimension == expected else EXIT_MISMATCH


def _reals(values) -> list[float]:
    out = []
    for v in values:
        if isinstance(v, str):
            m = re.fullmatch(r"\s*sqrt\(\s*([0-9.]+)\s*\)\s*", v)
            if not m:
                raise ConfigError(f"cannot read the number {v!r} (use a literal or sqrt(N))")
            out.append(float(np.sqrt(float(m.group(1)))))
        else:
            out.append(float(v))
    return out


def cmd_counterexample(data: dict, seed: int, jobs: int, n: int | None = None) -> tuple[dict, int]:
    t = data.get("counterexample", {})
    n = int(t.get("n", 2)) if n is None else n
    if n != 2:
        if n == 1:
            raise ConfigError("n = 1 is rejected: U(1) acts freely on R^2 minus the origin, so no twist exists")
        raise ConfigError(f"only n = 2 is supported at desk scale, got {n}")
    degree = int(t.get("degree", 5))
    radii = tuple(t.get("annulus", (0.5, 3.0)))
    count = int(t.get("count", 200))
    lam = constructions.hopf_twist()
    space = autcheck.invariant_field_space(lie.GroupSpec("U", 2), degree)
    plan = SamplePlan(count, "Annulus", radii, seed)
    rep = autcheck.check_automorphism(lam, space.basis, plan, label="hopf_twist")
    preserved = all(c.max < 1e-7 for c in rep.cases)
    pts = plan.points(Chart.euclidean(4))
    mu = dsl.eval_scalar(constructions.default_twist_profile(), Chart.euclidean(3), constructions.hopf_projection(pts))
    support = pts[mu != 0]
    fit = constructions.linear_fit_error(lam, support) if len(support) else 0.0
    nonlinear = fit > 1e-2
    out = {
        "n": n,
        "degree": degree,
        "basis_dimension": space.dimension,
        "cases": [c.to_dict() for c in rep.cases],
        "max_residual": rep.max,
        "preserves_invariant_basis": preserved,
        "linear_fit_relative_error": fit,
        "nonlinear": nonlinear,
        "verdict": "ok" if preserved and nonlinear else "failed",
    }
    return out, EXIT_OK if preserved and nonlinear else EXIT_MISMATCH


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="detvec", description="Verify invariance claims for compact group actions.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, help="scenario file (TOML, schema = 1)")
    p.add_argument("--out", required=True, help="output path (JSON, or CSV for 'flow')")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: DETVEC_JOBS or 1)")
    p.add_argument("--n", type=int, default=None, help="dimension parameter for 'counterexample'")
    return p


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        data = load_scenario(args.scenario)
        if data.get("command", args.command) != args.command:
            raise ConfigError(f"scenario is written for '{data['command']}', not '{args.command}'")
        seed = int(args.seed if args.seed is not None else data.get("seed", 0))
        jobs = _jobs(args)
        if args.command == "counterexample":
            body, code = cmd_counterexample(data, seed, jobs, args.n)
        else:
            body, code = globals()[f"cmd_{args.command}"](data, seed, jobs)
    except (ConfigError, DSLError, KeyError, TypeError, ValueError, lie.LieError) as exc:
        print(f"detvec: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, flows.FlowError, autcheck.SamplingError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"detvec: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if isinstance(body, dict):
        body = {"scenario_id": data["id"], "seed": seed, **body}
        text = dump_json(body)
    else:
        text = body
    try:
        Path(args.out).write_text(text, encoding="utf-8")
    except OSError as exc:
        print(f"detvec: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()

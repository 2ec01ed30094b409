"""Acceptance suite: ten end-to-end criteria at their stated tolerances.

Each test records one PASS/FAIL line (printed in the terminal summary and on
stdout) before asserting.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import null_space

from conftest import ACCEPTANCE
from detvec import autcheck, cli, dsl, flows, lie
from detvec import constructions as cons
from detvec.autcheck import SamplePlan, Verdict
from detvec.dsl import Chart
from detvec.lie import GroupSpec

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def record(number, title, ok, detail):
    ACCEPTANCE[number] = (bool(ok), title, detail)
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, detail


def x1_max(report):
    return [c.max for c in report.cases if c.field == "X1"]


# ------------------------------------------------------------------- 1


def test_criterion_01_unitary_pairs_preserved():
    start = time.perf_counter()
    worst = {}
    for n in (1, 2, 3):
        pair = cons.un_pair(n)
        rep = autcheck.group_preserves(GroupSpec("U", n), pair.fields, 50, SamplePlan(100, "Ball", (3.0,), seed=n))
        worst[n] = rep.max
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-9 for v in worst.values()) and elapsed < 10
    record(1, "U(n) preserves un_pair(n)", ok, f"max residual {max(worst.values()):.2e}, {elapsed:.1f}s")


# ------------------------------------------------------------------- 2


def test_criterion_02_outside_unitary_violates():
    start = time.perf_counter()
    weakest = np.inf
    for n in (2, 3):
        pair = cons.un_pair(n)
        plan = SamplePlan(100, "Sphere", (2.0,), seed=10 + n)
        for sampler in (autcheck.outside_unitary(n), autcheck.non_orthogonal(2 * n)):
            rep = autcheck.probe_outside(sampler, pair.fields, 50, plan)
            weakest = min(weakest, min(x1_max(rep)))
    elapsed = time.perf_counter() - start
    ok = weakest > 1e-3 and elapsed < 10
    record(2, "maps outside U(n) violate X1", ok, f"smallest max residual {weakest:.3g}, {elapsed:.1f}s")


# ------------------------------------------------------------------- 3


def test_criterion_03_symplectic_pair():
    pair = cons.sp_pair(1)
    inside = autcheck.group_preserves(GroupSpec("Sp", 1), pair.fields, 50, SamplePlan(100, "Ball", (7.5,), seed=3))
    band = SamplePlan(100, "Annulus", (4.0, 5.0), seed=4)
    outside = autcheck.probe_outside(autcheck.outside_symplectic(), pair.fields, 50, band)
    weakest = min(x1_max(outside))
    bumps = cons.BumpTriple.default().condition_residuals(n_per_interval=100)
    ok = inside.max < 1e-9 and weakest > 1e-3 and bumps["at_one"] <= 1e-12 and bumps["delta"] <= 1e-12
    record(
        3,
        "Sp(1) pair and bump conditions",
        ok,
        f"inside {inside.max:.2e}, outside min {weakest:.3g}, bumps {bumps['at_one']:.1e}/{bumps['delta']:.1e}",
    )


# ------------------------------------------------------------------- 4


def sampled_invariant_space(mats, n, degree, rng, n_points=12):
    """Equivariant polynomial fields from X(g x) = g X(x) at sampled g and x (dense nullspace)."""
    mons = [m for d in range(degree + 1) for m in autcheck.monomials(n, d)]
    exps = np.array(mons)
    rows = []
    for g in mats:
        x = rng.standard_normal((n_points, n))
        gx = x @ g.T
        vx = np.prod(x[:, None, :] ** exps[None], axis=2)  # (P, M)
        vgx = np.prod(gx[:, None, :] ** exps[None], axis=2)
        # unknown c[m, i]: sum_m c[m, i] vgx[p, m] - sum_j g[i, j] sum_m c[m, j] vx[p, m] = 0
        for p in range(n_points):
            block = np.kron(vgx[p][None, :], np.eye(n)) - np.kron(vx[p][None, :], g)
            rows.append(block)
    E = np.vstack(rows)
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    return null_space(E, rcond=1e-9)


def spans_equal(A, B):
    r = np.linalg.matrix_rank
    return r(A) == r(B) == r(np.hstack([A, B]), tol=1e-7 * max(1, np.abs(A).max()))


def test_criterion_04_invariant_spaces():
    start = time.perf_counter()
    rng = np.random.default_rng(44)
    space = autcheck.invariant_field_space(GroupSpec("SO", 3), 5)
    # the expected basis xi, |x|^2 xi, |x|^4 xi as coefficient vectors
    c3 = Chart.euclidean(3)
    xs = rng.standard_normal((60, 3))
    expected = [
        dsl.parse_field(t, c3)
        for t in ("radial()", "[norm2(x) * x1, norm2(x) * x2, norm2(x) * x3]",
                  "[norm2(x)^2 * x1, norm2(x)^2 * x2, norm2(x)^2 * x3]")
    ]
    got = np.stack([b.evaluate(xs).ravel() for b in space.basis], axis=1)
    want = np.stack([e.evaluate(xs).ravel() for e in expected], axis=1)
    basis_ok = space.dimension == 3 and spans_equal(got, want)

    so3 = [lie.haar_sample(GroupSpec("SO", 3), 1, i).matrix for i in range(6)]
    o3 = [lie.haar_sample(GroupSpec("O", 3), 1, i).matrix for i in range(6)]
    o3 += [np.diag([-1.0, 1.0, 1.0])]
    K_so3 = sampled_invariant_space(so3, 3, 5, rng)
    K_o3 = sampled_invariant_space(o3, 3, 5, rng)
    su3 = [lie.haar_sample(GroupSpec("SU", 3), 2, i).real() for i in range(10)]
    u3 = [lie.haar_sample(GroupSpec("U", 3), 2, i).real() for i in range(10)]
    K_su3 = sampled_invariant_space(su3, 6, 3, rng)
    K_u3 = sampled_invariant_space(u3, 6, 3, rng)
    oracle_ok = K_so3.shape[1] == 3 and spans_equal(K_so3, K_o3) and spans_equal(K_su3, K_u3)
    oracle_dims = (K_so3.shape[1], K_o3.shape[1], K_su3.shape[1], K_u3.shape[1])

    so_o = autcheck.compare_invariant_spaces(GroupSpec("SO", 3), GroupSpec("O", 3), 5)
    su_u = autcheck.compare_invariant_spaces(GroupSpec("SU", 3), GroupSpec("U", 3), 3)
    su_dim = autcheck.invariant_field_space(GroupSpec("SU", 3), 3).dimension
    elapsed = time.perf_counter() - start
    ok = basis_ok and oracle_ok and so_o and su_u and su_dim == oracle_dims[2] and elapsed < 60
    record(
        4,
        "SO(3)/O(3) and SU(3)/U(3) share invariant fields",
        ok,
        f"dim {space.dimension}, compare {so_o}/{su_u}, oracle dims {oracle_dims}, {elapsed:.1f}s",
    )


# ------------------------------------------------------------------- 5


def test_criterion_05_hopf_twist():
    start = time.perf_counter()
    lam = cons.hopf_twist()
    space = autcheck.invariant_field_space(GroupSpec("U", 2), 5)
    plan = SamplePlan(500, "Annulus", (0.5, 3.0), seed=5)
    rep = autcheck.check_automorphism(lam, space.basis, plan)
    pair_rep = autcheck.check_automorphism(lam, [cons.radial(4), cons.complex_structure_field(2)], plan)
    pts = plan.points(Chart.euclidean(4))
    mu = dsl.eval_scalar(cons.default_twist_profile(), Chart.euclidean(3), cons.hopf_projection(pts))
    support = pts[mu != 0]
    fit = cons.linear_fit_error(lam, support)
    elapsed = time.perf_counter() - start
    ok = rep.max < 1e-7 and pair_rep.max < 1e-9 and len(support) > 100 and fit > 1e-2 and elapsed < 30
    record(
        5,
        "Hopf twist preserves invariant fields but is not linear",
        ok,
        f"basis {rep.max:.2e}, xi/Y {pair_rep.max:.2e}, fit error {fit:.3f}, {elapsed:.1f}s",
    )


# ------------------------------------------------------------------- 6


def test_criterion_06_commuting_field_dimension():
    start = time.perf_counter()
    s2 = [np.sqrt(2.0)]
    dims = (
        flows.commuting_field_nullspace(1, 1, s2, [1.0], deg_x=4, max_freq=3).dimension,
        flows.commuting_field_nullspace(1, 1, s2, [1.0], deg_x=5, max_freq=4).dimension,
        flows.commuting_field_nullspace(2, 1, s2, [1.0], deg_x=3, max_freq=2).dimension,
        flows.commuting_field_nullspace(2, 1, s2, [1.0], deg_x=4, max_freq=3).dimension,
    )
    elapsed = time.perf_counter() - start
    ok = dims == (2, 2, 5, 5) and elapsed < 120
    record(6, "commuting fields have dimension k^2 + s", ok, f"dims {dims}, {elapsed:.1f}s")


# ------------------------------------------------------------------- 7


def test_criterion_07_straightening():
    W = dsl.parse_field("[0, plateau(norm2(x), -2, -1, 4, 16)]", Chart.product(1, 1))
    F = flows.straighten(W, 1.0, 2.0)
    P = SamplePlan(200, "ProductBox", (5.0,), seed=7).points(Chart.product(1, 1))
    residual = float(np.max(np.linalg.norm(F.residual(P), axis=1)))
    inner = np.column_stack([np.linspace(-1.0, 1.0, 101), np.linspace(0.0, 6.0, 101)])
    identity = np.array_equal(F.apply(inner), inner)
    outer_x = np.concatenate([np.linspace(2.0, 10.0, 100), -np.linspace(2.0, 10.0, 100)])
    outer = np.column_stack([outer_x, np.zeros_like(outer_x)])
    far = float(np.max(np.abs(F.W_tilde.evaluate(outer))))
    ok = identity and residual < 1e-6 and far < 1e-9
    record(7, "straightening map", ok, f"identity inside a {identity}, residual {residual:.2e}, remainder {far:.1e}")


# ------------------------------------------------------------------- 8


def rotation2(a):
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def flow_corpus():
    e2, e3 = Chart.euclidean(2), Chart.euclidean(3)
    Y = cons.complex_structure_field(1)
    xi = cons.radial(2)
    X1 = cons.un_pair(1).X1
    Lz = dsl.parse_field("[-x2, x1, 0]", e3)
    Lx, _, Lz_alg = lie.so3_generators()
    rz = lie.exp_matrix(Lz_alg * 0.9).matrix
    rx = lie.exp_matrix(Lx * 0.9).matrix
    lin = dsl.linear_map
    bend = dsl.parse_map("[x1 + 0.3 * x2^2, x2]", e2)
    b2, b4 = SamplePlan(20, "Ball", (1.0,), seed=8), SamplePlan(20, "Annulus", (0.5, 1.5), seed=8)
    return [
        (Y, lin(rotation2(0.7)), b2),
        (Y, lin(rotation2(2.0)), b2),
        (Y, lin(2.0 * np.eye(2)), b2),
        (Y, lin(np.diag([2.0, 1.0])), b2),
        (Y, lin(np.diag([1.0, -1.0])), b2),
        (Y, lin(np.array([[1.0, 1.0], [0.0, 1.0]])), b2),
        (Y, bend, b2),
        (xi, lin(np.array([[1.0, 2.0], [-0.5, 3.0]])), b2),
        (xi, lin(np.diag([2.0, 1.0])), b2),
        (xi, bend, b2),
        (X1, lin(rotation2(1.1)), b2),
        (X1, lin(-np.eye(2)), b2),
        (X1, lin(2.0 * np.eye(2)), b2),
        (X1, lin(np.diag([1.0, -1.0])), b2),
        (Lz, lin(rz), SamplePlan(20, "Ball", (1.0,), seed=9)),
        (Lz, lin(np.diag([1.0, 1.0, 3.0])), SamplePlan(20, "Ball", (1.0,), seed=9)),
        (Lz, lin(rx), SamplePlan(20, "Ball", (1.0,), seed=9)),
        (Lz, lin(np.diag([2.0, 1.0, 1.0])), SamplePlan(20, "Ball", (1.0,), seed=9)),
        (cons.complex_structure_field(2), cons.hopf_twist(), b4),
        (cons.complex_structure_field(2), lin(np.diag([1.0, 1.0, 2.0, 1.0])), b4),
    ]


def test_criterion_08_flow_commutation_agrees_with_pushforward():
    corpus = flow_corpus()
    mismatches, counts = [], {v: 0 for v in Verdict}
    for i, (Z, F, plan) in enumerate(corpus):
        rep = autcheck.flow_commutation_probe(Z, 1.0, np.sqrt(2.0), F, plan)
        direct = autcheck.check_automorphism(F, [Z], plan)
        counts[rep.verdict] += 1
        if rep.verdict != direct.verdict or rep.verdict == Verdict.INCONCLUSIVE:
            mismatches.append((i, str(rep.verdict), str(direct.verdict)))
    ok = len(corpus) == 20 and not mismatches and counts[Verdict.PRESERVES] > 0 and counts[Verdict.VIOLATES] > 0
    detail = f"{len(corpus)} cases, {counts[Verdict.PRESERVES]} preserve, {counts[Verdict.VIOLATES]} violate"
    record(8, "flow commutation matches pushforward", ok, detail + (f", mismatches {mismatches}" if mismatches else ""))


# ------------------------------------------------------------------- 9


def test_criterion_09_scaling_rigidity():
    res = flows.scaling_rigidity(scales=(0.5, 0.9, 1.0, 1.1, 2.0))
    preserving = [r.scale for r in res if r.sup_difference < 1e-10]
    others = min(r.sup_difference for r in res if r.scale != 1.0)
    ok = preserving == [1.0] and others > 1e-4
    record(9, "only a = 1 preserves jet5 near 0", ok, f"preserving {preserving}, smallest other difference {others:.2e}")


# ------------------------------------------------------------------ 10


def test_criterion_10_deterministic_output(tmp_path):
    differing = []
    files = sorted(SCENARIOS.glob("*.toml"))
    for path in files:
        command = cli.load_scenario(path)["command"]
        outs = []
        for jobs in ("1", "8"):
            out = tmp_path / f"{path.stem}-{jobs}.out"
            code = cli.run([command, "--scenario", str(path), "--out", str(out), "--jobs", jobs])
            outs.append((code, out.read_bytes()))
        if outs[0] != outs[1] or outs[0][0] != 0:
            differing.append(path.stem)
    ok = bool(files) and not differing
    record(10, "identical output for --jobs 1 and 8", ok, f"{len(files)} scenarios, differing or failing {differing}")


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))

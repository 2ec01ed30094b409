"""Verification engine for automorphism and invariance claims.

A map ``F`` preserves a field ``X`` when ``DF(p) X(p) = X(F(p))`` at every
point.  The residual is evaluated from exact derivatives at sampled points and
classified against two thresholds, each scaled by ``1 + |X|``:

* ``Preserves`` if the largest scaled residual is below ``preserve_tol``;
* ``Violates`` if it is above ``violate_floor``;
* ``Inconclusive`` in between.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from detvec import dsl
from detvec.dsl import Chart, Const, MapExpr, VFieldExpr, Var
from detvec.lie import (
    GroupElement,
    GroupSpec,
    RANK_RTOL,
    _haar_orthogonal,
    _haar_unitary,
    complex_structure,
    haar_sample,
    numerical_rank,
    quaternionic_structures,
    realify,
)

PRESERVE_TOL = 1e-8
VIOLATE_FLOOR = 1e-4
MAX_REJECTIONS = 10**4
MAX_COEFFICIENTS = 10**5


class Verdict(str, enum.Enum):
    PRESERVES = "Preserves"
    VIOLATES = "Violates"
    INCONCLUSIVE = "Inconclusive"

    def __str__(self):
        return self.value


def classify(scaled_max: float, preserve_tol: float = PRESERVE_TOL, violate_floor: float = VIOLATE_FLOOR) -> Verdict:
    if scaled_max < preserve_tol:
        return Verdict.PRESERVES
    if scaled_max > violate_floor:
        return Verdict.VIOLATES
    return Verdict.INCONCLUSIVE


def combine(verdicts) -> Verdict:
    vs = list(verdicts)
    if vs and all(v == Verdict.PRESERVES for v in vs):
        return Verdict.PRESERVES
    if vs and all(v == Verdict.VIOLATES for v in vs):
        return Verdict.VIOLATES
    return Verdict.INCONCLUSIVE


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class SamplePlan:
    """``count`` points from ``Ball(r)``, ``Sphere(r)``, ``Annulus(r1, r2)`` or ``ProductBox(r)``.

    ``ProductBox(r)`` samples ``[-r, r]^k`` times uniform angles on a product
    chart.  ``Annulus`` bounds are radii, so ``Annulus(4, 5)`` covers
    ``16 < |x|^2 < 25``.
    """

    count: int
    domain: str = "Ball"
    radii: tuple[float, ...] = (1.0,)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(float(r) for r in np.atleast_1d(self.radii)))
        if self.count < 1:
            raise ValueError("sample count must be >= 1")
        if self.domain not in ("Ball", "Sphere", "Annulus", "ProductBox"):
            raise ValueError(f"unknown sample domain {self.domain!r}")
        need = 2 if self.domain == "Annulus" else 1
        if len(self.radii) != need or any(r <= 0 for r in self.radii):
            raise ValueError(f"{self.domain} needs {need} positive radii, got {self.radii}")
        if need == 2 and not self.radii[0] < self.radii[1]:
            raise ValueError("annulus radii must be ordered")

    def __str__(self):
        return f"{self.domain}({', '.join(f'{r:g}' for r in self.radii)})"

    def points(self, chart: Chart) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 0x5EED])
        n, k = self.count, chart.k
        if self.domain == "ProductBox":
            xs = rng.uniform(-self.radii[0], self.radii[0], (n, k))
            ts = rng.uniform(0.0, 2 * np.pi, (n, chart.s))
            return np.hstack([xs, ts])
        if chart.s:
            raise ValueError(f"{self.domain} sampling needs a Euclidean chart, got {chart}")
        u = rng.standard_normal((n, k))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        if self.domain == "Sphere":
            r = np.full(n, self.radii[0])
        elif self.domain == "Ball":
            r = self.radii[0] * rng.uniform(0.0, 1.0, n) ** (1.0 / k)
        else:
            lo, hi = self.radii[0] ** k, self.radii[1] ** k
            r = rng.uniform(lo, hi, n) ** (1.0 / k)
            r = np.clip(r, np.nextafter(self.radii[0], np.inf), np.nextafter(self.radii[1], 0.0))
        return u * r[:, None]


# ------------------------------------------------------------------ reports


@dataclass
class CaseResult:
    map: str
    field: str
    max: float
    mean: float
    argmax: list[float]
    scaled_max: float
    verdict: Verdict
    skipped: int = 0
    expected: str | None = None

    def to_dict(self) -> dict:
        d = {
            "map": self.map,
            "field": self.field,
            "max": self.max,
            "mean": self.mean,
            "argmax": self.argmax,
            "scaled_max": self.scaled_max,
            "verdict": str(self.verdict),
            "skipped": self.skipped,
        }
        if self.expected is not None:
            d["expected"] = self.expected
        return d


@dataclass
class ResidualReport:
    cases: list[CaseResult]
    preserve_tol: float = PRESERVE_TOL
    violate_floor: float = VIOLATE_FLOOR
    extra: dict = field(default_factory=dict)

    @property
    def verdict(self) -> Verdict:
        return combine(c.verdict for c in self.cases)

    @property
    def max(self) -> float:
        return max((c.max for c in self.cases), default=0.0)

    @property
    def min(self) -> float:
        """Smallest per-case maximum (the weakest violation)."""
        return min((c.max for c in self.cases), default=0.0)

    def by_map(self) -> dict[str, list[CaseResult]]:
        out: dict[str, list[CaseResult]] = {}
        for c in self.cases:
            out.setdefault(c.map, []).append(c)
        return out

    def map_verdicts(self) -> dict[str, Verdict]:
        """One verdict per map: preserving every field, or violating at least one."""
        out = {}
        for m, cs in self.by_map().items():
            vs = [c.verdict for c in cs]
            if all(v == Verdict.PRESERVES for v in vs):
                out[m] = Verdict.PRESERVES
            elif any(v == Verdict.VIOLATES for v in vs):
                out[m] = Verdict.VIOLATES
            else:
                out[m] = Verdict.INCONCLUSIVE
        return out

    def to_dict(self) -> dict:
        d = {"cases": [c.to_dict() for c in self.cases], "verdict": str(self.verdict)}
        d.update(self.extra)
        return d


def _case(map_label: str, X: VFieldExpr, R: np.ndarray, scale: np.ndarray, pts: np.ndarray, skipped: int, tols) -> CaseResult:
    if R.shape[0] == 0:
        return CaseResult(map_label, X.label, float("nan"), float("nan"), [], float("nan"), Verdict.INCONCLUSIVE, skipped)
    norms = np.linalg.norm(R, axis=1)
    if not np.all(np.isfinite(norms)):
        raise FloatingPointError(f"non-finite residual for map {map_label} and field {X.label}")
    scaled = norms / (1.0 + scale)
    i = int(np.argmax(norms))
    smax = float(np.max(scaled))
    return CaseResult(
        map_label,
        X.label,
        float(norms[i]),
        float(np.mean(norms)),
        [float(v) for v in pts[i]],
        smax,
        classify(smax, *tols),
        skipped,
    )


def _map_label(F: MapExpr) -> str:
    if F.name:
        return F.name
    if F.is_linear:
        rows = ("[" + ", ".join(f"{v:.6g}" for v in row) + "]" for row in F.matrix)
        return "Linear([" + ", ".join(rows) + "])"
    return str(F)


def check_automorphism(
    F: MapExpr,
    fields,
    plan: SamplePlan,
    preserve_tol: float = PRESERVE_TOL,
    violate_floor: float = VIOLATE_FLOOR,
    label: str | None = None,
) -> ResidualReport:
    """Pushforward residuals of every field under ``F`` at the plan's points.

    Points outside the domain of ``F`` or of a field (at ``p`` or ``F(p)``) are
    skipped and counted.
    """
    fields = list(fields)
    for X in fields:
        if X.chart != F.chart:
            raise ValueError(f"chart mismatch: map on {F.chart}, field on {X.chart}")
    pts = plan.points(F.chart)
    label = label or _map_label(F)
    tols = (preserve_tol, violate_floor)
    ok = dsl.domain_mask(F, pts)
    Fp = np.full_like(pts, np.nan)
    Fp[ok] = F.evaluate(pts[ok])
    DF = F.jacobian(pts[ok]) if ok.any() else np.zeros((0, pts.shape[1], pts.shape[1]))
    cases = []
    for X in fields:
        good = ok & dsl.domain_mask(X, pts) & dsl.domain_mask(X, np.where(ok[:, None], Fp, 1.0))
        sel = good[ok]
        P, Q = pts[good], Fp[good]
        Xp = X.evaluate(P) if len(P) else np.zeros((0, pts.shape[1]))
        XF = X.evaluate(Q) if len(Q) else np.zeros((0, pts.shape[1]))
        DFX = np.einsum("nij,nj->ni", DF[sel], Xp)
        R = DFX - XF
        scale = np.maximum(np.linalg.norm(XF, axis=1), np.linalg.norm(DFX, axis=1))
        cases.append(_case(label, X, R, scale, P, int(np.sum(~good)), tols))
    return ResidualReport(cases, preserve_tol, violate_floor)


def _parallel_map(fn, items, jobs: int = 1):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _merge(reports, preserve_tol, violate_floor) -> ResidualReport:
    cases = [c for r in reports for c in r.cases]
    return ResidualReport(cases, preserve_tol, violate_floor)


def group_map(g: GroupElement, chart: Chart | None = None, label: str = "") -> MapExpr:
    return dsl.linear_map(g.real(), chart, label)


def group_preserves(
    spec: GroupSpec,
    fields,
    n_samples: int,
    plan: SamplePlan,
    seed: int | None = None,
    jobs: int = 1,
    preserve_tol: float = PRESERVE_TOL,
    violate_floor: float = VIOLATE_FLOOR,
) -> ResidualReport:
    """``check_automorphism`` over Haar samples; Preserves only if every sample does."""
    fields = list(fields)
    seed = plan.seed if seed is None else seed

    def one(i):
        g = haar_sample(spec, seed, i)
        F = group_map(g, fields[0].chart, f"haar {spec} #{i}")
        return check_automorphism(F, fields, plan, preserve_tol, violate_floor)

    return _merge(_parallel_map(one, range(n_samples), jobs), preserve_tol, violate_floor)


# ---------------------------------------------------------- outside probes


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ComplementSampler:
    """Rejection sampler for matrices outside a group.

    ``ambient`` draws a candidate matrix from an RNG; ``reject`` returns True
    when the candidate is too close to the group to be a useful witness.
    """

    name: str
    dim: int
    ambient: object
    reject: object

    def sample(self, seed: int, index: int) -> np.ndarray:
        rng = np.random.default_rng([int(seed), int(index), 0xC0])
        for _ in range(MAX_REJECTIONS + 1):
            g = self.ambient(rng)
            if not self.reject(g):
                return g
        raise SamplingError(f"{self.name}: more than {MAX_REJECTIONS} rejections")


def _commutator_norm(g, S) -> float:
    return float(np.linalg.norm(g @ S - S @ g))


def outside_unitary(n: int, margin: float = 0.1) -> ComplementSampler:
    """Haar elements of ``O(2n)`` at distance ``>= margin`` from ``U(n)`` (``|gJ - Jg|``)."""
    J = complex_structure(n)
    return ComplementSampler(
        f"O({2 * n})\\U({n})", 2 * n, lambda rng: _haar_orthogonal(2 * n, rng), lambda g: _commutator_norm(g, J) < margin
    )


def outside_symplectic(margin: float = 0.1) -> ComplementSampler:
    """Haar elements of ``U(2)`` (realified) with ``|gK - Kg| >= margin``."""
    _, K, _ = quaternionic_structures(1)
    return ComplementSampler(
        "U(2)\\Sp(1)", 4, lambda rng: realify(_haar_unitary(2, rng)), lambda g: _commutator_norm(g, K) < margin
    )


def outside_special_orthogonal(n: int) -> ComplementSampler:
    """Haar elements of ``O(n)`` with determinant ``-1``."""

    def draw(rng):
        g = _haar_orthogonal(n, rng)
        if np.linalg.det(g) > 0:
            g[:, 0] = -g[:, 0]
        return g

    return ComplementSampler(f"O({n})\\SO({n})", n, draw, lambda g: False)


def non_orthogonal(n: int, margin: float = 0.1) -> ComplementSampler:
    """Gaussian matrices at distance ``>= margin`` from ``O(n)`` (``|g^T g - I|``)."""
    return ComplementSampler(
        f"GL({n})\\O({n})",
        n,
        lambda rng: rng.standard_normal((n, n)),
        lambda g: np.linalg.norm(g.T @ g - np.eye(n)) < margin or abs(np.linalg.det(g)) < 1e-3,
    )


def complement_sampler(name: str, n: int) -> ComplementSampler:
    """Look up a sampler by name: ``outside_unitary``, ``outside_symplectic``, ``outside_so``, ``non_orthogonal``."""
    table = {
        "outside_unitary": lambda: outside_unitary(n),
        "outside_symplectic": lambda: outside_symplectic(),
        "outside_so": lambda: outside_special_orthogonal(n),
        "non_orthogonal": lambda: non_orthogonal(n),
    }
    if name not in table:
        raise ValueError(f"unknown complement sampler {name!r}")
    return table[name]()


def probe_outside(
    sampler: ComplementSampler,
    fields,
    n_samples: int,
    plan: SamplePlan,
    seed: int | None = None,
    jobs: int = 1,
    preserve_tol: float = PRESERVE_TOL,
    violate_floor: float = VIOLATE_FLOOR,
) -> ResidualReport:
    """Residuals of linear maps drawn outside a group.

    The report's per-map verdicts (``map_verdicts``) tell whether every
    sampled outsider violates at least one field.
    """
    fields = list(fields)
    seed = plan.seed if seed is None else seed
    chart = fields[0].chart
    if chart.dim != sampler.dim:
        raise ValueError(f"sampler acts on R^{sampler.dim}, fields on {chart}")

    def one(i):
        F = dsl.linear_map(sampler.sample(seed, i), chart, f"{sampler.name} #{i}")
        return check_automorphism(F, fields, plan, preserve_tol, violate_floor)

    return _merge(_parallel_map(one, range(n_samples), jobs), preserve_tol, violate_floor)


# ------------------------------------------------------ invariant fields


def monomials(n: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent vectors of total ``degree`` in graded-lex order."""
    out = []
    for combo in combinations_with_replacement(range(n), degree):
        e = [0] * n
        for i in combo:
            e[i] += 1
        out.append(tuple(e))
    return sorted(out, reverse=True)


@dataclass
class InvariantSpace:
    spec: GroupSpec
    degree: int
    coefficients: np.ndarray  # rows: basis fields; columns: (degree, monomial, component)
    labels: list[tuple[tuple[int, ...], int]]
    basis: list[VFieldExpr]

    @property
    def dimension(self) -> int:
        return len(self.basis)


def _equation_block(mats: list[np.ndarray], reflections: list[np.ndarray], n: int, deg: int):
    mons = monomials(n, deg)
    index = {m: i for i, m in enumerate(mons)}
    nm = len(mons)
    nunk = nm * n
    if nunk > MAX_COEFFICIENTS:
        raise ValueError(f"coefficient space too large ({nunk} > {MAX_COEFFICIENTS})")
    rows = []
    for A in mats:
        # (L_A X)_i = sum_j d_j X_i (A x)_j - sum_j A_ij X_j, one block per algebra element
        E = np.zeros((nm * n, nunk))
        for a, alpha in enumerate(mons):
            for i in range(n):
                col = a * n + i
                for j in range(n):
                    if alpha[j] == 0:
                        continue
                    for l in range(n):
                        if A[j, l] == 0:
                            continue
                        beta = list(alpha)
                        beta[j] -= 1
                        beta[l] += 1
                        E[index[tuple(beta)] * n + i, col] += alpha[j] * A[j, l]
                for kk in range(n):
                    if A[kk, i] != 0:
                        E[a * n + kk, col] -= A[kk, i]
        rows.append(E)
    for D in reflections:
        # X(D x) = D X(x) for diagonal sign matrices D
        d = np.diag(D)
        E = np.zeros((nunk, nunk))
        for a, alpha in enumerate(mons):
            sign = np.prod(d ** np.array(alpha))
            for i in range(n):
                E[a * n + i, a * n + i] = sign - d[i]
        rows.append(E)
    return mons, np.vstack(rows) if rows else np.zeros((0, nunk))


def _rref(B: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Reduced row echelon form of a full-row-rank matrix (partial pivoting)."""
    M = np.array(B, dtype=float)
    r = 0
    rows, cols = M.shape
    for c in range(cols):
        if r == rows:
            break
        p = r + int(np.argmax(np.abs(M[r:, c])))
        if abs(M[p, c]) < tol:
            continue
        M[[r, p]] = M[[p, r]]
        M[r] /= M[r, c]
        for q in range(rows):
            if q != r:
                M[q] -= M[q, c] * M[r]
        r += 1
    M[np.abs(M) < tol] = 0.0
    return M[:r]


def _nice(c: float):
    from fractions import Fraction

    q = Fraction(c).limit_denominator(1000)
    return q if abs(float(q) - c) < 1e-10 else c


def _field_from_coeffs(coeffs, labels, n: int) -> VFieldExpr:
    comps = [dsl.ZERO] * n
    xs = [Var(f"x{i + 1}") for i in range(n)]
    for c, (alpha, i) in zip(coeffs, labels):
        if c == 0.0:
            continue
        mono = dsl.ONE
        for x, e in zip(xs, alpha):
            mono = dsl.mul(mono, dsl.power(x, e))
        comps[i] = dsl.add(comps[i], dsl.mul(Const(_nice(float(c))), mono))
    return VFieldExpr(Chart.euclidean(n), tuple(comps))


def invariant_field_space(spec: GroupSpec, max_degree: int, conjugate: np.ndarray | None = None) -> InvariantSpace:
    """Polynomial fields of degree ``<= max_degree`` equivariant under ``spec``.

    Solves ``DX(x) (A x) = A X(x)`` for every algebra basis element ``A`` (in
    the real representation), plus ``X(D x) = D X(x)`` for the reflections of
    disconnected groups.  ``conjugate`` replaces the representation ``M`` by
    ``P M P^-1``.
    """
    if not 0 <= max_degree <= 7:
        raise ValueError("max_degree must be between 0 and 7")
    n = spec.rep_dim
    mats = [spec.real_rep(E.matrix) for E in spec.algebra_basis]
    refl = [np.asarray(D, float) for D in spec.component_generators]
    if conjugate is not None:
        P = np.asarray(conjugate, float)
        Pi = np.linalg.inv(P)
        mats = [P @ A @ Pi for A in mats]
        if refl:
            raise ValueError("conjugation is only supported for connected groups")
    blocks, labels = [], []
    for deg in range(max_degree + 1):
        mons, E = _equation_block(mats, refl, n, deg)
        if E.shape[0]:
            _, sv, vh = np.linalg.svd(E)
            smax = sv[0] if sv.size and sv[0] > 0 else 1.0
            rank = int(np.sum(sv > RANK_RTOL * smax))
            K = vh[rank:]
        else:
            K = np.eye(len(mons) * n)
        if K.shape[0]:
            blocks.append((len(labels), _rref(K)))
        labels.extend((alpha, i) for alpha in mons for i in range(n))
    total = len(labels)
    rows = []
    for offset, R in blocks:
        full = np.zeros((R.shape[0], total))
        full[:, offset : offset + R.shape[1]] = R
        rows.extend(full)
    C = np.array(rows) if rows else np.zeros((0, total))
    basis = [_field_from_coeffs(c, labels, n) for c in C]
    return InvariantSpace(spec, max_degree, C, labels, basis)


def compare_invariant_spaces(spec_a: GroupSpec, spec_b: GroupSpec, max_degree: int) -> bool:
    """True iff both groups have the same invariant polynomial fields up to ``max_degree``."""
    if spec_a.rep_dim != spec_b.rep_dim:
        raise ValueError(f"{spec_a} and {spec_b} act on different spaces")
    A = invariant_field_space(spec_a, max_degree).coefficients
    B = invariant_field_space(spec_b, max_degree).coefficients
    ra, rb = numerical_rank(A) if len(A) else 0, numerical_rank(B) if len(B) else 0
    both = np.vstack([A, B]) if len(A) + len(B) else np.zeros((0, 1))
    rab = numerical_rank(both) if len(both) else 0
    return ra == rb == rab


# ------------------------------------------------------- flow commutation


def flow_commutation_probe(
    Z: VFieldExpr,
    a: float,
    b: float,
    F: MapExpr,
    plan: SamplePlan,
    tol: float = 1e-11,
    preserve_tol: float = PRESERVE_TOL,
    violate_floor: float = VIOLATE_FLOOR,
) -> ResidualReport:
    """``|F(Phi_t(p)) - Phi_t(F(p))|`` for ``t`` in ``{a, b}``, with the pushforward verdict alongside.

    The report's ``extra`` holds the pushforward verdict and whether the two
    verdicts agree.
    """
    from detvec.flows import integrate_flow

    if Z.chart != F.chart:
        raise ValueError("chart mismatch")
    pts = plan.points(Z.chart)
    label = _map_label(F)
    Fp = F.evaluate(pts)
    R_all, S_all = [], []
    for t in (a, b):
        lhs = F.evaluate(integrate_flow(Z, pts, t, tol))
        rhs = integrate_flow(Z, Fp, t, tol)
        R = lhs - rhs
        if Z.chart.s:
            k = Z.chart.k
            R[:, k:] = (R[:, k:] + np.pi) % (2 * np.pi) - np.pi
        R_all.append(R)
        S_all.append(np.linalg.norm(rhs, axis=1))
    R = np.vstack(R_all)
    scale = np.concatenate(S_all)
    P = np.vstack([pts, pts])
    case = _case(label, Z, R, scale, P, 0, (preserve_tol, violate_floor))
    case.field = f"flow {Z.label} at t in {{{a:g}, {b:g}}}"
    direct = check_automorphism(F, [Z], plan, preserve_tol, violate_floor, label)
    extra = {
        "pushforward_verdict": str(direct.verdict),
        "agree": direct.verdict == case.verdict,
    }
    return ResidualReport([case], preserve_tol, violate_floor, extra)


def symbolic_residual_is_zero(F: MapExpr, X: VFieldExpr) -> bool:
    """True when ``DF X - X o F`` simplifies to the zero expression (linear ``F`` only)."""
    mapping = dict(zip(F.chart.variables, F.components))
    XF = [dsl.substitute(c, mapping) for c in X.components]
    for i in range(F.chart.dim):
        acc = dsl.ZERO
        for j, v in enumerate(F.chart.variables):
            acc = dsl.add(acc, dsl.mul(dsl.differentiate(F.components[i], v), X.components[j]))
        diff = dsl.sub(acc, XF[i])
        if not (isinstance(diff, Const) and diff.value == 0):
            return False
    return True

"""Named vector fields, pairs of fields and maps.

Everything here returns DSL objects from :mod:`detvec.dsl`, so the fields can
be printed, re-parsed, differentiated and fed to the verification engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from detvec import dsl
from detvec.dsl import (
    Chart,
    Const,
    DSLError,
    Expr,
    Jet5,
    MapExpr,
    Norm2,
    Plateau,
    Var,
    VFieldExpr,
    add,
    mul,
    sub,
)
from detvec.lie import GroupSpec, complex_structure, quaternionic_structures


class ConstructionError(DSLError):
    pass


def _xs(k: int) -> list[Var]:
    return [Var(f"x{i + 1}") for i in range(k)]


def linear_field(M, chart: Chart | None = None, name: str = "") -> VFieldExpr:
    """The field ``x -> M x``; integer and float entries become exact constants."""
    M = np.asarray(M, dtype=float)
    chart = chart or Chart.euclidean(M.shape[0])
    if M.shape != (chart.dim, chart.dim) or chart.s:
        raise ConstructionError(f"matrix of shape {M.shape} does not act on {chart}")
    comps = []
    for row in M:
        e = dsl.ZERO
        for j, a in enumerate(row):
            if a != 0.0:
                e = add(e, mul(Const(a), Var(f"x{j + 1}")))
        comps.append(e)
    return VFieldExpr(chart, tuple(comps), False, name)


def radial(m: int) -> VFieldExpr:
    """``xi = sum x_j d/dx_j`` on ``R^m``."""
    if m < 1:
        raise ConstructionError("radial field needs m >= 1")
    return VFieldExpr(Chart.euclidean(m), tuple(_xs(m)), False, "radial")


def complex_structure_field(n: int) -> VFieldExpr:
    """``Y(x) = J x`` on ``R^{2n}``."""
    if n < 1:
        raise ConstructionError("n must be >= 1")
    return linear_field(complex_structure(n), name="Jfield")


def quaternionic_fields(r: int) -> tuple[VFieldExpr, VFieldExpr, VFieldExpr]:
    """The linear fields ``Y, Z, U`` of ``J, K, L`` on ``R^{4r}``."""
    if r < 1:
        raise ConstructionError("r must be >= 1")
    J, K, L = quaternionic_structures(r)
    return linear_field(J, name="Jfield"), linear_field(K, name="Kfield"), linear_field(L, name="Lfield")


def named_field(name: str, chart: Chart) -> VFieldExpr:
    """Resolve the DSL constructors ``radial()``, ``Jfield()``, ``Kfield()``, ``Lfield()``."""
    if name == "radial":
        if chart.s:
            comps = tuple(_xs(chart.k)) + (dsl.ZERO,) * chart.s
            return VFieldExpr(chart, comps, False, "radial")
        return radial(chart.k)
    if chart.s:
        raise ConstructionError(f"{name}() is only defined on Euclidean charts")
    m = chart.k
    if name == "Jfield":
        if m % 2:
            raise ConstructionError(f"Jfield() needs an even dimension, got {m}")
        return complex_structure_field(m // 2)
    if name in ("Kfield", "Lfield"):
        if m % 4:
            raise ConstructionError(f"{name}() needs a dimension divisible by 4, got {m}")
        _, Z, U = quaternionic_fields(m // 4)
        return Z if name == "Kfield" else U
    raise ConstructionError(f"unknown field constructor {name!r}")


@dataclass(frozen=True)
class FieldPair:
    X: VFieldExpr
    X1: VFieldExpr
    intended_group: GroupSpec
    name: str = ""

    def __post_init__(self):
        if self.X.chart != self.X1.chart:
            raise ConstructionError("both fields of a pair must share the chart")

    @property
    def chart(self) -> Chart:
        return self.X.chart

    @property
    def fields(self) -> tuple[VFieldExpr, VFieldExpr]:
        return (self.X, self.X1)


def un_pair(n: int) -> FieldPair:
    """``X = xi`` and ``X1 = (|x|^2 - 1) Y`` on ``R^{2n}``; preserved exactly by U(n)."""
    Y = complex_structure_field(n)
    f = sub(Norm2(2 * n), dsl.ONE)
    X1 = VFieldExpr(Y.chart, tuple(mul(f, c) for c in Y.components), False, "X1")
    return FieldPair(radial(2 * n), X1, GroupSpec("U", n), f"un_pair({n})")


# ---------------------------------------------------------------- bumps

T = Var("x1")  # the variable t = |x|^2 of one-variable profiles


@dataclass(frozen=True)
class BumpTriple:
    """Profiles ``phi_a(t)`` with ``phi_a(1) = 0`` and ``phi_a = delta_ab`` on ``I_b``.

    The profiles are expressions in ``x1`` standing for ``t = |x|^2``.
    """

    phi: tuple[Expr, Expr, Expr]
    intervals: tuple[tuple[Fraction, Fraction], ...]

    @classmethod
    def default(cls) -> "BumpTriple":
        q = Fraction
        phi1 = add(mul(sub(T, dsl.ONE), Plateau(T, -2, -1, q(7, 2), 4)), Plateau(T, 3, q(7, 2), 9, q(19, 2)))
        phi2 = Plateau(T, 9, q(19, 2), 25, q(51, 2))
        phi3 = Plateau(T, 25, q(51, 2), 1000, 1001)
        return cls((phi1, phi2, phi3), ((q(4), q(9)), (q(16), q(25)), (q(36), q(49))))

    def values(self, t) -> np.ndarray:
        """Shape ``(N, 3)``: the three profiles at the given ``t`` values."""
        pts = np.asarray(t, float).reshape(-1, 1)
        return dsl.eval_many(self.phi, Chart.euclidean(1), pts)

    def condition_residuals(self, n_per_interval: int = 100, seed: int = 0) -> dict[str, float]:
        """Sampled residuals of ``phi_a(1) = 0`` and ``phi_a(I_b) = delta_ab``; min of sum of squares off ``t = 1``."""
        rng = np.random.default_rng(seed)
        at_one = float(np.max(np.abs(self.values([1.0]))))
        delta = 0.0
        for b, (lo, hi) in enumerate(self.intervals):
            t = rng.uniform(float(lo), float(hi), n_per_interval)
            target = np.zeros(3)
            target[b] = 1.0
            delta = max(delta, float(np.max(np.abs(self.values(t) - target))))
        grid = np.linspace(0.0, 100.0, 20001)
        grid = grid[np.abs(grid - 1.0) > 1e-3]
        positivity = float(np.min(np.sum(self.values(grid) ** 2, axis=1)))
        return {"at_one": at_one, "delta": delta, "min_sum_squares": positivity}

    def validate(self, tol: float = 1e-12) -> None:
        res = self.condition_residuals()
        if res["at_one"] > tol or res["delta"] > tol or not res["min_sum_squares"] > 0:
            raise ConstructionError(f"invalid bump triple: {res}")


def sp_pair(r: int = 1, bumps: BumpTriple | None = None) -> FieldPair:
    """``X = xi``, ``X1 = phi1(|x|^2) Y + phi2(|x|^2) Z + phi3(|x|^2) U`` on ``R^{4r}``."""
    bumps = bumps or BumpTriple.default()
    bumps.validate()
    m = 4 * r
    fields = quaternionic_fields(r)
    sub_t = {"x1": Norm2(m)}
    coeffs = [dsl.substitute(p, sub_t) for p in bumps.phi]
    comps = []
    for i in range(m):
        e = dsl.ZERO
        for c, F in zip(coeffs, fields):
            if not (isinstance(F.components[i], Const) and F.components[i].value == 0):
                e = add(e, mul(c, F.components[i]))
        comps.append(e)
    X1 = VFieldExpr(Chart.euclidean(m), tuple(comps), False, "X1")
    return FieldPair(radial(m), X1, GroupSpec("Sp", r), f"sp_pair({r})")


# ------------------------------------------------------------ hopf twist


def hopf_components() -> tuple[Expr, Expr, Expr]:
    """Hopf map ``R^4 -> R^3`` for ``z1 = x1 + i x2``, ``z2 = x3 + i x4``."""
    x1, x2, x3, x4 = _xs(4)
    two = Const(2)
    h1 = mul(two, add(mul(x1, x3), mul(x2, x4)))
    h2 = mul(two, sub(mul(x2, x3), mul(x1, x4)))
    h3 = sub(add(mul(x1, x1), mul(x2, x2)), add(mul(x3, x3), mul(x4, x4)))
    return h1, h2, h3


def hopf_projection(points) -> np.ndarray:
    """``pi_H(x / |x|)`` on ``S^2``, shape ``(N, 3)``."""
    pts = np.atleast_2d(np.asarray(points, float))
    H = dsl.eval_many(hopf_components(), Chart.euclidean(4), pts)
    return H / np.sum(pts**2, axis=1, keepdims=True)


def default_twist_profile() -> Expr:
    """``mu(p) = 3/2 * plateau(p3; -3, -2, -1, 1/2)``: vanishes on the cap ``p3 >= 1/2``."""
    return mul(Const(Fraction(3, 2)), Plateau(Var("x3"), -3, -2, -1, Fraction(1, 2)))


def _check_twist_profile(mu: Expr, n_points: int = 2000, seed: int = 0) -> None:
    extra = dsl.free_variables(mu) - {"x1", "x2", "x3"}
    if extra:
        raise ConstructionError(f"twist profile uses unknown coordinates {sorted(extra)}")
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((n_points, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    # points of a small cap around the chart's point at infinity (0, 0, 1)
    cap = p.copy()
    cap[:, :2] *= 0.02
    cap[:, 2] = np.sqrt(1.0 - np.sum(cap[:, :2] ** 2, axis=1))
    chart = Chart.euclidean(3)
    if np.max(np.abs(dsl.eval_scalar(mu, chart, cap))) > 0.0:
        raise ConstructionError("twist profile is not compactly supported in the chart (nonzero near (0,0,1))")
    if not np.any(np.abs(dsl.eval_scalar(mu, chart, p)) > 1e-6):
        raise ConstructionError("twist profile vanishes identically")


def hopf_twist(mu: Expr | None = None) -> MapExpr:
    """``lambda(x) = exp(i mu(pi_H(x/|x|))) x`` on ``R^4 \\ {0}``."""
    mu = default_twist_profile() if mu is None else mu
    _check_twist_profile(mu)
    r2 = Norm2(4)
    h = hopf_components()
    angle = dsl.substitute(mu, {f"x{i + 1}": dsl.div(h[i], r2) for i in range(3)})
    c, s = dsl.Cos(angle), dsl.Sin(angle)
    x = _xs(4)
    Jx = (dsl.neg(x[1]), x[0], dsl.neg(x[3]), x[2])
    comps = tuple(add(mul(c, x[i]), mul(s, Jx[i])) for i in range(4))
    return MapExpr(Chart.euclidean(4), comps, None, True, "hopf_twist")


def linear_fit_error(F: MapExpr, points) -> float:
    """Relative residual of the best least-squares linear fit ``F(x) ~ A x``."""
    pts = np.atleast_2d(np.asarray(points, float))
    vals = F.evaluate(pts)
    A, *_ = np.linalg.lstsq(pts, vals, rcond=None)
    return float(np.linalg.norm(pts @ A - vals) / np.linalg.norm(vals))


# ------------------------------------------------------- product charts


def product_field(k: int, s: int, V) -> VFieldExpr:
    """``X = xi + V`` on ``R^k x T^s`` with a constant vertical vector ``V``."""
    V = list(np.atleast_1d(V)) if not isinstance(V, (list, tuple)) else list(V)
    if len(V) != s:
        raise ConstructionError(f"V needs {s} entries, got {len(V)}")
    chart = Chart.product(k, s)
    comps = tuple(_xs(k)) + tuple(dsl.as_expr(v) for v in V)
    return VFieldExpr(chart, comps, False, "X")


def jet_probe(h: Expr, k: int, ts=(1e-2, 5e-3, 2.5e-3)) -> dict[str, float]:
    """Difference quotients ``h(t u)/t^4`` and ``h(t u)/t^5`` along probe directions ``u``."""
    chart = Chart.euclidean(k)
    dirs = [np.eye(k)[i] for i in range(k)] + [np.ones(k) / np.sqrt(k)]
    q4 = 0.0
    q5 = []
    for u in dirs:
        vals = np.array([dsl.eval_scalar(h, chart, t * u)[0] for t in ts])
        tt = np.asarray(ts)
        q4 = max(q4, float(abs(vals[-1] / tt[-1] ** 4)))
        q5.append(vals / tt**5)
    h0 = float(abs(dsl.eval_scalar(h, chart, np.zeros(k))[0]))
    q5 = np.array(q5)
    best = int(np.argmax(np.abs(q5[:, -1])))
    spread = float(np.ptp(q5[best]) / max(abs(q5[best, -1]), 1e-300))
    return {"h0": h0, "q4": q4, "q5": float(abs(q5[best, -1])), "q5_spread": spread}


def validate_jet(h: Expr, k: int) -> None:
    """Reject ``h`` unless its 4-jet at 0 vanishes and its 5-jet does not."""
    r = jet_probe(h, k)
    if r["h0"] != 0.0 or r["q4"] > 0.05:
        raise ConstructionError(f"h has a non-zero 4-jet at 0: {r}")
    if r["q5"] < 1e-6 or r["q5_spread"] > 0.5:
        raise ConstructionError(f"h has a vanishing 5-jet at 0: {r}")


def product_field_X1(k: int, s: int, V1: VFieldExpr, h: Expr | None, X: VFieldExpr, validate: bool = True) -> VFieldExpr:
    """``X1 = V1 + h(x) X`` on ``R^k x T^s``; ``h`` defaults to ``jet5(x)``.

    ``h = 0`` is accepted without the jet test (it is the degenerate pair).
    """
    chart = Chart.product(k, s)
    if V1.chart != chart or X.chart != chart:
        raise ConstructionError("V1 and X must live on the product chart")
    xs = {f"x{i + 1}" for i in range(k)}
    for i, c in enumerate(V1.components):
        if i < k and c != dsl.ZERO:
            raise ConstructionError("V1 must be vertical (zero x-components)")
        if i >= k and not dsl.free_variables(c) <= xs:
            raise ConstructionError("V1's angle components may depend on x only")
    h = Jet5(k) if h is None else h
    if isinstance(h, Const) and h.value == 0:
        return V1
    if validate:
        validate_jet(h, k)
    comps = tuple(add(v, mul(h, x)) for v, x in zip(V1.components, X.components))
    return VFieldExpr(chart, comps, False, "X1")


def vertical_field(k: int, s: int, V) -> VFieldExpr:
    """Constant vertical field ``sum V_j d/dtheta_j`` on ``R^k x T^s``."""
    V = list(V)
    if len(V) != s:
        raise ConstructionError(f"V needs {s} entries, got {len(V)}")
    return VFieldExpr(Chart.product(k, s), (dsl.ZERO,) * k + tuple(dsl.as_expr(v) for v in V), False, "V")

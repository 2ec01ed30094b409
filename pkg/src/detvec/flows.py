"""Flows of vector fields and constructions on ``R^k x T^s``.

* :func:`integrate_flow` is an adaptive Dormand-Prince 5(4) integrator that
  advances a whole batch of points with a shared step.
* :func:`trajectory_closure_class` classifies closures of trajectories of
  ``xi + V`` analytically.
* :func:`straighten` builds the bundle map ``F(x, theta) = (x, theta - sigma(x))``
  that moves the vertical drift of ``xi + W`` out to a compact region.
* :func:`commuting_field_nullspace` computes the fields commuting with ``xi + V`` that
  satisfy the order-1 tangency condition against ``X1``, on a truncated
  polynomial times Fourier basis.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from itertools import combinations_with_replacement, product

import numpy as np
from scipy import integrate as sp_integrate

from detvec import dsl
from detvec.constructions import product_field, product_field_X1, validate_jet, vertical_field
from detvec.dsl import Chart, Const, DomainError, Expr, Plateau, VFieldExpr, Var
from detvec.lie import GroupSpec, DenseVerdict, is_dense_couple, nullspace, rational_rank, torus_element


class FlowError(RuntimeError):
    pass


# ------------------------------------------------------------ integrator

# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray  # (len(times), N, d)
    steps: int
    rejected: int
    max_error: float  # largest accepted normalized error estimate (<= 1)
    names: tuple[str, ...] = ()  # coordinate names for the CSV header

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]

    def to_csv(self, stream=None, index: int = 0) -> str:
        """``t`` plus coordinates of trajectory ``index``; returns the text."""
        buf = io.StringIO() if stream is None else stream
        d = self.points.shape[-1]
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.names) if len(self.names) == d else [f"c{i + 1}" for i in range(d)]
        w.writerow(["t"] + names)
        for t, p in zip(self.times, self.points[:, index]):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in p])
        return buf.getvalue() if stream is None else ""


def _rhs(X: VFieldExpr, y: np.ndarray) -> np.ndarray:
    if X.punctured and np.any(np.linalg.norm(y[:, : X.chart.k], axis=1) < 1e-12):
        raise DomainError("trajectory reached the origin, outside the field's domain")
    v = X.evaluate(y)
    if not np.all(np.isfinite(v)):
        raise FlowError("field evaluated to a non-finite value along the trajectory")
    return v


def integrate_trajectory(
    X: VFieldExpr,
    p0,
    t: float,
    tol: float = 1e-10,
    max_steps: int = 200000,
    record: bool = True,
) -> Trajectory:
    """Integrate ``dp/dt = X(p)`` from ``p0`` (one point or a batch) up to time ``t``.

    Error control is mixed absolute/relative with both tolerances equal to
    ``tol``; the step is capped at 0.1 while any point has ``|x| < 1``.
    Angles are not reduced during integration (use :func:`integrate_flow`).
    """
    y = np.atleast_2d(np.asarray(p0, float)).copy()
    if y.shape[1] != X.chart.dim:
        raise ValueError(f"points need {X.chart.dim} coordinates")
    direction = 1.0 if t >= 0 else -1.0
    T = abs(float(t))
    times, pts = [0.0], [y.copy()]
    if T == 0.0:
        return Trajectory(np.array(times), np.array(pts), 0, 0, 0.0, X.chart.variables)
    k = X.chart.k
    f = lambda yy: direction * _rhs(X, yy)  # noqa: E731
    f0 = f(y)
    scale0 = tol + tol * np.abs(y)
    d0 = np.max(np.abs(y) / scale0)
    d1 = np.max(np.abs(f0) / scale0)
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h = min(h, T)
    s = 0.0
    steps = rejected = 0
    max_err = 0.0
    K = np.empty((7,) + y.shape)
    while s < T:
        if steps + rejected > max_steps:
            raise FlowError(f"more than {max_steps} steps")
        hmax = T - s
        if k and np.min(np.linalg.norm(y[:, :k], axis=1)) < 1.0:
            hmax = min(hmax, 0.1)
        h = min(h, hmax)
        if h < 1e-14 * max(1.0, T):
            raise FlowError("step size underflow")
        K[0] = f0
        for i in range(1, 7):
            yi = y + h * np.tensordot(_A[i], K[:i], axes=(0, 0))
            K[i] = f(yi)
        y5 = y + h * np.tensordot(_B5[:6], K[:6], axes=(0, 0))
        err = h * np.tensordot(_E, K, axes=(0, 0))
        sc = tol + tol * np.maximum(np.abs(y), np.abs(y5))
        en = float(np.max(np.abs(err) / sc))
        if en <= 1.0:
            s = T if h >= T - s else s + h
            y = y5
            f0 = K[6]
            steps += 1
            max_err = max(max_err, en)
            if record:
                times.append(s)
                pts.append(y.copy())
            fac = 5.0 if en == 0 else min(5.0, 0.9 * en ** (-0.2))
        else:
            rejected += 1
            fac = max(0.2, 0.9 * en ** (-0.2))
        h *= fac
    if not record:
        times.append(s)
        pts.append(y.copy())
    return Trajectory(direction * np.array(times), np.array(pts), steps, rejected, max_err, X.chart.variables)


def integrate_flow(X: VFieldExpr, p0, t: float, tol: float = 1e-10) -> np.ndarray:
    """``Phi_t(p0)``; angles reduced mod 2 pi.  Batch input gives batch output."""
    p = np.asarray(p0, float)
    out = integrate_trajectory(X, p, t, tol, record=False).final
    out = X.chart.reduce(out)
    return out[0] if p.ndim == 1 else out


# ----------------------------------------------------- closure classes


class ClosureKind(str, enum.Enum):
    FIXED_POINT = "FixedPoint"
    TORUS = "TorusClosure"
    UNBOUNDED = "Unbounded"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ClosureClass:
    kind: ClosureKind
    dim: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __str__(self):
        return f"TorusClosure({self.dim})" if self.kind == ClosureKind.TORUS else str(self.kind)


def _constant_vertical(X: VFieldExpr) -> np.ndarray:
    k = X.chart.k
    for i, c in enumerate(X.components[:k]):
        if c != Var(f"x{i + 1}"):
            raise ValueError("expected a field of the form xi + V")
    V = []
    for c in X.components[k:]:
        if not isinstance(c, Const):
            raise ValueError("expected constant vertical components")
        V.append(float(c.value))
    return np.array(V)


def trajectory_closure_class(X: VFieldExpr, p0) -> ClosureClass:
    """Closure of the trajectory of ``p0`` under ``xi + V`` on ``R^k x T^s``.

    ``x(t) = e^t x0`` is unbounded unless ``x0 = 0``; on ``{0} x T^s`` the
    closure is a subtorus whose dimension is the rank over Q of ``V``.
    """
    V = _constant_vertical(X)
    p0 = np.asarray(p0, float)
    x0 = p0[: X.chart.k]
    if np.any(x0 != 0.0):
        return ClosureClass(ClosureKind.UNBOUNDED, 0, {"norm_x0": float(np.linalg.norm(x0))})
    if not np.any(V):
        return ClosureClass(ClosureKind.FIXED_POINT, 0, {})
    dim = rational_rank(V)
    return ClosureClass(ClosureKind.TORUS, dim, {"V": V.tolist()})


# ---------------------------------------------------------- straightening


@dataclass
class Straightening:
    """``F(x, theta) = (x, theta - sigma(x))`` with ``F_*(xi + W) = xi + W_tilde``.

    ``sigma(x) = int_a^|x| g(r x/|x|) / r dr`` where ``g = W (1 - rho)`` is the
    part of the vertical drift moved away; ``W_tilde = rho W`` is what stays.
    """

    W: VFieldExpr
    a: float
    b: float
    rho: Expr
    quad_tol: float = 1e-12

    def __post_init__(self):
        chart = self.W.chart
        self.k, self.s = chart.k, chart.s
        self.Y = product_field(self.k, self.s, [0] * self.s) + self.W
        self.W_tilde = self.W.scale(self.rho)
        moved = self.W.scale(dsl.sub(dsl.ONE, self.rho))
        self._g = [moved.components[self.k + j] for j in range(self.s)]
        self._dg = [[dsl.differentiate(g, f"x{i + 1}") for i in range(self.k)] for g in self._g]
        self._xchart = chart

    def _eval_x(self, exprs, x: np.ndarray) -> np.ndarray:
        pts = np.hstack([np.atleast_2d(x), np.zeros((np.atleast_2d(x).shape[0], self.s))])
        return dsl.eval_many(exprs, self._xchart, pts)

    def _ray_integral(self, exprs, X: np.ndarray, divide: bool) -> np.ndarray:
        """``int_{a/|x|}^1 e(u x) (/u if divide) du`` for every row of ``X`` and every expression.

        All points share one adaptive integration in ``v`` with
        ``u = a/|x| + (1 - a/|x|) v``; rows with ``|x| <= a`` give exactly 0.
        """
        r = np.linalg.norm(X, axis=1)
        out = np.zeros((X.shape[0], len(exprs)))
        live = r > self.a
        if not live.any():
            return out
        Xl = X[live]
        lo = self.a / r[live]
        span = 1.0 - lo

        def integrand(v):
            u = lo + span * v
            vals = self._eval_x(exprs, u[:, None] * Xl)
            w = span / u if divide else span
            return (vals * w[:, None]).ravel()

        val, err = sp_integrate.quad_vec(integrand, 0.0, 1.0, epsabs=self.quad_tol, epsrel=self.quad_tol, norm="max", limit=2000)
        if not np.all(np.isfinite(val)) or err > 1e-8:
            raise FlowError(f"quadrature failed (error estimate {err})")
        out[live] = val.reshape(-1, len(exprs))
        return out

    def sigma(self, x) -> np.ndarray:
        """Shape ``(N, s)``; exactly 0 for ``|x| <= a``."""
        X = np.atleast_2d(np.asarray(x, float))
        return self._ray_integral(self._g, X, divide=True)

    def grad_sigma(self, x) -> np.ndarray:
        """Shape ``(N, s, k)``.

        Writing ``sigma(x) = int_{a/|x|}^1 g(u x) / u du`` gives
        ``grad sigma(x) = int_{a/|x|}^1 (grad g)(u x) du + g(a x/|x|) x / |x|^2``;
        the boundary term vanishes when ``g`` is zero at radius ``a``.
        """
        X = np.atleast_2d(np.asarray(x, float))
        flat = [e for row in self._dg for e in row]
        out = self._ray_integral(flat, X, divide=False).reshape(X.shape[0], self.s, self.k)
        r = np.linalg.norm(X, axis=1)
        live = r > self.a
        if live.any():
            Xl, rl = X[live], r[live]
            g_edge = self._eval_x(self._g, (self.a / rl)[:, None] * Xl)
            out[live] += g_edge[:, :, None] * (Xl / rl[:, None] ** 2)[:, None, :]
        return out

    def apply(self, points) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, float))
        out = P.copy()
        out[:, self.k :] = P[:, self.k :] - self.sigma(P[:, : self.k])
        return self._xchart.reduce(out)

    def jacobian(self, points) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, float))
        d = self.k + self.s
        J = np.broadcast_to(np.eye(d), (P.shape[0], d, d)).copy()
        J[:, self.k :, : self.k] = -self.grad_sigma(P[:, : self.k])
        return J

    def residual(self, points, jacobian: np.ndarray | None = None) -> np.ndarray:
        """``DF(p) Y(p) - (xi + W_tilde)(F(p))``."""
        P = np.atleast_2d(np.asarray(points, float))
        DF = self.jacobian(P) if jacobian is None else jacobian
        target = product_field(self.k, self.s, [0] * self.s) + self.W_tilde
        return np.einsum("nij,nj->ni", DF, self.Y.evaluate(P)) - target.evaluate(self.apply(P))

    def fd_jacobian(self, points, step: float = 1e-6) -> np.ndarray:
        """Central finite differences of ``apply`` (angle jumps unwrapped)."""
        P = np.atleast_2d(np.asarray(points, float))
        d = self.k + self.s
        J = np.zeros((P.shape[0], d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = step
            diff = self.apply(P + e) - self.apply(P - e)
            diff[:, self.k :] = (diff[:, self.k :] + np.pi) % (2 * np.pi) - np.pi
            J[:, :, i] = diff / (2 * step)
        return J


def straighten(W: VFieldExpr, a: float, b: float, keep_near: bool = True) -> Straightening:
    """Bundle map moving the vertical drift of ``xi + W`` outside ``|x| < b``.

    With ``keep_near`` the drift is kept on ``|x| <= (a+b)/2`` through the
    cut-off ``rho = plateau(|x|^2; -2, -1, c^2, b^2)``; otherwise all of it is
    moved (``rho = 0``), which only gives ``F = id`` near 0 when ``W`` vanishes
    on ``|x| <= a``.
    """
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    chart = W.chart
    if not chart.s:
        raise ValueError("W must live on a product chart")
    xs = {f"x{i + 1}" for i in range(chart.k)}
    for i, c in enumerate(W.components):
        if i < chart.k and c != dsl.ZERO:
            raise ValueError("W must be vertical")
        if not dsl.free_variables(c) <= xs:
            raise ValueError("W's components may depend on x only")
    if keep_near:
        c = (dsl._frac(a) + dsl._frac(b)) / 2
        rho = Plateau(dsl.Norm2(chart.k), -2, -1, c * c, dsl._frac(b) ** 2)
    else:
        rho = dsl.ZERO
    return Straightening(W, float(a), float(b), rho)


# -------------------------------------------- commuting-field nullspace


def _fourier_modes(s: int, max_freq: int) -> list[tuple[str, tuple[int, ...]]]:
    """``("1", 0)`` plus ``cos``/``sin`` for one representative of each ``+-m``."""
    modes: list[tuple[str, tuple[int, ...]]] = [("1", (0,) * s)]
    for m in product(range(-max_freq, max_freq + 1), repeat=s):
        if not any(m):
            continue
        first = next(v for v in m if v)
        if first < 0:
            continue
        modes.append(("cos", m))
        modes.append(("sin", m))
    return modes


def _mode_expr(kind: str, m: tuple[int, ...]) -> Expr:
    if kind == "1":
        return dsl.ONE
    arg = dsl.ZERO
    for j, mj in enumerate(m):
        if mj:
            arg = dsl.add(arg, dsl.mul(Const(mj), Var(f"t{j + 1}")))
    return dsl.Cos(arg) if kind == "cos" else dsl.Sin(arg)


def _x_monomials(k: int, deg: int) -> list[Expr]:
    out = []
    for d in range(deg + 1):
        for combo in combinations_with_replacement(range(k), d):
            e = dsl.ONE
            for i in combo:
                e = dsl.mul(e, Var(f"x{i + 1}"))
            out.append(e)
    return out


@dataclass
class NullspaceResult:
    dimension: int
    basis: list[VFieldExpr]
    dense: DenseVerdict
    n_unknowns: int
    expected: int

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "expected": self.expected,
            "dense": str(self.dense),
            "unknowns": self.n_unknowns,
            "basis": [str(b) for b in self.basis],
        }


def commuting_field_nullspace(
    k: int,
    s: int,
    V,
    V1,
    h: Expr | None = None,
    deg_x: int = 4,
    max_freq: int = 3,
    seed: int = 0,
    max_unknowns: int = 4000,
) -> NullspaceResult:
    """Fields ``Y`` in the truncated basis with ``[xi + V, Y] = 0`` and order-1 tangency of ``[X1, Y]``.

    Condition (a) is imposed by collocation at random points; condition (b) as
    vanishing of ``[X1, Y]`` on ``{0} x T^s`` together with the first
    ``x``-derivatives of its horizontal components there.
    """
    V = [float(v) for v in np.atleast_1d(V)]
    V1 = [float(v) for v in np.atleast_1d(V1)]
    spec = GroupSpec("Torus", s)
    dense = is_dense_couple(spec, torus_element(spec, V), torus_element(spec, V1))
    X = product_field(k, s, V)
    h = dsl.Jet5(k) if h is None else h
    validate_jet(h, k)
    X1 = product_field_X1(k, s, vertical_field(k, s, V1), h, X, validate=False)
    chart = Chart.product(k, s)
    scalars = [dsl.mul(m, _mode_expr(*f)) for m in _x_monomials(k, deg_x) for f in _fourier_modes(s, max_freq)]
    d = k + s
    nunk = len(scalars) * d
    if nunk > max_unknowns:
        raise ValueError(f"truncated basis too large ({nunk} unknowns)")
    basis_fields = []
    for c in scalars:
        for i in range(d):
            comps = [dsl.ZERO] * d
            comps[i] = c
            basis_fields.append(VFieldExpr(chart, tuple(comps)))

    rng = np.random.default_rng([seed, 31])
    n_coll = 2 * nunk // d + 20
    coll = np.hstack([rng.uniform(-1.0, 1.0, (n_coll, k)), rng.uniform(0.0, 2 * np.pi, (n_coll, s))])
    n_theta = 2 * max_freq + 3
    theta = np.hstack([np.zeros((n_theta * 2, k)), rng.uniform(0.0, 2 * np.pi, (n_theta * 2, s))])

    cols = []
    for B in basis_fields:
        ba = dsl.lie_bracket_fields(X, B)
        bb = dsl.lie_bracket_fields(X1, B)
        col_a = ba.evaluate(coll).ravel()
        col_b0 = bb.evaluate(theta).ravel()
        derivs = [dsl.differentiate(bb.components[i], f"x{j + 1}") for i in range(k) for j in range(k)]
        col_b1 = dsl.eval_many(derivs, chart, theta).ravel()
        cols.append(np.concatenate([col_a, col_b0, col_b1]))
    M = np.stack(cols, axis=1)
    M = M / np.maximum(np.linalg.norm(M, axis=1, keepdims=True), 1e-300)
    K = nullspace(M)
    from detvec.autcheck import _rref

    R = _rref(K.T) if K.shape[1] else np.zeros((0, nunk))
    basis = []
    for row in R:
        comps = [dsl.ZERO] * d
        for coef, B in zip(row, basis_fields):
            if coef == 0.0:
                continue
            i = next(j for j, c in enumerate(B.components) if c != dsl.ZERO)
            comps[i] = dsl.add(comps[i], dsl.mul(Const(_round(coef)), B.components[i]))
        basis.append(VFieldExpr(chart, tuple(comps)))
    return NullspaceResult(len(basis), basis, dense, nunk, k * k + s)


def _round(c: float):
    from fractions import Fraction

    q = Fraction(c).limit_denominator(1000)
    return q if abs(float(q) - c) < 1e-9 else c


# ------------------------------------------------------------ rigidity


@dataclass
class RigidityResult:
    scale: float
    sup_difference: float
    fifth_derivative: float
    preserves: bool


def scaling_rigidity(h: Expr | None = None, scales=(0.5, 0.9, 1.0, 1.1, 2.0), radius: float = 0.2, n_points: int = 401):
    """Compare ``h(a x)`` with ``h(x)`` on ``|x| <= radius`` for each scaling ``a``.

    Also reports ``d^5/dx1^5 [h(a x)]`` at the origin, which equals
    ``a^5 d^5 h/dx1^5 (0)`` and so singles out ``a = 1`` when the 5-jet of
    ``h`` is nonzero.
    """
    h = dsl.Jet5(1) if h is None else h
    chart = Chart.euclidean(1)
    xs = np.linspace(-radius, radius, n_points).reshape(-1, 1)
    base = dsl.eval_scalar(h, chart, xs)
    out = []
    for a in scales:
        ha = dsl.substitute(h, {"x1": dsl.mul(Const(a), Var("x1"))})
        diff = float(np.max(np.abs(dsl.eval_scalar(ha, chart, xs) - base)))
        d5 = ha
        for _ in range(5):
            d5 = dsl.differentiate(d5, "x1")
        fifth = float(dsl.eval_scalar(d5, chart, np.zeros((1, 1)))[0])
        out.append(RigidityResult(float(a), diff, fifth, diff < 1e-10))
    return out

"""Expression trees for scalar functions, vector fields and maps on charts.

Scalars are immutable trees of :class:`Expr` nodes over chart coordinates
``x1..xk`` (and angles ``t1..ts`` on ``R^k x T^s``).  Differentiation is exact
and symbolic; the only numeric ingredient is the Taylor-jet evaluation of the
plateau profile's derivatives.  Evaluation is vectorised over batches of
points.

Grammar (printed forms re-parse to identical trees)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ["^" ["-"] INT]
    atom   := NUMBER | IDENT | call | "(" expr ")" | "[" expr ("," expr)* "]"
    call   := IDENT "(" [expr (("," | ";") expr)*] ")"

Functions: ``norm2(x)``, ``jet5(x)``, ``plateau(e, a, b, c, d)``,
``dplateau(n, e, a, b, c, d)``, ``sin(e)``, ``cos(e)``.  Vector-valued
constructors: ``radial()``, ``Jfield()``, ``Kfield()``, ``Lfield()`` and
bracketed component lists.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from detvec import _jets


class DSLError(ValueError):
    pass


class DSLSyntaxError(DSLError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class DomainError(DSLError):
    """Evaluation outside the declared domain of a field or map."""


# ------------------------------------------------------------------- charts


@dataclass(frozen=True)
class Chart:
    """``Euclidean(m)`` (``s == 0``) or ``ProductRT(k, s)`` = ``R^k x T^s``."""

    k: int
    s: int = 0

    def __post_init__(self):
        if self.k < 0 or self.s < 0 or self.k + self.s == 0:
            raise DSLError(f"bad chart dimensions ({self.k}, {self.s})")

    @classmethod
    def euclidean(cls, m: int) -> "Chart":
        return cls(m, 0)

    @classmethod
    def product(cls, k: int, s: int) -> "Chart":
        if s < 1:
            raise DSLError("ProductRT needs s >= 1")
        return cls(k, s)

    @classmethod
    def parse(cls, text: str) -> "Chart":
        m = re.fullmatch(r"\s*Euclidean\(\s*(\d+)\s*\)\s*", text)
        if m:
            return cls.euclidean(int(m.group(1)))
        m = re.fullmatch(r"\s*ProductRT\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*", text)
        if m:
            return cls.product(int(m.group(1)), int(m.group(2)))
        raise DSLError(f"unknown chart {text!r}")

    @property
    def dim(self) -> int:
        return self.k + self.s

    @property
    def is_product(self) -> bool:
        return self.s > 0

    @cached_property
    def variables(self) -> tuple[str, ...]:
        return tuple(f"x{i + 1}" for i in range(self.k)) + tuple(f"t{i + 1}" for i in range(self.s))

    def __str__(self):
        return f"ProductRT({self.k},{self.s})" if self.is_product else f"Euclidean({self.k})"

    def reduce(self, points: np.ndarray) -> np.ndarray:
        """Reduce angle coordinates mod 2 pi."""
        if not self.s:
            return points
        out = np.array(points, dtype=float, copy=True)
        out[..., self.k :] = np.mod(out[..., self.k :], 2 * np.pi)
        return out


# -------------------------------------------------------------------- nodes


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            raise DSLError(f"non-finite constant {v}")
        return Fraction(repr(float(v)))
    if isinstance(v, str):
        return Fraction(v)
    raise DSLError(f"cannot make a constant from {v!r}")


def _fmt_frac(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    d = q.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d == 1:
        digits = max(twos, fives)
        scaled = abs(q.numerator) * (10**digits // q.denominator)
        body = str(scaled).rjust(digits + 1, "0")
        text = body[:-digits] + "." + body[-digits:]
        return ("-" if q < 0 else "") + text
    return f"({q.numerator}/{q.denominator})"


class Expr:
    """Base class of scalar expression nodes (immutable, hashable)."""

    prec = 5
    __slots__ = ("_hash", "_dcache", "__weakref__")

    def _key(self) -> tuple:
        raise NotImplementedError

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__,) + self._key())
            object.__setattr__(self, "_hash", h)
            return h

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or hash(self) != hash(other):
            return False
        return self._key() == other._key()

    def __repr__(self):
        return f"{type(self).__name__}({to_text(self)!r})"

    def __str__(self):
        return to_text(self)

    # arithmetic sugar
    def __add__(self, o):
        return add(self, as_expr(o))

    def __radd__(self, o):
        return add(as_expr(o), self)

    def __sub__(self, o):
        return sub(self, as_expr(o))

    def __rsub__(self, o):
        return sub(as_expr(o), self)

    def __mul__(self, o):
        return mul(self, as_expr(o))

    def __rmul__(self, o):
        return mul(as_expr(o), self)

    def __truediv__(self, o):
        return div(self, as_expr(o))

    def __rtruediv__(self, o):
        return div(as_expr(o), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return power(self, n)


class Const(Expr):
    __slots__ = ("value", "fvalue")

    def __init__(self, value):
        self.value = _frac(value)
        self.fvalue = float(self.value)

    def _key(self):
        return (self.value,)

    @property
    def prec(self):
        return 3 if self.value < 0 else 5


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def _key(self):
        return (self.name,)


class Norm2(Expr):
    """Squared Euclidean norm of the ``x`` block (``k`` coordinates)."""

    __slots__ = ("k",)

    def __init__(self, k: int):
        self.k = k

    def _key(self):
        return (self.k,)


class Jet5(Expr):
    """Compactly supported function of ``x`` with vanishing 4-jet and non-zero 5-jet at 0.

    Expands to ``x1^5 * plateau(norm2(x), -2, -1, 1/4, 1)``.
    """

    __slots__ = ("k",)

    def __init__(self, k: int):
        self.k = k

    def _key(self):
        return (self.k,)

    def expansion(self) -> Expr:
        return mul(power(Var("x1"), 5), Plateau(Norm2(self.k), -2, -1, Fraction(1, 4), 1))


class Unary(Expr):
    __slots__ = ("arg",)
    fname = ""

    def __init__(self, arg: Expr):
        self.arg = arg

    def _key(self):
        return (self.arg,)


class Neg(Unary):
    __slots__ = ()
    prec = 3


class Sin(Unary):
    __slots__ = ()
    fname = "sin"


class Cos(Unary):
    __slots__ = ()
    fname = "cos"


class Binary(Expr):
    __slots__ = ("a", "b")
    op = ""

    def __init__(self, a: Expr, b: Expr):
        self.a = a
        self.b = b

    def _key(self):
        return (self.a, self.b)


class Add(Binary):
    __slots__ = ()
    prec, op = 1, "+"


class Sub(Binary):
    __slots__ = ()
    prec, op = 1, "-"


class Mul(Binary):
    __slots__ = ()
    prec, op = 2, "*"


class Div(Binary):
    __slots__ = ()
    prec, op = 2, "/"


class Pow(Expr):
    __slots__ = ("base", "n")
    prec = 4

    def __init__(self, base: Expr, n: int):
        self.base = base
        self.n = int(n)

    def _key(self):
        return (self.base, self.n)


class Plateau(Expr):
    """``order``-th derivative of the plateau profile evaluated at ``arg``."""

    __slots__ = ("arg", "params", "order")

    def __init__(self, arg: Expr, a, b, c, d, order: int = 0):
        params = tuple(_frac(v) for v in (a, b, c, d))
        if not (params[0] < params[1] <= params[2] < params[3]):
            raise DSLError(f"plateau needs a < b <= c < d, got {[str(p) for p in params]}")
        self.arg = arg
        self.params = params
        self.order = int(order)

    def _key(self):
        return (self.arg, self.params, self.order)


ScalarExpr = Expr

ZERO = Const(0)
ONE = Const(1)


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(v)


def _is_const(e, value=None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# ------------------------------------------------ simplifying constructors


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    if isinstance(b, Neg):
        return Sub(a, b.arg)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return neg(b)
    if a == b:
        return ZERO
    return Sub(a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    if _is_const(a, -1):
        return neg(b)
    if _is_const(b, -1):
        return neg(a)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0):
        raise DSLError("division by the constant 0")
    if _is_const(a) and _is_const(b):
        return Const(a.value / b.value)
    if _is_const(a, 0):
        return ZERO
    if _is_const(b, 1):
        return a
    return Div(a, b)


def power(a: Expr, n: int) -> Expr:
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if _is_const(a):
        if a.value == 0 and n < 0:
            raise DSLError("0 raised to a negative power")
        return Const(a.value**n)
    return Pow(a, n)


def sin(a: Expr) -> Expr:
    return Sin(a)


def cos(a: Expr) -> Expr:
    return Cos(a)


# ------------------------------------------------------------------ printer


def to_text(e: Expr) -> str:
    if isinstance(e, Const):
        return _fmt_frac(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Norm2):
        return "norm2(x)"
    if isinstance(e, Jet5):
        return "jet5(x)"
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, e.arg.prec < 3)
    if isinstance(e, (Sin, Cos)):
        return f"{e.fname}({to_text(e.arg)})"
    if isinstance(e, Binary):
        left = _wrap(e.a, e.a.prec < e.prec)
        right = _wrap(e.b, e.b.prec <= e.prec)
        return f"{left} {e.op} {right}"
    if isinstance(e, Pow):
        return f"{_wrap(e.base, e.base.prec <= 4)}^{e.n}"
    if isinstance(e, Plateau):
        ps = ", ".join(_fmt_param(p) for p in e.params)
        if e.order == 0:
            return f"plateau({to_text(e.arg)}, {ps})"
        return f"dplateau({e.order}, {to_text(e.arg)}, {ps})"
    raise DSLError(f"cannot print {type(e).__name__}")


def _fmt_param(q: Fraction) -> str:
    return _fmt_frac(q)


def _wrap(e: Expr, paren: bool) -> str:
    text = to_text(e)
    if paren and not (text.startswith("(") and isinstance(e, Const)):
        return f"({text})"
    return text


# ---------------------------------------------------------- differentiation


def _var_name(var, chart: Chart | None = None) -> str:
    if isinstance(var, str):
        return var
    if chart is None:
        return f"x{int(var) + 1}"
    return chart.variables[int(var)]


def differentiate(e: Expr, var, chart: Chart | None = None) -> Expr:
    """Exact partial derivative with respect to a coordinate.

    ``var`` is a coordinate name (``"x2"``, ``"t1"``) or a 0-based index into
    ``chart.variables`` (into ``x1, x2, ...`` when no chart is given).
    """
    name = _var_name(var, chart)
    return _diff(e, name)


def _diff(e: Expr, v: str) -> Expr:
    try:
        cache = e._dcache
    except AttributeError:
        cache = {}
        object.__setattr__(e, "_dcache", cache)
    if v in cache:
        return cache[v]
    out = _diff_raw(e, v)
    cache[v] = out
    return out


def _diff_raw(e: Expr, v: str) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Norm2):
        if v.startswith("x") and int(v[1:]) <= e.k:
            return mul(Const(2), Var(v))
        return ZERO
    if isinstance(e, Jet5):
        return _diff(e.expansion(), v)
    if isinstance(e, Neg):
        return neg(_diff(e.arg, v))
    if isinstance(e, Add):
        return add(_diff(e.a, v), _diff(e.b, v))
    if isinstance(e, Sub):
        return sub(_diff(e.a, v), _diff(e.b, v))
    if isinstance(e, Mul):
        return add(mul(_diff(e.a, v), e.b), mul(e.a, _diff(e.b, v)))
    if isinstance(e, Div):
        da, db = _diff(e.a, v), _diff(e.b, v)
        if _is_const(db, 0):
            return div(da, e.b)
        return div(sub(mul(da, e.b), mul(e.a, db)), power(e.b, 2))
    if isinstance(e, Pow):
        db = _diff(e.base, v)
        if _is_const(db, 0):
            return ZERO
        return mul(mul(Const(e.n), power(e.base, e.n - 1)), db)
    if isinstance(e, Sin):
        return mul(Cos(e.arg), _diff(e.arg, v))
    if isinstance(e, Cos):
        return neg(mul(Sin(e.arg), _diff(e.arg, v)))
    if isinstance(e, Plateau):
        da = _diff(e.arg, v)
        if _is_const(da, 0):
            return ZERO
        return mul(Plateau(e.arg, *e.params, order=e.order + 1), da)
    raise DSLError(f"cannot differentiate {type(e).__name__}")


def free_variables(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, (Norm2, Jet5)):
        return frozenset(f"x{i + 1}" for i in range(e.k))
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, (Unary, Plateau)):
        return free_variables(e.arg)
    if isinstance(e, Binary):
        return free_variables(e.a) | free_variables(e.b)
    if isinstance(e, Pow):
        return free_variables(e.base)
    raise DSLError(f"unknown node {type(e).__name__}")


def substitute(e: Expr, mapping: dict[str, Expr]) -> Expr:
    """Replace coordinates by expressions (used to compose with maps)."""
    memo: dict[int, Expr] = {}

    def go(n: Expr) -> Expr:
        key = id(n)
        if key in memo:
            return memo[key]
        if isinstance(n, Const):
            out = n
        elif isinstance(n, Var):
            out = mapping.get(n.name, n)
        elif isinstance(n, Norm2):
            out = ZERO
            for i in range(n.k):
                out = add(out, power(mapping.get(f"x{i + 1}", Var(f"x{i + 1}")), 2))
        elif isinstance(n, Jet5):
            out = go(n.expansion())
        elif isinstance(n, Neg):
            out = neg(go(n.arg))
        elif isinstance(n, Sin):
            out = Sin(go(n.arg))
        elif isinstance(n, Cos):
            out = Cos(go(n.arg))
        elif isinstance(n, Add):
            out = add(go(n.a), go(n.b))
        elif isinstance(n, Sub):
            out = sub(go(n.a), go(n.b))
        elif isinstance(n, Mul):
            out = mul(go(n.a), go(n.b))
        elif isinstance(n, Div):
            out = div(go(n.a), go(n.b))
        elif isinstance(n, Pow):
            out = power(go(n.base), n.n)
        elif isinstance(n, Plateau):
            out = Plateau(go(n.arg), *n.params, order=n.order)
        else:
            raise DSLError(f"unknown node {type(n).__name__}")
        memo[key] = out
        return out

    return go(e)


# --------------------------------------------------------------- evaluation


def _env(chart: Chart, points: np.ndarray) -> dict[str, np.ndarray]:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != chart.dim:
        raise DSLError(f"points have {pts.shape[-1]} coordinates, chart {chart} needs {chart.dim}")
    pts = chart.reduce(pts)
    return {name: pts[:, i] for i, name in enumerate(chart.variables)} | {"__n__": pts.shape[0]}


def _eval(e: Expr, env: dict, memo: dict) -> np.ndarray:
    key = id(e)
    if key in memo:
        return memo[key]
    n = env["__n__"]
    if isinstance(e, Const):
        out = np.full(n, e.fvalue)
    elif isinstance(e, Var):
        if e.name not in env:
            raise DSLError(f"unknown coordinate {e.name}")
        out = env[e.name]
    elif isinstance(e, Norm2):
        if "__norm2__" not in env:
            env["__norm2__"] = sum(env[f"x{i + 1}"] ** 2 for i in range(e.k))
        out = env["__norm2__"]
    elif isinstance(e, Jet5):
        out = _eval(e.expansion(), env, memo)
    elif isinstance(e, Neg):
        out = -_eval(e.arg, env, memo)
    elif isinstance(e, Sin):
        out = np.sin(_eval(e.arg, env, memo))
    elif isinstance(e, Cos):
        out = np.cos(_eval(e.arg, env, memo))
    elif isinstance(e, Add):
        out = _eval(e.a, env, memo) + _eval(e.b, env, memo)
    elif isinstance(e, Sub):
        out = _eval(e.a, env, memo) - _eval(e.b, env, memo)
    elif isinstance(e, Mul):
        out = _eval(e.a, env, memo) * _eval(e.b, env, memo)
    elif isinstance(e, Div):
        out = _eval(e.a, env, memo) / _eval(e.b, env, memo)
    elif isinstance(e, Pow):
        base = _eval(e.base, env, memo)
        out = base**e.n if e.n > 0 else 1.0 / base ** (-e.n)
    elif isinstance(e, Plateau):
        a, b, c, d = (float(p) for p in e.params)
        out = _jets.plateau(_eval(e.arg, env, memo), a, b, c, d, e.order)
    else:
        raise DSLError(f"cannot evaluate {type(e).__name__}")
    memo[key] = out
    return out


def eval_scalar(e: Expr, chart: Chart, points) -> np.ndarray:
    """Evaluate on a batch of points; returns shape ``(N,)``."""
    env = _env(chart, points)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.array(_eval(e, env, {}), dtype=float)


def eval_many(exprs, chart: Chart, points) -> np.ndarray:
    """Evaluate several expressions sharing one memo; shape ``(N, len(exprs))``."""
    env = _env(chart, points)
    memo: dict = {}
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        cols = [np.broadcast_to(_eval(e, env, memo), (env["__n__"],)) for e in exprs]
    return np.stack(cols, axis=1) if cols else np.zeros((env["__n__"], 0))


# ------------------------------------------------------ fields and maps


def _check_domain(punctured: bool, chart: Chart, points: np.ndarray, what: str):
    if not punctured:
        return
    xs = np.atleast_2d(points)[:, : chart.k]
    bad = np.linalg.norm(xs, axis=1) < 1e-12
    if np.any(bad):
        raise DomainError(f"{what} is not defined at the origin (points {np.flatnonzero(bad).tolist()})")


def domain_mask(obj, points) -> np.ndarray:
    """Boolean mask of points inside the declared domain of a field or map."""
    pts = np.atleast_2d(np.asarray(points, float))
    if not getattr(obj, "punctured", False):
        return np.ones(pts.shape[0], bool)
    return np.linalg.norm(pts[:, : obj.chart.k], axis=1) >= 1e-12


@dataclass(frozen=True, eq=False)
class VFieldExpr:
    chart: Chart
    components: tuple[Expr, ...]
    punctured: bool = False
    name: str = ""

    def __post_init__(self):
        comps = tuple(as_expr(c) for c in self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) != self.chart.dim:
            raise DSLError(f"field has {len(comps)} components, chart {self.chart} needs {self.chart.dim}")
        allowed = set(self.chart.variables)
        for c in comps:
            extra = free_variables(c) - allowed
            if extra:
                raise DSLError(f"unknown coordinates {sorted(extra)} on {self.chart}")

    def __eq__(self, other):
        return (
            isinstance(other, VFieldExpr)
            and self.chart == other.chart
            and self.components == other.components
            and self.punctured == other.punctured
        )

    def __hash__(self):
        return hash((self.chart, self.components, self.punctured))

    def __str__(self):
        return "[" + ", ".join(to_text(c) for c in self.components) + "]"

    @property
    def label(self) -> str:
        return self.name or str(self)

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(points)

    def evaluate(self, points) -> np.ndarray:
        pts = np.asarray(points, float)
        single = pts.ndim == 1
        _check_domain(self.punctured, self.chart, np.atleast_2d(pts), self.label)
        out = eval_many(self.components, self.chart, np.atleast_2d(pts))
        return out[0] if single else out

    @cached_property
    def jacobian_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        return tuple(tuple(_diff(c, v) for v in self.chart.variables) for c in self.components)

    def jacobian(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        flat = [e for row in self.jacobian_exprs for e in row]
        vals = eval_many(flat, self.chart, pts)
        return vals.reshape(pts.shape[0], self.chart.dim, self.chart.dim)

    # linear structure
    def __add__(self, other: "VFieldExpr") -> "VFieldExpr":
        _same_chart(self, other)
        return VFieldExpr(self.chart, tuple(add(a, b) for a, b in zip(self.components, other.components)), self.punctured or other.punctured)

    def __sub__(self, other: "VFieldExpr") -> "VFieldExpr":
        _same_chart(self, other)
        return VFieldExpr(self.chart, tuple(sub(a, b) for a, b in zip(self.components, other.components)), self.punctured or other.punctured)

    def scale(self, f) -> "VFieldExpr":
        f = as_expr(f)
        return VFieldExpr(self.chart, tuple(mul(f, c) for c in self.components), self.punctured)

    def __neg__(self):
        return VFieldExpr(self.chart, tuple(neg(c) for c in self.components), self.punctured)

    def periodicity_residual(self, n_points: int = 50, seed: int = 0) -> float:
        """Max change of the components under ``t_j -> t_j + 2 pi`` at sampled points."""
        if not self.chart.s:
            return 0.0
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-2, 2, (n_points, self.chart.dim))
        base = self.evaluate(pts)
        worst = 0.0
        for j in range(self.chart.s):
            # evaluate the raw tree without angle reduction
            env = {name: pts[:, i] for i, name in enumerate(self.chart.variables)} | {"__n__": n_points}
            env[self.chart.variables[self.chart.k + j]] = pts[:, self.chart.k + j] + 2 * np.pi
            raw0 = {name: pts[:, i] for i, name in enumerate(self.chart.variables)} | {"__n__": n_points}
            memo1, memo0 = {}, {}
            v1 = np.stack([np.broadcast_to(_eval(c, env, memo1), (n_points,)) for c in self.components], 1)
            v0 = np.stack([np.broadcast_to(_eval(c, raw0, memo0), (n_points,)) for c in self.components], 1)
            worst = max(worst, float(np.max(np.abs(v1 - v0))))
        del base
        return worst


def _same_chart(a, b):
    if a.chart != b.chart:
        raise DSLError(f"chart mismatch: {a.chart} vs {b.chart}")


@dataclass(frozen=True, eq=False)
class MapExpr:
    """A smooth self-map of a chart.  ``matrix`` is set for linear maps."""

    chart: Chart
    components: tuple[Expr, ...]
    matrix: np.ndarray | None = None
    punctured: bool = False
    name: str = ""

    def __post_init__(self):
        comps = tuple(as_expr(c) for c in self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) != self.chart.dim:
            raise DSLError(f"map has {len(comps)} components, chart {self.chart} needs {self.chart.dim}")
        if self.matrix is not None:
            m = np.array(self.matrix, dtype=float)
            m.setflags(write=False)
            object.__setattr__(self, "matrix", m)

    @property
    def is_linear(self) -> bool:
        return self.matrix is not None

    @property
    def tag(self) -> str:
        return "Linear" if self.is_linear else "Nonlinear"

    @property
    def label(self) -> str:
        return self.name or ("[" + ", ".join(to_text(c) for c in self.components) + "]")

    def __str__(self):
        return "[" + ", ".join(to_text(c) for c in self.components) + "]"

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(points)

    def evaluate(self, points, symbolic: bool = False) -> np.ndarray:
        pts = np.asarray(points, float)
        single = pts.ndim == 1
        pts2 = np.atleast_2d(pts)
        _check_domain(self.punctured, self.chart, pts2, self.label)
        if self.is_linear and not symbolic:
            out = pts2 @ self.matrix.T
        else:
            out = eval_many(self.components, self.chart, pts2)
        out = self.chart.reduce(out)
        return out[0] if single else out

    @cached_property
    def jacobian_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        return tuple(tuple(_diff(c, v) for v in self.chart.variables) for c in self.components)

    def jacobian(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        n, d = pts.shape[0], self.chart.dim
        if self.is_linear:
            return np.broadcast_to(self.matrix, (n, d, d)).copy()
        flat = [e for row in self.jacobian_exprs for e in row]
        return eval_many(flat, self.chart, pts).reshape(n, d, d)

    def compose(self, inner: "MapExpr") -> "MapExpr":
        """``self o inner``."""
        _same_chart(self, inner)
        mapping = dict(zip(self.chart.variables, inner.components))
        comps = tuple(substitute(c, mapping) for c in self.components)
        mat = self.matrix @ inner.matrix if self.is_linear and inner.is_linear else None
        return MapExpr(self.chart, comps, mat, self.punctured or inner.punctured, "")

    def linearity_residual(self, n_points: int = 100, seed: int = 0) -> float:
        """For linear maps: max gap between symbolic components and the stored matrix."""
        if not self.is_linear:
            raise DSLError("map is not tagged Linear")
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((n_points, self.chart.dim))
        return float(np.max(np.abs(self.evaluate(pts, symbolic=True) - pts @ self.matrix.T)))


def linear_map(matrix, chart: Chart | None = None, name: str = "") -> MapExpr:
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DSLError(f"linear map needs a square matrix, got {A.shape}")
    chart = chart or Chart.euclidean(A.shape[0])
    if chart.s:
        raise DSLError("linear maps live on Euclidean charts")
    comps = []
    for row in A:
        e = ZERO
        for j, a in enumerate(row):
            if a != 0.0:
                e = add(e, mul(Const(a), Var(f"x{j + 1}")))
        comps.append(e)
    return MapExpr(chart, tuple(comps), A, False, name)


def identity_map(chart: Chart) -> MapExpr:
    if chart.s:
        return MapExpr(chart, tuple(Var(v) for v in chart.variables), None, False, "identity")
    return linear_map(np.eye(chart.dim), chart, "identity")


# ------------------------------------------------ residuals and brackets


def evaluate(f, points):
    """Evaluate a scalar, field or map at one point or a batch."""
    if isinstance(f, (VFieldExpr, MapExpr)):
        return f.evaluate(points)
    raise DSLError("scalar evaluation needs a chart; use eval_scalar")


def pushforward_residual(F: MapExpr, X: VFieldExpr, points) -> np.ndarray:
    """``DF(p) X(p) - X(F(p))``; zero everywhere iff ``F`` preserves ``X``."""
    _same_chart(F, X)
    pts = np.asarray(points, float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    DF = F.jacobian(pts)
    Xp = X.evaluate(pts)
    XF = X.evaluate(F.evaluate(pts))
    R = np.einsum("nij,nj->ni", DF, Xp) - XF
    return R[0] if single else R


def lie_bracket_fields(X: VFieldExpr, Y: VFieldExpr) -> VFieldExpr:
    """``[X, Y]_i = sum_j X_j d_j Y_i - Y_j d_j X_i``."""
    _same_chart(X, Y)
    vs = X.chart.variables
    comps = []
    for i in range(X.chart.dim):
        acc = ZERO
        for j, v in enumerate(vs):
            acc = add(acc, mul(X.components[j], _diff(Y.components[i], v)))
            acc = sub(acc, mul(Y.components[j], _diff(X.components[i], v)))
        comps.append(acc)
    return VFieldExpr(X.chart, tuple(comps), X.punctured or Y.punctured)


# ------------------------------------------------------------------- parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),;\[\]]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            p = pos
            while p < len(text) and text[p].isspace():
                p += 1
            raise DSLSyntaxError(f"unexpected character {text[p]!r}", p)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), start))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


@dataclass
class _Vec:
    comps: tuple[Expr, ...]
    punctured: bool = False


_SCALAR_FUNCS = {"sin": 1, "cos": 1, "norm2": 1, "jet5": 1, "plateau": 5, "dplateau": 6}
_FIELD_FUNCS = ("radial", "Jfield", "Kfield", "Lfield")


class _Parser:
    def __init__(self, text: str, chart: Chart):
        self.text = text
        self.chart = chart
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self, text: str | None = None) -> _Tok:
        t = self.tok
        if text is not None and t.text != text:
            what = "end of input" if t.kind == "end" else repr(t.text)
            raise DSLSyntaxError(f"expected {text!r}, found {what}", t.pos)
        self.i += 1
        return t

    def parse(self):
        v = self.expr()
        if self.tok.kind != "end":
            raise DSLSyntaxError(f"unexpected {self.tok.text!r}", self.tok.pos)
        return v

    def expr(self):
        left = self.term()
        while self.tok.text in ("+", "-"):
            op = self.take()
            right = self.term()
            left = self.combine(op, left, right)
        return left

    def term(self):
        left = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.take()
            right = self.unary()
            left = self.combine(op, left, right)
        return left

    def unary(self):
        if self.tok.text == "-":
            self.take()
            v = self.unary()
            if isinstance(v, _Vec):
                return _Vec(tuple(neg(c) for c in v.comps), v.punctured)
            return neg(v)
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.text == "^":
            op = self.take()
            sign = 1
            if self.tok.text == "-":
                self.take()
                sign = -1
            t = self.tok
            if t.kind != "num" or not t.text.isdigit():
                raise DSLSyntaxError("exponent must be an integer", t.pos)
            self.take()
            if isinstance(base, _Vec):
                raise DSLSyntaxError("cannot raise a vector field to a power", op.pos)
            base = power(base, sign * int(t.text))
        return base

    def combine(self, op: _Tok, a, b):
        va, vb = isinstance(a, _Vec), isinstance(b, _Vec)
        o = op.text
        if o in "+-":
            if va != vb:
                raise DSLSyntaxError("cannot add a scalar and a vector field", op.pos)
            if va:
                if len(a.comps) != len(b.comps):
                    raise DSLSyntaxError("dimension mismatch", op.pos)
                f = add if o == "+" else sub
                return _Vec(tuple(f(x, y) for x, y in zip(a.comps, b.comps)), a.punctured or b.punctured)
            return add(a, b) if o == "+" else sub(a, b)
        if o == "*":
            if va and vb:
                raise DSLSyntaxError("cannot multiply two vector fields", op.pos)
            if va:
                return _Vec(tuple(mul(c, b) for c in a.comps), a.punctured)
            if vb:
                return _Vec(tuple(mul(a, c) for c in b.comps), b.punctured)
            return mul(a, b)
        if vb:
            raise DSLSyntaxError("cannot divide by a vector field", op.pos)
        try:
            if va:
                return _Vec(tuple(div(c, b) for c in a.comps), a.punctured)
            return div(a, b)
        except DSLError as exc:
            raise DSLSyntaxError(str(exc), op.pos) from None

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.take()
            return Const(Fraction(t.text))
        if t.text == "(":
            self.take()
            v = self.expr()
            self.take(")")
            return v
        if t.text == "[":
            self.take()
            comps = [self.scalar_arg()]
            while self.tok.text == ",":
                self.take()
                comps.append(self.scalar_arg())
            self.take("]")
            return _Vec(tuple(comps))
        if t.kind == "id":
            self.take()
            if self.tok.text == "(":
                return self.call(t)
            return self.ident(t)
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise DSLSyntaxError(f"unexpected {what}", t.pos)

    def scalar_arg(self) -> Expr:
        t = self.tok
        v = self.expr()
        if isinstance(v, _Vec):
            raise DSLSyntaxError("expected a scalar", t.pos)
        return v

    def ident(self, t: _Tok) -> Expr:
        if t.text in self.chart.variables:
            return Var(t.text)
        if t.text == "x":
            raise DSLSyntaxError("'x' is only allowed as the argument of norm2/jet5", t.pos)
        raise DSLSyntaxError(f"unknown identifier {t.text!r}", t.pos)

    def call(self, t: _Tok):
        name = t.text
        self.take("(")
        if name in _FIELD_FUNCS:
            self.take(")")
            return self.named_field(name, t.pos)
        if name not in _SCALAR_FUNCS:
            raise DSLSyntaxError(f"unknown function {name!r}", t.pos)
        if name in ("norm2", "jet5"):
            a = self.tok
            if a.text != "x":
                raise DSLSyntaxError(f"{name} takes the argument 'x'", a.pos)
            self.take()
            self.take(")")
            if self.chart.k < 1:
                raise DSLSyntaxError(f"{name} needs x coordinates", t.pos)
            return Norm2(self.chart.k) if name == "norm2" else Jet5(self.chart.k)
        args = []
        if self.tok.text != ")":
            args.append(self.scalar_arg())
            while self.tok.text in (",", ";"):
                self.take()
                args.append(self.scalar_arg())
        self.take(")")
        if len(args) != _SCALAR_FUNCS[name]:
            raise DSLSyntaxError(f"{name} takes {_SCALAR_FUNCS[name]} arguments, got {len(args)}", t.pos)
        if name == "sin":
            return Sin(args[0])
        if name == "cos":
            return Cos(args[0])
        order = 0
        if name == "dplateau":
            if not isinstance(args[0], Const) or args[0].value.denominator != 1 or args[0].value < 1:
                raise DSLSyntaxError("dplateau order must be a positive integer", t.pos)
            order = int(args[0].value)
            args = args[1:]
        params = args[1:]
        if not all(isinstance(p, Const) for p in params):
            raise DSLSyntaxError("plateau parameters must be constants", t.pos)
        try:
            return Plateau(args[0], *(p.value for p in params), order=order)
        except DSLError as exc:
            raise DSLSyntaxError(str(exc), t.pos) from None

    def named_field(self, name: str, pos: int) -> _Vec:
        from detvec import constructions

        try:
            f = constructions.named_field(name, self.chart)
        except DSLError as exc:
            raise DSLSyntaxError(str(exc), pos) from None
        return _Vec(f.components, f.punctured)


def _check_angles(e: Expr, chart: Chart, inside_trig: bool = False):
    """Angles may appear only inside sin/cos with integer coefficients."""
    if isinstance(e, Var):
        if e.name.startswith("t") and not inside_trig:
            raise DSLError(f"angle {e.name} must appear inside sin/cos")
        return
    if isinstance(e, (Sin, Cos)):
        for j in range(chart.s):
            d = _diff(e.arg, f"t{j + 1}")
            if not isinstance(d, Const) or d.value.denominator != 1:
                raise DSLError(f"sin/cos argument must be an integer combination of angles, got d/dt{j + 1} = {d}")
        _check_angles(e.arg, chart, True)
        return
    if isinstance(e, (Unary, Plateau)):
        _check_angles(e.arg, chart, inside_trig)
    elif isinstance(e, Binary):
        _check_angles(e.a, chart, inside_trig)
        _check_angles(e.b, chart, inside_trig)
    elif isinstance(e, Pow):
        _check_angles(e.base, chart, inside_trig)


def parse_scalar(text: str, chart: Chart) -> Expr:
    v = _Parser(text, chart).parse()
    if isinstance(v, _Vec):
        raise DSLSyntaxError("expected a scalar expression, got a vector field", 0)
    if chart.s:
        _check_angles(v, chart)
    return v


def parse_field(text: str, chart: Chart, name: str = "") -> VFieldExpr:
    """Parse a vector field; errors carry the character offset."""
    v = _Parser(text, chart).parse()
    if not isinstance(v, _Vec):
        raise DSLSyntaxError("expected a vector field, got a scalar expression", 0)
    if len(v.comps) != chart.dim:
        raise DSLError(f"dimension mismatch: {len(v.comps)} components on {chart}")
    if chart.s:
        for c in v.comps:
            _check_angles(c, chart)
    return VFieldExpr(chart, v.comps, v.punctured, name)


def parse_map(text: str, chart: Chart, name: str = "") -> MapExpr:
    """Parse a map given as a component list; angle components may add bare angles."""
    v = _Parser(text, chart).parse()
    if not isinstance(v, _Vec) or len(v.comps) != chart.dim:
        raise DSLError(f"a map on {chart} needs {chart.dim} components")
    return MapExpr(chart, v.comps, None, False, name)

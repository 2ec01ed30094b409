"""Compact matrix Lie groups and their Lie algebras.

Groups are described by a :class:`GroupSpec` (family plus parameter).  Elements
are plain numpy matrices wrapped in :class:`AlgebraElement` /
:class:`GroupElement` so that membership can be checked against the owning
spec.  Complex families (U, SU, tori) act on ``C^n``; their real form acts on
``R^{2n}`` with ``z_j = x_{2j-1} + i x_{2j}``, which matches the complex
structure ``J`` used throughout the package.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from itertools import combinations

import numpy as np
import scipy.linalg

FAMILIES = ("SO", "O", "SU", "U", "Sp", "Torus", "ProductRT")
_COMPLEX = {"SU", "U", "Torus", "ProductRT"}

RANK_RTOL = 1e-9
RELATION_BOUND = 10**6


class LieError(ValueError):
    """Raised for malformed group data or incompatible operands."""


def complex_structure(n: int) -> np.ndarray:
    """Matrix of ``J`` on ``R^{2n}``: ``J e_{2j-1} = e_{2j}``, ``J e_{2j} = -e_{2j-1}``."""
    J = np.zeros((2 * n, 2 * n))
    for j in range(n):
        J[2 * j + 1, 2 * j] = 1.0
        J[2 * j, 2 * j + 1] = -1.0
    return J


def quaternionic_structures(r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three structures ``J, K, L`` on ``R^{4r}`` (``JK = L``)."""
    J = np.zeros((4 * r, 4 * r))
    K = np.zeros_like(J)
    L = np.zeros_like(J)
    for ell in range(r):
        e1, e2, e3, e4 = 4 * ell, 4 * ell + 1, 4 * ell + 2, 4 * ell + 3
        # entry [i, j] encodes e_i (x) e_j^*
        J[e2, e1], J[e1, e2], J[e4, e3], J[e3, e4] = 1, -1, 1, -1
        K[e3, e1], K[e4, e2], K[e1, e3], K[e2, e4] = 1, -1, -1, 1
        L[e4, e1], L[e3, e2], L[e2, e3], L[e1, e4] = 1, 1, -1, -1
    return J, K, L


def realify(M: np.ndarray) -> np.ndarray:
    """Real ``2n x 2n`` form of a complex ``n x n`` matrix."""
    M = np.asarray(M)
    n = M.shape[0]
    R = np.zeros((2 * n, 2 * n))
    R[0::2, 0::2] = M.real
    R[1::2, 1::2] = M.real
    R[0::2, 1::2] = -M.imag
    R[1::2, 0::2] = M.imag
    return R


def _as_real_vector(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    if np.iscomplexobj(M):
        return np.concatenate([M.real.ravel(), M.imag.ravel()])
    return M.ravel().astype(float)


def numerical_rank(rows, rtol: float = RANK_RTOL) -> int:
    """Rank with singular-value cutoff ``rtol * sigma_max``."""
    A = np.atleast_2d(np.asarray(rows, dtype=float))
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def nullspace(A: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (columns) of the kernel of ``A``."""
    A = np.atleast_2d(np.asarray(A))
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, vh = np.linalg.svd(A, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        return np.eye(n)
    rank = int(np.sum(s > rtol * s[0]))
    return vh[rank:].conj().T


@dataclass(frozen=True)
class GroupSpec:
    """A compact matrix group.

    ``param`` is ``n`` for SO/O/SU/U, ``r`` for Sp and ``s`` for the tori.
    ``ProductRT`` stands for the torus factor of ``R^k x T^s`` and also carries
    ``k``.
    """

    family: str
    param: int
    k: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise LieError(f"unsupported family {self.family!r}")
        if int(self.param) < 1:
            raise LieError("param must be a positive integer")
        if self.family == "ProductRT" and self.k < 1:
            raise LieError("ProductRT needs k >= 1")

    def __str__(self):
        if self.family == "ProductRT":
            return f"ProductRT({self.k},{self.param})"
        return f"{self.family}({self.param})"

    @property
    def is_complex(self) -> bool:
        return self.family in _COMPLEX

    @property
    def is_torus(self) -> bool:
        return self.family in ("Torus", "ProductRT")

    @property
    def matrix_dim(self) -> int:
        if self.family == "Sp":
            return 4 * self.param
        return self.param

    @property
    def rep_dim(self) -> int:
        """Real dimension of the standard representation space."""
        return 2 * self.matrix_dim if self.is_complex else self.matrix_dim

    @property
    def algebra_dim(self) -> int:
        n = self.param
        return {
            "SO": n * (n - 1) // 2,
            "O": n * (n - 1) // 2,
            "SU": n * n - 1,
            "U": n * n,
            "Sp": n * (2 * n + 1),
            "Torus": n,
            "ProductRT": n,
        }[self.family]

    @property
    def is_semisimple(self) -> bool:
        if self.family in ("SO", "O"):
            return self.param >= 3
        return self.family in ("SU", "Sp") and self.algebra_dim > 0

    @cached_property
    def structures(self) -> tuple[np.ndarray, ...]:
        """Real structures an Sp(r) element must commute with."""
        if self.family == "Sp":
            return quaternionic_structures(self.param)
        return ()

    @cached_property
    def algebra_basis(self) -> tuple["AlgebraElement", ...]:
        mats = _algebra_basis_matrices(self)
        if len(mats) != self.algebra_dim:
            raise LieError(f"basis construction for {self} produced {len(mats)} elements")
        return tuple(AlgebraElement(m, self) for m in mats)

    @cached_property
    def component_generators(self) -> tuple[np.ndarray, ...]:
        """Real matrices that, with the identity component, generate the group."""
        if self.family == "O":
            D = np.eye(self.param)
            D[0, 0] = -1.0
            return (D,)
        return ()

    def real_rep(self, M: np.ndarray) -> np.ndarray:
        """Matrix of ``M`` acting on the real representation space."""
        M = np.asarray(M)
        if self.is_complex:
            return realify(M)
        return M.real.astype(float) if np.iscomplexobj(M) else M.astype(float)

    def algebra_residual(self, A: np.ndarray) -> float:
        A = np.asarray(A)
        fam = self.family
        if fam in ("SO", "O"):
            res = np.linalg.norm(A + A.T)
            if np.iscomplexobj(A):
                res += np.linalg.norm(A.imag)
            return float(res)
        if fam == "U":
            return float(np.linalg.norm(A + A.conj().T))
        if fam == "SU":
            return float(np.linalg.norm(A + A.conj().T) + abs(np.trace(A)))
        if fam == "Sp":
            res = np.linalg.norm(A + A.T)
            for S in self.structures:
                res += np.linalg.norm(A @ S - S @ A)
            return float(res)
        off = A - np.diag(np.diag(A))
        return float(np.linalg.norm(off) + np.linalg.norm(np.diag(A).real))

    def membership_residual(self, g: np.ndarray) -> float:
        g = np.asarray(g)
        n = g.shape[0]
        fam = self.family
        if fam in ("SO", "O", "Sp"):
            res = np.linalg.norm(g.T @ g - np.eye(n))
            if fam != "O":
                res += abs(np.linalg.det(g) - 1.0)
            else:
                res += abs(abs(np.linalg.det(g)) - 1.0)
            for S in self.structures:
                res += np.linalg.norm(g @ S - S @ g)
            return float(res)
        res = np.linalg.norm(g.conj().T @ g - np.eye(n))
        if fam == "SU":
            res += abs(np.linalg.det(g) - 1.0)
        if self.is_torus:
            res += np.linalg.norm(g - np.diag(np.diag(g)))
        return float(res)


def _algebra_basis_matrices(spec: GroupSpec) -> list[np.ndarray]:
    n = spec.param
    fam = spec.family
    out: list[np.ndarray] = []
    if fam in ("SO", "O"):
        for i, j in combinations(range(n), 2):
            E = np.zeros((n, n))
            E[i, j], E[j, i] = -1.0, 1.0
            out.append(E)
        return out
    if fam in ("U", "SU"):
        if fam == "U":
            for j in range(n):
                E = np.zeros((n, n), complex)
                E[j, j] = 1j
                out.append(E)
        else:
            for j in range(n - 1):
                E = np.zeros((n, n), complex)
                E[j, j], E[j + 1, j + 1] = 1j, -1j
                out.append(E)
        for j, k in combinations(range(n), 2):
            E = np.zeros((n, n), complex)
            E[j, k], E[k, j] = 1.0, -1.0
            out.append(E)
            F = np.zeros((n, n), complex)
            F[j, k], F[k, j] = 1j, 1j
            out.append(F)
        return out
    if fam in ("Torus", "ProductRT"):
        for j in range(n):
            E = np.zeros((n, n), complex)
            E[j, j] = 1j
            out.append(E)
        return out
    # Sp(r): skew matrices commuting with J, K, L
    so = _algebra_basis_matrices(GroupSpec("SO", 4 * n))
    rows = []
    for S in spec.structures:
        rows.append(np.stack([(E @ S - S @ E).ravel() for E in so], axis=1))
    coeffs = nullspace(np.vstack(rows))
    for c in coeffs.T:
        M = sum(ci * E for ci, E in zip(c, so))
        M = M / np.linalg.norm(M) * np.sqrt(2.0)
        out.append(M)
    return out


def _commutant_basis(structures) -> list[np.ndarray]:
    d = structures[0].shape[0]
    eye = np.eye(d)
    blocks = [np.kron(S, eye) - np.kron(eye, S.T) for S in structures]
    # row-major vec: vec(S M - M S) = (S (x) I - I (x) S^T) vec(M)
    basis = nullspace(np.vstack(blocks))
    return [b.reshape(d, d) for b in basis.T]


@dataclass(eq=False)
class AlgebraElement:
    matrix: np.ndarray
    spec: GroupSpec

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise LieError(f"algebra element must be square, got shape {m.shape}")
        if m.shape[0] != self.spec.matrix_dim:
            raise LieError(f"{self.spec} expects {self.spec.matrix_dim}x{self.spec.matrix_dim} matrices, got {m.shape}")
        if not self.spec.is_complex:
            if np.iscomplexobj(m) and np.any(m.imag != 0):
                raise LieError(f"{self.spec} algebra is real")
            m = m.real.astype(float) if np.iscomplexobj(m) else m.astype(float)
        else:
            m = m.astype(complex)
        m.setflags(write=False)
        self.matrix = m

    def residual(self) -> float:
        return self.spec.algebra_residual(self.matrix)

    def __add__(self, other):
        _same_spec(self, other)
        return AlgebraElement(self.matrix + other.matrix, self.spec)

    def __sub__(self, other):
        _same_spec(self, other)
        return AlgebraElement(self.matrix - other.matrix, self.spec)

    def __mul__(self, c):
        return AlgebraElement(self.matrix * c, self.spec)

    __rmul__ = __mul__

    def __neg__(self):
        return AlgebraElement(-self.matrix, self.spec)

    def vector(self) -> np.ndarray:
        return _as_real_vector(self.matrix)


@dataclass(eq=False)
class GroupElement:
    matrix: np.ndarray
    spec: GroupSpec

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] != self.spec.matrix_dim:
            raise LieError(f"bad group element shape {m.shape} for {self.spec}")
        m = m.astype(complex) if self.spec.is_complex else np.real_if_close(m).astype(float)
        m.setflags(write=False)
        self.matrix = m

    def residual(self) -> float:
        return self.spec.membership_residual(self.matrix)

    def real(self) -> np.ndarray:
        """Matrix acting on the real representation space."""
        return self.spec.real_rep(self.matrix)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        _same_spec(self, other)
        return GroupElement(self.matrix @ other.matrix, self.spec)

    def inverse(self) -> "GroupElement":
        return GroupElement(self.matrix.conj().T, self.spec)


def identity(spec: GroupSpec) -> GroupElement:
    return GroupElement(np.eye(spec.matrix_dim), spec)


def _same_spec(a, b):
    if a.spec != b.spec:
        raise LieError(f"group mismatch: {a.spec} vs {b.spec}")


def torus_element(spec: GroupSpec, frequencies) -> AlgebraElement:
    """Algebra element ``diag(i w_1, ..., i w_s)`` of a torus."""
    w = np.asarray(frequencies, dtype=float)
    if not spec.is_torus or w.shape != (spec.param,):
        raise LieError(f"{spec} needs {spec.param} frequencies")
    return AlgebraElement(np.diag(1j * w), spec)


def so3_generators() -> tuple[AlgebraElement, AlgebraElement, AlgebraElement]:
    """Standard ``L_x, L_y, L_z`` with ``[L_x, L_y] = L_z``."""
    spec = GroupSpec("SO", 3)
    Lx = np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], float)
    Ly = np.array([[0, 0, 1], [0, 0, 0], [-1, 0, 0]], float)
    Lz = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]], float)
    return tuple(AlgebraElement(m, spec) for m in (Lx, Ly, Lz))


# ---------------------------------------------------------------- operations


def exp_matrix(A: AlgebraElement) -> GroupElement:
    """Matrix exponential (scaling and squaring with a Pade core)."""
    if not isinstance(A, AlgebraElement):
        A = np.asarray(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise LieError(f"exp_matrix needs a square matrix, got {A.shape}")
        raise LieError("exp_matrix needs an AlgebraElement (owning group unknown)")
    return GroupElement(scipy.linalg.expm(A.matrix), A.spec)


def _rng(seed, index=None) -> np.random.Generator:
    if index is None:
        return np.random.default_rng(seed)
    return np.random.default_rng([int(seed), int(index)])


def _haar_unitary(n: int, rng) -> np.ndarray:
    Z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    Q, R = np.linalg.qr(Z)
    d = np.diag(R)
    return Q * (d / np.abs(d))


def _haar_orthogonal(n: int, rng) -> np.ndarray:
    Z = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diag(R))


def _haar_sp(spec: GroupSpec, rng) -> np.ndarray:
    basis = _sp_commutant(spec.param)
    M = sum(rng.standard_normal() * B for B in basis)
    P, _, Qt = np.linalg.svd(M)
    return P @ Qt


_SP_COMMUTANT: dict[int, list[np.ndarray]] = {}


def _sp_commutant(r: int) -> list[np.ndarray]:
    if r not in _SP_COMMUTANT:
        mats = _commutant_basis(quaternionic_structures(r))
        _SP_COMMUTANT[r] = [m / np.linalg.norm(m) for m in mats]
    return _SP_COMMUTANT[r]


def haar_sample(spec: GroupSpec, seed: int, index: int | None = None) -> GroupElement:
    """One Haar-distributed element; deterministic in ``(seed, index)``."""
    rng = _rng(seed, index)
    n = spec.param
    fam = spec.family
    if fam == "O":
        g = _haar_orthogonal(n, rng)
    elif fam == "SO":
        g = _haar_orthogonal(n, rng)
        if np.linalg.det(g) < 0:
            g[:, 0] = -g[:, 0]
    elif fam == "U":
        g = _haar_unitary(n, rng)
    elif fam == "SU":
        g = _haar_unitary(n, rng)
        g = g * np.linalg.det(g) ** (-1.0 / n)
    elif fam == "Sp":
        g = _haar_sp(spec, rng)
    elif fam in ("Torus", "ProductRT"):
        g = np.diag(np.exp(1j * rng.uniform(0.0, 2 * np.pi, n)))
    else:  # pragma: no cover - guarded by GroupSpec
        raise LieError(f"unsupported family {fam}")
    return GroupElement(g, spec)


def haar_samples(spec: GroupSpec, count: int, seed: int) -> list[GroupElement]:
    return [haar_sample(spec, seed, i) for i in range(count)]


def bracket(A: AlgebraElement, B: AlgebraElement) -> AlgebraElement:
    _same_spec(A, B)
    return AlgebraElement(A.matrix @ B.matrix - B.matrix @ A.matrix, A.spec)


def adjoint(g: GroupElement, A: AlgebraElement) -> AlgebraElement:
    _same_spec(g, A)
    if abs(np.linalg.det(g.matrix)) < 1e-12:
        raise LieError("singular group element")
    return AlgebraElement(g.matrix @ A.matrix @ np.linalg.inv(g.matrix), A.spec)


def span_basis(elements) -> list[AlgebraElement]:
    """Greedy maximal independent subset, in input order."""
    kept: list[AlgebraElement] = []
    rank = 0
    for e in elements:
        trial = kept + [e]
        r = numerical_rank([x.vector() for x in trial])
        if r > rank:
            kept.append(e)
            rank = r
    return kept


def generated_subalgebra(A: AlgebraElement, B: AlgebraElement) -> list[AlgebraElement]:
    _same_spec(A, B)
    basis = span_basis([A, B])
    while True:
        grown = False
        for X, Y in combinations(list(basis), 2):
            C = bracket(X, Y)
            new = span_basis(basis + [C])
            if len(new) > len(basis):
                basis = new
                grown = True
        if not grown or len(basis) >= A.spec.algebra_dim:
            return basis


def generated_subalgebra_dim(A: AlgebraElement, B: AlgebraElement) -> int:
    """Dimension of the smallest bracket-closed subspace containing ``A, B``."""
    return len(generated_subalgebra(A, B))


class DenseVerdict(str, enum.Enum):
    DENSE = "Dense"
    NOT_DENSE = "NotDense"
    PROBABLY_DENSE = "ProbablyDense"

    def __str__(self):
        return self.value


def is_dense_couple(spec: GroupSpec, A: AlgebraElement, B: AlgebraElement) -> DenseVerdict:
    """Whether the connected subgroup generated by ``A, B`` is dense.

    Full generated subalgebra means the subgroup is the whole group.  For
    non-toral groups a proper subalgebra never has dense closure (the closure's
    derived algebra equals that of the subalgebra).  Tori fall back on an
    integer-relation search among the frequency vectors.
    """
    if A.spec != spec or B.spec != spec:
        raise LieError("group mismatch")
    dim = generated_subalgebra_dim(A, B)
    if dim == spec.algebra_dim:
        return DenseVerdict.DENSE
    if not spec.is_torus:
        return DenseVerdict.NOT_DENSE
    a = np.diag(A.matrix).imag
    b = np.diag(B.matrix).imag
    if integer_relations([a, b]):
        return DenseVerdict.NOT_DENSE
    return DenseVerdict.PROBABLY_DENSE


def isotropy_algebra(spec: GroupSpec, x) -> list[AlgebraElement]:
    """Basis of ``{A : A x = 0}`` for the standard linear representation."""
    x = np.asarray(x)
    if x.shape != (spec.matrix_dim,):
        raise LieError(f"point must have {spec.matrix_dim} coordinates for {spec}")
    basis = spec.algebra_basis
    cols = [_as_real_vector(E.matrix @ x) for E in basis]
    K = nullspace(np.stack(cols, axis=1))
    out = []
    for c in K.T:
        out.append(AlgebraElement(sum(ci * E.matrix for ci, E in zip(c.real, basis)), spec))
    return out


# -------------------------------------------------------- integer relations


def _lll(basis: list[list[int]], delta=Fraction(3, 4)) -> list[list[int]]:
    b = [list(v) for v in basis]
    n = len(b)

    def dot(u, v):
        return sum(x * y for x, y in zip(u, v))

    def gso():
        bstar, mu = [], [[Fraction(0)] * n for _ in range(n)]
        for i in range(n):
            v = [Fraction(x) for x in b[i]]
            for j in range(i):
                mu[i][j] = Fraction(dot(b[i], bstar[j])) / dot(bstar[j], bstar[j])
                v = [vi - mu[i][j] * bj for vi, bj in zip(v, bstar[j])]
            bstar.append(v)
        return bstar, mu

    bstar, mu = gso()
    k = 1
    while k < n:
        for j in range(k - 1, -1, -1):
            q = round(mu[k][j])
            if q:
                b[k] = [x - q * y for x, y in zip(b[k], b[j])]
                bstar, mu = gso()
        if dot(bstar[k], bstar[k]) >= (delta - mu[k][k - 1] ** 2) * dot(bstar[k - 1], bstar[k - 1]):
            k += 1
        else:
            b[k], b[k - 1] = b[k - 1], b[k]
            bstar, mu = gso()
            k = max(k - 1, 1)
    return b


def integer_relations(vectors, bound: int = RELATION_BOUND, tol: float = 1e-9) -> list[np.ndarray]:
    """Independent integer vectors ``n`` with ``n . v = 0`` for every ``v``.

    Lattice reduction on the weighted embedding ``[I | C v_1 | C v_2 ...]``;
    only relations with ``max |n_i| <= bound`` and residual below
    ``tol * max|v|`` are returned.  An empty list means none was found, not
    that none exists.
    """
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    s = V.shape[1]
    scale = np.max(np.abs(V)) if V.size else 0.0
    if scale == 0.0:
        return [np.eye(s, dtype=int)[i] for i in range(s)]
    weight = 1e13 / scale
    rows = []
    for i in range(s):
        rows.append([1 if j == i else 0 for j in range(s)] + [int(round(weight * v[i])) for v in V])
    reduced = _lll(rows)
    found = []
    for row in reduced:
        nvec = np.array(row[:s], dtype=np.int64)
        if not nvec.any() or np.max(np.abs(nvec)) > bound:
            continue
        resid = np.abs(V @ nvec.astype(float))
        if np.all(resid <= tol * scale):
            found.append(nvec)
    if found and numerical_rank(found) < len(found):
        found = found[: numerical_rank(found)]
    return found


def rational_rank(values) -> int:
    """Dimension of the Q-span of the given reals (up to the relation bound)."""
    v = np.asarray(values, dtype=float)
    return v.size - len(integer_relations([v]))


# ------------------------------------------------------- free-point helpers


def is_free_point_vectors(vectors) -> bool:
    """``SO(n)`` acting diagonally on ``n-1`` vectors: free iff they are independent."""
    V = np.asarray(vectors, dtype=float)
    if V.ndim != 2:
        raise LieError("expected a list of vectors")
    m, n = V.shape
    if n < 3:
        raise LieError("need vectors in R^n with n >= 3")
    if m != n - 1:
        raise LieError(f"need exactly {n - 1} vectors in R^{n}, got {m}")
    return numerical_rank(V) == n - 1


def gram_disc_coordinates(v1, v2) -> tuple[float, float]:
    """``(<v1, v1>, <v1, v2>)``; on the unit sphere this lands in the closed disc."""
    v1 = np.asarray(v1, float)
    v2 = np.asarray(v2, float)
    return float(v1 @ v1), float(v1 @ v2)


def in_disc_interior(point) -> bool:
    x1, x2 = point
    return x2 * x2 < x1 * (1.0 - x1)

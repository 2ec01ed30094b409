import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from detvec import lie
from detvec.lie import AlgebraElement, DenseVerdict, GroupSpec


def series_exp(A, terms=30):
    out = np.eye(A.shape[0], dtype=A.dtype)
    term = np.eye(A.shape[0], dtype=A.dtype)
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


SPECS = [
    GroupSpec("SO", 3),
    GroupSpec("SO", 4),
    GroupSpec("O", 3),
    GroupSpec("SU", 2),
    GroupSpec("SU", 3),
    GroupSpec("U", 2),
    GroupSpec("Sp", 1),
    GroupSpec("Sp", 2),
    GroupSpec("Torus", 3),
]


def random_element(spec, rng):
    c = rng.standard_normal(spec.algebra_dim)
    return AlgebraElement(sum(ci * E.matrix for ci, E in zip(c, spec.algebra_basis)), spec)


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_algebra_dimension_and_basis(spec):
    assert len(spec.algebra_basis) == spec.algebra_dim
    assert lie.numerical_rank([E.vector() for E in spec.algebra_basis]) == spec.algebra_dim
    for E in spec.algebra_basis:
        assert E.residual() < 1e-12


def test_dimension_formulas():
    assert GroupSpec("SO", 6).algebra_dim == 3 * 5
    assert GroupSpec("SU", 3).algebra_dim == 8
    assert GroupSpec("U", 3).algebra_dim == 9
    assert GroupSpec("Sp", 2).algebra_dim == 10


def test_exp_identity():
    spec = GroupSpec("SO", 3)
    g = lie.exp_matrix(AlgebraElement(np.zeros((3, 3)), spec))
    assert_allclose(g.matrix, np.eye(3))


def test_exp_quarter_rotation_matches_series():
    spec = GroupSpec("SO", 2)
    A = np.array([[0.0, -np.pi / 2], [np.pi / 2, 0.0]])
    g = lie.exp_matrix(AlgebraElement(A, spec))
    assert_allclose(g.matrix, series_exp(A), atol=1e-12)
    assert_allclose(g.matrix, [[0, -1], [1, 0]], atol=1e-12)


def test_exp_unitary_minus_identity():
    spec = GroupSpec("U", 2)
    A = np.diag([1j * np.pi, -1j * np.pi])
    g = lie.exp_matrix(AlgebraElement(A, spec))
    assert_allclose(g.matrix, series_exp(A), atol=1e-12)
    assert_allclose(g.matrix, -np.eye(2), atol=1e-12)


def test_exp_rejects_bad_input():
    with pytest.raises(lie.LieError):
        lie.exp_matrix(np.zeros((2, 3)))
    with pytest.raises(lie.LieError):
        AlgebraElement(np.zeros((2, 2)), GroupSpec("SO", 3))


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_exp_membership_and_inverse(spec):
    rng = np.random.default_rng(1)
    for _ in range(10):
        A = random_element(spec, rng)
        A = AlgebraElement(A.matrix * (5.0 / max(np.linalg.norm(A.matrix, 2), 1e-12)), spec)
        g = lie.exp_matrix(A)
        assert g.residual() < 1e-9
        ginv = lie.exp_matrix(-A)
        assert_allclose(g.matrix @ ginv.matrix, np.eye(spec.matrix_dim), atol=1e-10)


def test_exp_small_norm_matches_series():
    spec = GroupSpec("SU", 3)
    rng = np.random.default_rng(2)
    A = random_element(spec, rng)
    A = AlgebraElement(A.matrix * 0.1, spec)
    assert_allclose(lie.exp_matrix(A).matrix, series_exp(A.matrix), atol=1e-13)


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_haar_membership_and_determinism(spec):
    for i in range(20):
        g = lie.haar_sample(spec, 7, i)
        assert g.residual() < 1e-9
    assert_allclose(lie.haar_sample(spec, 7, 3).matrix, lie.haar_sample(spec, 7, 3).matrix, rtol=0, atol=0)


def test_haar_examples():
    R = lie.haar_sample(GroupSpec("SO", 3), 1).matrix
    assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    u1 = lie.haar_sample(GroupSpec("U", 2), 7).matrix
    u2 = lie.haar_sample(GroupSpec("U", 2), 7).matrix
    assert np.array_equal(u1, u2)
    t = lie.haar_sample(GroupSpec("Torus", 2), 3).matrix
    assert_allclose(t, np.diag(np.diag(t)))
    assert_allclose(np.abs(np.diag(t)), 1.0)


def test_haar_left_invariance_of_trace_statistic():
    spec = GroupSpec("SO", 3)
    N = 10**4
    hs = np.array([lie.haar_sample(spec, 11, i).matrix for i in range(N)])
    tr_h = np.trace(hs, axis1=1, axis2=2)
    for j in range(5):
        g = lie.haar_sample(spec, 99, j).matrix
        tr_gh = np.einsum("ij,nji->n", g, hs)
        se = np.sqrt(tr_h.var() / N + tr_gh.var() / N)
        assert abs(tr_gh.mean() - tr_h.mean()) < 3 * se


def test_bracket_examples():
    Lx, Ly, Lz = lie.so3_generators()
    assert_allclose(lie.bracket(Lx, Ly).matrix, Lz.matrix)
    assert_allclose(lie.bracket(Lx, Lx).matrix, 0.0)
    spec = GroupSpec("Torus", 3)
    a = lie.torus_element(spec, [1, 2, 3])
    b = lie.torus_element(spec, [0.5, -1, 7])
    assert_allclose(lie.bracket(a, b).matrix, 0.0)


def test_bracket_spec_mismatch():
    Lx, _, _ = lie.so3_generators()
    other = GroupSpec("SO", 4).algebra_basis[0]
    with pytest.raises(lie.LieError):
        lie.bracket(Lx, other)


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_bracket_jacobi_bilinear_antisymmetric(spec):
    rng = np.random.default_rng(5)
    for _ in range(100):
        A, B, C = (random_element(spec, rng) for _ in range(3))
        br = lie.bracket
        jac = br(A, br(B, C)).matrix + br(B, br(C, A)).matrix + br(C, br(A, B)).matrix
        assert np.linalg.norm(jac) < 1e-12 * max(1.0, np.linalg.norm(A.matrix) ** 3 * 10)
        assert_allclose(br(A, B).matrix, -br(B, A).matrix, atol=1e-13)
        lhs = br(A * 2.0 + B, C).matrix
        assert_allclose(lhs, 2.0 * br(A, C).matrix + br(B, C).matrix, atol=1e-12)
        assert br(A, B).residual() < 1e-10


def test_generated_subalgebra_examples():
    spec = GroupSpec("SU", 2)
    sz = np.array([[1, 0], [0, -1]], complex)
    sx = np.array([[0, 1], [1, 0]], complex)
    A = AlgebraElement(1j * sz / 2, spec)
    B = AlgebraElement(1j * sx / 2, spec)
    assert lie.generated_subalgebra_dim(A, B) == 3
    assert lie.is_dense_couple(spec, A, B) == DenseVerdict.DENSE
    assert lie.generated_subalgebra_dim(A, A) == 1
    t3 = GroupSpec("Torus", 3)
    assert lie.generated_subalgebra_dim(lie.torus_element(t3, [1, 0, 0]), lie.torus_element(t3, [0, 1, 0])) == 2


def test_generated_subalgebra_invariant_under_pair_basis_change():
    spec = GroupSpec("SU", 3)
    rng = np.random.default_rng(3)
    E = spec.algebra_basis
    A, B = E[0], E[1]
    A2 = A * 2.0 + B
    B2 = A - B * 3.0
    assert lie.generated_subalgebra_dim(A, B) == lie.generated_subalgebra_dim(A2, B2)
    C, D = random_element(spec, rng), random_element(spec, rng)
    assert lie.generated_subalgebra_dim(C, D) == 8


def test_dense_torus_cases():
    t2 = GroupSpec("Torus", 2)
    e = lie.torus_element
    assert lie.is_dense_couple(t2, e(t2, [1, 0]), e(t2, [2, 0])) == DenseVerdict.NOT_DENSE
    assert lie.is_dense_couple(t2, e(t2, [1, 0]), e(t2, [0, np.sqrt(2)])) == DenseVerdict.DENSE
    t3 = GroupSpec("Torus", 3)
    v = lie.is_dense_couple(t3, e(t3, [1, np.sqrt(2), 0]), e(t3, [0, 1, np.sqrt(3)]))
    assert v == DenseVerdict.PROBABLY_DENSE
    v = lie.is_dense_couple(t3, e(t3, [1, 2, 3]), e(t3, [2, 4, 6]))
    assert v == DenseVerdict.NOT_DENSE


def test_proper_subalgebra_of_simple_group_is_not_dense():
    Lx, _, _ = lie.so3_generators()
    assert lie.is_dense_couple(GroupSpec("SO", 3), Lx, Lx * 2.0) == DenseVerdict.NOT_DENSE


def test_adjoint_examples():
    Lx, Ly, Lz = lie.so3_generators()
    spec = GroupSpec("SO", 3)
    assert_allclose(lie.adjoint(lie.identity(spec), Lx).matrix, Lx.matrix)
    g = lie.exp_matrix(Lz * (np.pi / 2))
    assert_allclose(lie.adjoint(g, Lx).matrix, Ly.matrix, atol=1e-12)
    t = GroupSpec("Torus", 2)
    a = lie.torus_element(t, [1.0, 3.0])
    assert_allclose(lie.adjoint(lie.haar_sample(t, 0), a).matrix, a.matrix, atol=1e-14)


@pytest.mark.parametrize("spec", SPECS, ids=str)
def test_adjoint_preserves_algebra(spec):
    rng = np.random.default_rng(4)
    for i in range(10):
        g = lie.haar_sample(spec, 4, i)
        assert lie.adjoint(g, random_element(spec, rng)).residual() < 1e-10


def test_isotropy_examples():
    so3 = GroupSpec("SO", 3)
    assert len(lie.isotropy_algebra(so3, np.zeros(3))) == 3
    iso = lie.isotropy_algebra(so3, np.array([1.0, 0, 0]))
    assert len(iso) == 1
    assert_allclose(iso[0].matrix @ np.array([1.0, 0, 0]), 0.0, atol=1e-14)
    assert len(lie.isotropy_algebra(GroupSpec("U", 2), np.array([1.0, 0.0]))) == 1


@pytest.mark.parametrize("spec", [GroupSpec("SO", 3), GroupSpec("U", 2), GroupSpec("SU", 3)], ids=str)
def test_isotropy_dimension_is_conjugation_invariant(spec):
    rng = np.random.default_rng(8)
    for i in range(100):
        if spec.is_complex:
            x = rng.standard_normal(spec.matrix_dim) + 1j * rng.standard_normal(spec.matrix_dim)
        else:
            x = rng.standard_normal(spec.matrix_dim)
        if i % 3 == 0:
            x[1:] = 0  # special points with larger stabilizers
        g = lie.haar_sample(spec, 8, i).matrix
        assert len(lie.isotropy_algebra(spec, g @ x)) == len(lie.isotropy_algebra(spec, x))


def test_free_points_of_vector_tuples():
    e = np.eye(3)
    assert lie.is_free_point_vectors([e[0] / np.sqrt(2), e[1] / np.sqrt(2)])
    F = lie.gram_disc_coordinates(e[0] / np.sqrt(2), e[1] / np.sqrt(2))
    assert F == pytest.approx((0.5, 0.0))
    assert lie.in_disc_interior(F)
    assert not lie.is_free_point_vectors([e[0], e[0]])
    e4 = np.eye(4)[:3] / np.sqrt(3)
    assert lie.is_free_point_vectors(e4)
    with pytest.raises(lie.LieError):
        lie.is_free_point_vectors([e[0]])


def test_integer_relations():
    assert [list(r) for r in lie.integer_relations([[1.0, 2.0]])] in ([[-2, 1]], [[2, -1]])
    assert lie.integer_relations([[1.0, np.sqrt(2)]]) == []
    assert lie.rational_rank([1.0, np.sqrt(2), 1 + np.sqrt(2)]) == 2
    assert lie.rational_rank([1.0, 2.0, 3.0]) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(-50, 50), st.integers(-50, 50))
def test_integer_relations_find_planted_relation(a, b):
    # v3 is an integer combination of 1 and sqrt(2): one relation must be found
    v = [1.0, np.sqrt(2), a + b * np.sqrt(2)]
    rels = lie.integer_relations([v])
    assert len(rels) == 1
    assert abs(np.dot(rels[0], v)) < 1e-9 * max(1.0, np.max(np.abs(v)))

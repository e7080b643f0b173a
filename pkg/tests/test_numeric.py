import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgetting_anatomy.errors import DimensionError, NumericError, PreconditionError
from forgetting_anatomy.numeric import (
    Rng,
    finite_diff_grad,
    frobenius_norm,
    givens_product,
    matmul,
    svd,
    tensor,
)


def test_matmul_identity():
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), a), a)


def test_matmul_hand_value():
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(np.zeros((2, 3)), np.zeros((4, 5)))


def test_matmul_associative():
    rng = Rng(3)
    for _ in range(20):
        a, b, c = (rng.normal(size=(4, 4)) for _ in range(3))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert frobenius_norm(left - right) <= 1e-10 * frobenius_norm(left)


def test_tensor_rejects_nonfinite():
    with pytest.raises(NumericError):
        tensor([1.0, np.nan])


def test_frobenius():
    assert frobenius_norm(np.zeros((3, 2))) == 0.0
    assert frobenius_norm([[3.0, 4.0]]) == 5.0
    x = Rng(0).normal(size=12)
    assert frobenius_norm(x) == pytest.approx(frobenius_norm(x[::-1]), abs=1e-14)


def test_svd_diagonal():
    r = svd(np.diag([3.0, 1.0]))
    assert np.allclose(r.singular_values, [3.0, 1.0])
    assert np.allclose(np.abs(r.u), np.eye(2))
    assert np.allclose(np.abs(r.v), np.eye(2))


def test_svd_rank_one():
    a = np.arange(1.0, 5.0)[:, None] @ np.array([[2.0, -1.0, 0.5]])
    s = svd(a).singular_values
    assert s[0] > 1
    assert np.all(s[1:] <= 1e-10)


def test_svd_sign_convention():
    r = svd(Rng(5).normal(size=(6, 4)))
    for j in range(r.u.shape[1]):
        first = r.u[np.flatnonzero(np.abs(r.u[:, j]) > 1e-12)[0], j]
        assert first >= 0


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 16), st.integers(2, 16), st.integers(0, 2**32 - 1))
def test_svd_properties(m, n, seed):
    a = Rng(seed).normal(size=(m, n))
    r = svd(a)
    assert np.abs(r.u.T @ r.u - np.eye(m)).max() < 1e-8
    assert np.abs(r.v.T @ r.v - np.eye(n)).max() < 1e-8
    assert frobenius_norm(r.reconstruct() - a) <= 1e-8 * frobenius_norm(a)
    assert np.all(np.diff(r.singular_values) <= 1e-12)


def test_svd_random_8x5_reconstruction():
    a = Rng(11).normal(size=(8, 5))
    assert frobenius_norm(svd(a).reconstruct() - a) / frobenius_norm(a) <= 1e-8


def test_givens_zero_is_identity():
    basis = svd(Rng(1).normal(size=(7, 7))).v
    assert np.abs(givens_product(0.0, 7, basis) - np.eye(7)).max() <= 1e-12


def test_givens_two_dim_quarter_turn():
    r = givens_product(np.pi / 2, 2, np.eye(2))
    assert np.allclose(r, [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(-7, 7), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_givens_orthogonal_unit_determinant(theta, p, seed):
    basis = svd(Rng(seed).normal(size=(p, p))).v
    r = givens_product(theta, p, basis)
    assert np.abs(r.T @ r - np.eye(p)).max() <= 1e-10
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-8)


def test_givens_odd_dimension_fixes_middle_axis():
    r = givens_product(1.0, 5, np.eye(5))
    e = np.zeros(5)
    e[2] = 1.0
    assert np.allclose(r @ e, e)


def test_givens_rejects_non_orthogonal_basis():
    with pytest.raises(PreconditionError):
        givens_product(0.3, 3, np.ones((3, 3)))


def test_finite_diff_quadratic():
    g = finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]), 1e-5)
    assert abs(g[0] - 6.0) <= 1e-6


def test_finite_diff_constant_and_linear():
    x = Rng(2).normal(size=(3, 2))
    assert np.abs(finite_diff_grad(lambda v: 4.2, x)).max() <= 1e-9
    assert np.abs(finite_diff_grad(lambda v: float(v.sum()), x) - 1.0).max() <= 1e-8


def test_finite_diff_nonfinite():
    with pytest.raises(NumericError):
        finite_diff_grad(lambda v: float("inf"), np.zeros(2))


def test_rng_determinism_and_scopes():
    a = Rng(42).normal(size=10_000)
    b = Rng(42).normal(size=10_000)
    assert np.array_equal(a, b)
    root = Rng(42)
    x = root.derive("init").normal(size=5)
    root.normal(size=100)  # consuming the parent does not move children
    assert np.array_equal(x, Rng(42).derive("init").normal(size=5))
    assert not np.array_equal(x, Rng(42).derive("shuffle").normal(size=5))

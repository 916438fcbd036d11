import numpy as np
import pytest
from hypothesis import given, strategies as st

from mpsnet.errors import ConvergenceError, NonFiniteError, ShapeError
from mpsnet.layers import affine_forward, affine_J
from mpsnet.numerics import (
    finite_diff_jacobian,
    jacobi_singular_values,
    kron,
    lambda_min_gram,
    singular_values,
    smallest_sv,
    spectral_norm,
    spectrum_from_values,
    svd_spectrum,
)


def brute_kron(A, B):
    m, n = A.shape
    p, q = B.shape
    out = np.zeros((m * p, n * q))
    for i in range(m):
        for j in range(n):
            for k in range(p):
                for l in range(q):
                    out[i * p + k, j * q + l] = A[i, j] * B[k, l]
    return out


def test_kron_identity_and_scalar(rng):
    assert np.array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))
    B = rng.standard_normal((3, 4))
    assert np.allclose(kron(np.array([[2.0]]), B), 2 * B)


def test_kron_matches_quadruple_loop(rng):
    A, B = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    assert np.allclose(kron(A, B), brute_kron(A, B), atol=0, rtol=0)


def test_row_major_vectorisation(rng):
    # vec(A X) = kron(A, I_N) vec(X) with row-major vec
    A, X = rng.standard_normal((3, 4)), rng.standard_normal((4, 5))
    assert np.allclose((A @ X).reshape(-1), kron(A, np.eye(5)) @ X.reshape(-1))


dims = st.integers(1, 3)


@given(st.integers(0, 2**32 - 1), dims, dims, dims, dims, dims, dims)
def test_kron_mixed_product(seed, m, n, p, q, r, s):
    g = np.random.default_rng(seed)
    A, C = g.standard_normal((m, n)), g.standard_normal((n, r))
    B, D = g.standard_normal((p, q)), g.standard_normal((q, s))
    assert np.allclose(kron(A, B) @ kron(C, D), kron(A @ C, B @ D), atol=1e-10, rtol=0)


def test_kron_rejects_non_matrix():
    with pytest.raises(ShapeError):
        kron(np.zeros((2, 2, 2)), np.eye(2))


def test_svd_spectrum_trivial():
    rep = svd_spectrum(np.eye(5), 5)
    assert np.allclose(rep.singular_values, 1) and rep.mean == pytest.approx(1) and rep.min == pytest.approx(1)
    rep = svd_spectrum(np.diag([3.0, 0.0]), 2)
    assert np.allclose(rep.singular_values, [3, 0])
    assert sum(c for _, _, c in rep.histogram) == 2


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_singular_values_match_gram_eigenvalues(rng, method):
    A = rng.standard_normal((8, 5))
    ev = np.sort(np.linalg.eigvalsh(A.T @ A))[::-1]
    assert np.allclose(singular_values(A, method), np.sqrt(np.clip(ev, 0, None)), atol=1e-8)


@given(st.integers(0, 2**32 - 1), st.integers(1, 7), st.integers(1, 7))
def test_sigma_squared_sum_is_frobenius(seed, m, n):
    A = np.random.default_rng(seed).standard_normal((m, n))
    rep = svd_spectrum(A)
    assert np.sum(rep.singular_values ** 2) == pytest.approx(np.sum(A * A), rel=1e-8)


def test_jacobi_matches_lapack_and_keeps_relative_accuracy(rng):
    A = rng.standard_normal((12, 9))
    assert np.allclose(jacobi_singular_values(A), singular_values(A), rtol=1e-12)
    # column scaling over 20 decades: one-sided Jacobi keeps the tiny values accurate
    B = rng.standard_normal((6, 6))
    scales = 10.0 ** -np.arange(0, 24, 4)
    tiny = jacobi_singular_values(B * scales)[-1]
    ref = np.linalg.svd(B / np.linalg.norm(B, axis=0), compute_uv=False)[-1]
    assert tiny > 0
    assert ref * scales[-1] * 1e-3 < tiny < np.linalg.norm(B[:, -1]) * scales[-1] * 1.0001


def test_jacobi_sweep_cap_raises(rng):
    with pytest.raises(ConvergenceError):
        jacobi_singular_values(rng.standard_normal((10, 10)), max_sweeps=1)


def test_smallest_sv_cases(rng):
    assert smallest_sv(np.eye(4)) == pytest.approx(1)
    A = rng.standard_normal((3, 2))
    R = np.hstack([A, A[:, :1] + A[:, 1:]])
    assert smallest_sv(R) < 1e-10


def test_smallest_sv_bounds_rayleigh_quotients(rng):
    for _ in range(10):
        A = rng.standard_normal((5, 4))
        s = smallest_sv(A)
        V = rng.standard_normal((4, 100))
        V /= np.linalg.norm(V, axis=0)
        assert np.all(s <= np.linalg.norm(A @ V, axis=0) + 1e-12)


def test_lambda_min_gram_2x3(rng):
    A = rng.standard_normal((2, 3))
    G = A @ A.T
    tr, det = np.trace(G), np.linalg.det(G)
    closed = tr / 2 - np.sqrt(tr * tr / 4 - det)
    assert lambda_min_gram(A) == pytest.approx(closed, rel=1e-10)
    assert lambda_min_gram(A, method="jacobi") == pytest.approx(closed, rel=1e-10)


def test_lambda_min_gram_wide_gram_is_zero(rng):
    assert lambda_min_gram(rng.standard_normal((4, 3))) == 0.0


def test_spectral_norm(rng):
    A = rng.standard_normal((4, 6))
    assert spectral_norm(A) == pytest.approx(np.linalg.norm(A, 2))


def test_spectrum_histogram_counts_and_range():
    rep = spectrum_from_values([0.5, 1.0, 2.0], 4, upper=4.0)
    assert [c for _, _, c in rep.histogram] == [1, 1, 1, 0]
    assert rep.histogram[-1][1] == 4.0
    with pytest.raises(ValueError):
        spectrum_from_values([1.0], 0)


def test_finite_diff_identity_and_polynomial():
    x = np.array([0.3, -1.2, 2.0])
    assert np.allclose(finite_diff_jacobian(lambda v: v, x), np.eye(3), atol=1e-12)
    f = lambda v: np.array([v[0] ** 2, v[0] * v[1]])
    assert np.allclose(finite_diff_jacobian(f, np.array([1.0, 2.0])), [[2, 0], [2, 1]], atol=1e-6)


def test_finite_diff_matches_affine_J(rng):
    A, b, X = rng.standard_normal((3, 4)), rng.standard_normal(3), rng.standard_normal((4, 2))
    fd = finite_diff_jacobian(lambda v: affine_forward(A, b, v.reshape(4, 2)).reshape(-1), X.reshape(-1))
    assert np.allclose(fd, affine_J(A, 2), atol=1e-8)


def test_finite_diff_non_finite_raises():
    with pytest.raises(NonFiniteError):
        finite_diff_jacobian(lambda v: np.array([np.inf]), np.array([0.0]))

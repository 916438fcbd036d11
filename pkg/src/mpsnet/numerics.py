"""Dense linear algebra helpers and differentiation oracles.

All matrices are float64 numpy arrays.  Matrices are vectorised row-major
(``X.reshape(-1)``), so that ``vec(A @ X) == kron(A, I_N) @ vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, NonFiniteError, ShapeError

__all__ = [
    "SpectrumReport",
    "as_matrix",
    "kron",
    "singular_values",
    "jacobi_singular_values",
    "svd_spectrum",
    "smallest_sv",
    "lambda_min_gram",
    "spectral_norm",
    "finite_diff_jacobian",
    "JACOBI_MAX_SWEEPS",
]

JACOBI_MAX_SWEEPS = 60


def as_matrix(A, name="matrix"):
    """Coerce to a finite 2-D float64 array."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return A


def kron(A, B):
    """Kronecker product with row-major block layout.

    Entry ``((i1, i2), (j1, j2))`` of the result is ``A[i1, j1] * B[i2, j2]``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise ShapeError("kron expects 2-D operands")
    m, n = A.shape
    p, q = B.shape
    return (A[:, None, :, None] * B[None, :, None, :]).reshape(m * p, n * q)


def _round_robin(n):
    """Tournament schedule: n - 1 rounds of n/2 disjoint index pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_singular_values(A, tol=1e-15, max_sweeps=JACOBI_MAX_SWEEPS):
    """Singular values by one-sided (Hestenes) Jacobi, in descending order.

    Each round rotates n/2 disjoint column pairs at once.  Accurate to high
    relative precision for column-scaled matrices ``B @ diag(d)``.

    Raises ConvergenceError after ``max_sweeps`` sweeps without convergence.
    """
    A = as_matrix(A)
    G = A.T.copy() if A.shape[0] < A.shape[1] else A.copy()
    n = G.shape[1]
    if n == 1:
        return np.array([np.linalg.norm(G[:, 0])])
    if n % 2:
        G = np.hstack([G, np.zeros((G.shape[0], 1))])
    schedule = _round_robin(G.shape[1])
    for _ in range(max_sweeps):
        rotated = False
        for p, q in schedule:
            gp, gq = G[:, p], G[:, q]
            a = np.einsum("ij,ij->j", gp, gp)
            b = np.einsum("ij,ij->j", gq, gq)
            c = np.einsum("ij,ij->j", gp, gq)
            active = np.abs(c) > tol * np.sqrt(a * b)
            if not np.any(active):
                continue
            rotated = True
            c_safe = np.where(active, c, 1.0)
            zeta = (b - a) / (2.0 * c_safe)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            cs = 1.0 / np.sqrt(1.0 + t * t)
            sn = np.where(active, cs * t, 0.0)
            cs = np.where(active, cs, 1.0)
            G[:, p] = cs * gp - sn * gq
            G[:, q] = sn * gp + cs * gq
        if not rotated:
            sv = np.sort(np.linalg.norm(G, axis=0))[::-1]
            return sv[:n]
    raise ConvergenceError(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")


def singular_values(A, method="lapack"):
    """All singular values of ``A`` in descending order.

    ``method`` is ``"lapack"`` (divide and conquer via numpy) or ``"jacobi"``.
    """
    A = as_matrix(A)
    if method == "jacobi":
        return jacobi_singular_values(A)
    if method != "lapack":
        raise ValueError(f"unknown SVD method {method!r}")
    try:
        return np.linalg.svd(A, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"LAPACK SVD did not converge: {exc}") from exc


@dataclass
class SpectrumReport:
    """Singular value spectrum of one matrix with a uniform histogram."""

    singular_values: np.ndarray
    mean: float
    min: float
    histogram: list = field(default_factory=list)
    bin_count: int = 0

    @property
    def max(self):
        return float(self.singular_values[0]) if len(self.singular_values) else 0.0

    def histogram_rows(self):
        return [{"bin_lower": lo, "bin_upper": hi, "count": c} for lo, hi, c in self.histogram]


def _histogram(values, bin_count, upper=None):
    hi = float(np.max(values)) if upper is None else float(upper)
    if hi <= 0.0:
        hi = 1.0
    counts, edges = np.histogram(values, bins=bin_count, range=(0.0, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bin_count)]


def spectrum_from_values(values, bin_count, upper=None):
    """Build a SpectrumReport from precomputed singular values."""
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    sv = np.sort(np.asarray(values, dtype=np.float64))[::-1]
    return SpectrumReport(
        singular_values=sv,
        mean=float(np.mean(sv)),
        min=float(sv[-1]),
        histogram=_histogram(sv, bin_count, upper),
        bin_count=bin_count,
    )


def svd_spectrum(A, bin_count=50, method="lapack"):
    """Singular values of ``A`` with mean, minimum and histogram on [0, max]."""
    return spectrum_from_values(singular_values(A, method=method), bin_count)


def smallest_sv(A, method="lapack"):
    """Smallest singular value, min(rows, cols) of them being considered."""
    return float(singular_values(A, method=method)[-1])


def lambda_min_gram(A, method="lapack"):
    """Smallest eigenvalue of ``A @ A.T``.

    Computed as the square of the smallest singular value rather than from
    the Gram matrix, which would square the condition number.  When A has
    more rows than columns the Gram matrix is singular and 0 is returned.
    """
    A = as_matrix(A)
    if A.shape[0] > A.shape[1]:
        return 0.0
    return smallest_sv(A, method=method) ** 2


def spectral_norm(A):
    return float(singular_values(A)[0])


def finite_diff_jacobian(f, x, h=1e-5):
    """Central-difference Jacobian of a vector map, one column per input."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        fp = np.asarray(f(x + e), dtype=np.float64).reshape(-1)
        fm = np.asarray(f(x - e), dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteError(f"non-finite function value at coordinate {j}", where=j)
        cols.append((fp - fm) / (2.0 * h))
    if not cols:
        return np.zeros((np.asarray(f(x)).size, 0))
    return np.stack(cols, axis=1)

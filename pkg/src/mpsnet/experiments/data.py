"""Synthetic data with linearly independent columns."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import RankError
from ..network import RANK_RTOL, numerical_rank_ok

GENERATORS = ("gaussian_orthogonalised", "synthetic_images")
MAX_RETRIES = 20


@dataclass
class SyntheticDataset:
    """``X`` is ``d0 x N``; ``labels[i]`` is the class of column i."""

    X: np.ndarray
    labels: np.ndarray
    seed: int
    kind: str

    @property
    def N(self):
        return self.X.shape[1]

    def one_hot(self, n_classes):
        Y = np.zeros((n_classes, self.N))
        Y[self.labels % n_classes, np.arange(self.N)] = 1.0
        return Y

    def targets(self, d_out, scale=0.5):
        """Square-cost targets: +scale on the label row, -scale elsewhere."""
        return scale * (2.0 * self.one_hot(d_out) - 1.0)


def _image_shape(d0):
    h = int(math.isqrt(d0))
    while d0 % h:
        h -= 1
    return h, d0 // h


def _images(d0, N, rng, n_modes=3):
    """Sums of a few low-frequency 2-D cosines, flattened row-major."""
    h, w = _image_shape(d0)
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    cols = []
    for _ in range(N):
        img = np.zeros((h, w))
        for _ in range(n_modes):
            ky, kx = rng.integers(0, 3, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            img += rng.standard_normal() * np.cos(2 * np.pi * (ky * yy + kx * xx) + phase)
        img += 0.05 * rng.standard_normal((h, w))
        cols.append(img.reshape(-1))
    X = np.stack(cols, axis=1)
    return X / np.linalg.norm(X, axis=0, keepdims=True)


def gen_data(d0, N, kind="gaussian_orthogonalised", seed=0, scale=1.0, n_classes=None):
    """Draw ``X`` with N linearly independent columns, each of norm ``scale``.

    ``gaussian_orthogonalised`` gives orthonormal columns times ``scale``;
    ``synthetic_images`` gives smooth patterns, resampled until the rank
    test ``sigma_min > 1e-8 sigma_max`` passes.
    """
    if N > d0:
        raise ValueError(f"need N <= d0 for linearly independent columns, got N={N}, d0={d0}")
    if kind not in GENERATORS:
        raise ValueError(f"unknown generator {kind!r}")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RETRIES):
        if kind == "gaussian_orthogonalised":
            Q, _ = np.linalg.qr(rng.standard_normal((d0, N)))
            X = scale * Q
        else:
            X = scale * _images(d0, N, rng)
        if numerical_rank_ok(X, RANK_RTOL)[0]:
            k = n_classes or N
            labels = rng.permutation(np.arange(N) % k)
            return SyntheticDataset(X=X, labels=labels, seed=seed, kind=kind)
    raise RankError(f"could not draw full-rank data after {MAX_RETRIES} attempts")

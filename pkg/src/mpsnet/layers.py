"""Layer zoo with closed-form forward maps and derivatives.

Every layer maps a ``d_in x N`` matrix to a ``d_out x N`` matrix.  For a
layer ``f(theta, X)`` we expose

* ``forward(theta, X)``         -- the output matrix,
* ``jacobian(theta, X)``        -- J f, shape ``(d_out*N, d_in*N)``,
* ``param_derivative(theta, X)`` -- D f, shape ``(d_out*N, n_params)``,

with row-major vectorisation throughout.  Parameter vectors are laid out as
``[vec(weight), bias]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ShapeError
from .numerics import kron

DEFAULT_EPSILON = 0.1
DEFAULT_DELTA = 0.1

NORM_KINDS = ("entry", "weight")
PHI_KINDS = ("tanh", "identity")
SKIP_KINDS = ("identity", "partial_isometry", "avgpool", "none")


def _check(cond, msg):
    if not cond:
        raise ShapeError(msg)


# ---------------------------------------------------------------------------
# affine layers


def affine_forward(A, b, X):
    """``A @ X + b 1^T``."""
    A = np.asarray(A, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    _check(A.ndim == 2 and X.ndim == 2 and A.shape[1] == X.shape[0],
           f"affine: A {A.shape} incompatible with X {X.shape}")
    out = A @ X
    if b is not None:
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        _check(b.size == A.shape[0], f"affine: bias length {b.size} != {A.shape[0]}")
        out = out + b[:, None]
    return out


def affine_J(A, N):
    return kron(A, np.eye(N))


def affine_D(X, d_out, bias=True):
    """Derivative of ``A X + b 1^T`` w.r.t. ``(vec A, b)``."""
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[1]
    weight = kron(np.eye(d_out), X.T)
    if not bias:
        return weight
    return np.hstack([weight, kron(np.eye(d_out), np.ones((N, 1)))])


# ---------------------------------------------------------------------------
# normalised parameterisations


def param_en(w, epsilon):
    """Entry normalisation ``w / sqrt(eps + w^2)``; output entries lie in (-1, 1)."""
    w = np.asarray(w, dtype=np.float64)
    return w / np.sqrt(epsilon + w * w)


def param_wn(w, epsilon):
    """Weight normalisation: row i scaled by ``(eps + |w_i|^2)^(-1/2)``."""
    w = np.asarray(w, dtype=np.float64)
    s = epsilon + np.sum(w * w, axis=-1, keepdims=True)
    return w / np.sqrt(s)


def en_prime(w, epsilon):
    w = np.asarray(w, dtype=np.float64)
    return epsilon * (epsilon + w * w) ** -1.5


def en_second(w, epsilon):
    # exponent is -5/2; the -3/2 printed alongside Eq. den is a typo
    w = np.asarray(w, dtype=np.float64)
    return -3.0 * epsilon * w * (epsilon + w * w) ** -2.5


def _row_normalise_derivative(w, c):
    """Blocks of d/dw [w_i / sqrt(c + |w_i|^2)] for each row, block diagonal."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    d1, d0 = w.shape
    out = np.zeros((d1 * d0, d1 * d0))
    for i in range(d1):
        s = c + w[i] @ w[i]
        blk = (np.eye(d0) - np.outer(w[i], w[i]) / s) / math.sqrt(s)
        out[i * d0:(i + 1) * d0, i * d0:(i + 1) * d0] = blk
    return out


def _row_normalise_second(w, c):
    """Second derivative of the row normalisation; T[a, b, c] = d2 out_a / dw_b dw_c."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    d1, d0 = w.shape
    out = np.zeros((d1 * d0,) * 3)
    eye = np.eye(d0)
    for i in range(d1):
        y = w[i]
        s = c + y @ y
        # indices (j, l, n): 3 s^-1 y_j y_l y_n - (d_jl y_n + d_ln y_j + d_jn y_l)
        t = 3.0 / s * np.einsum("j,l,n->jln", y, y, y)
        t -= np.einsum("jl,n->jln", eye, y)
        t -= np.einsum("ln,j->jln", eye, y)
        t -= np.einsum("jn,l->jln", eye, y)
        sl = slice(i * d0, (i + 1) * d0)
        out[sl, sl, sl] = t * s ** -1.5
    return out


def param_D(norm_kind, w, epsilon):
    """Derivative of ``en`` or ``wn`` as a ``(d1*d0, d1*d0)`` matrix."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if norm_kind == "entry":
        return np.diag(en_prime(w, epsilon).reshape(-1))
    if norm_kind == "weight":
        return _row_normalise_derivative(w, epsilon)
    raise ValueError(f"unknown norm kind {norm_kind!r}")


def param_D2(norm_kind, w, epsilon):
    """Second derivative of ``en`` or ``wn``; ``T[a, b, c] = d2 P_a / dw_b dw_c``."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if norm_kind == "entry":
        n = w.size
        out = np.zeros((n, n, n))
        idx = np.arange(n)
        out[idx, idx, idx] = en_second(w, epsilon).reshape(-1)
        return out
    if norm_kind == "weight":
        return _row_normalise_second(w, epsilon)
    raise ValueError(f"unknown norm kind {norm_kind!r}")


def apply_param(norm_kind, w, epsilon):
    if norm_kind == "entry":
        return param_en(w, epsilon)
    if norm_kind == "weight":
        return param_wn(w, epsilon)
    raise ValueError(f"unknown norm kind {norm_kind!r}")


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def nonlin_forward(phi_kind, X):
    X = np.asarray(X, dtype=np.float64)
    if phi_kind == "tanh":
        return np.tanh(X)
    if phi_kind == "identity":
        return X.copy()
    raise ValueError(f"unknown nonlinearity {phi_kind!r}")


def phi_prime(phi_kind, X):
    X = np.asarray(X, dtype=np.float64)
    if phi_kind == "tanh":
        return 1.0 - np.tanh(X) ** 2
    if phi_kind == "identity":
        return np.ones_like(X)
    raise ValueError(f"unknown nonlinearity {phi_kind!r}")


def phi_second(phi_kind, X):
    X = np.asarray(X, dtype=np.float64)
    if phi_kind == "tanh":
        t = np.tanh(X)
        return -2.0 * t * (1.0 - t * t)
    if phi_kind == "identity":
        return np.zeros_like(X)
    raise ValueError(f"unknown nonlinearity {phi_kind!r}")


def nonlin_J(phi_kind, X):
    return np.diag(phi_prime(phi_kind, X).reshape(-1))


def nonlin_D2(phi_kind, X):
    n = np.size(X)
    out = np.zeros((n, n, n))
    idx = np.arange(n)
    out[idx, idx, idx] = phi_second(phi_kind, X).reshape(-1)
    return out


# ---------------------------------------------------------------------------
# batch normalisation


def bn_mean_removal(X):
    X = np.asarray(X, dtype=np.float64)
    return X - X.mean(axis=1, keepdims=True)


def bn_v(Y, epsilon):
    Y = np.asarray(Y, dtype=np.float64)
    N = Y.shape[1]
    s = N * epsilon + np.sum(Y * Y, axis=1, keepdims=True)
    return math.sqrt(N) * Y / np.sqrt(s)


def bn_decompose(X, epsilon):
    """Return ``(m(X), v(m(X)))`` so that ``bn = v o m``."""
    Y = bn_mean_removal(X)
    return Y, bn_v(Y, epsilon)


def bn_forward(X, epsilon):
    """Parameter-free batch norm with row-wise population statistics."""
    return bn_decompose(X, epsilon)[1]


def bn_Dm(d, N):
    return kron(np.eye(d), np.eye(N) - np.full((N, N), 1.0 / N))


def bn_Dv(Y, epsilon):
    Y = np.asarray(Y, dtype=np.float64)
    N = Y.shape[1]
    return math.sqrt(N) * _row_normalise_derivative(Y, N * epsilon)


def bn_D2v(Y, epsilon):
    Y = np.asarray(Y, dtype=np.float64)
    N = Y.shape[1]
    return math.sqrt(N) * _row_normalise_second(Y, N * epsilon)


def bn_J(X, epsilon):
    X = np.asarray(X, dtype=np.float64)
    d, N = X.shape
    return bn_Dv(bn_mean_removal(X), epsilon) @ bn_Dm(d, N)


def bn_D2(X, epsilon):
    """Second derivative of bn itself (m is linear, so D2 bn = D2v(m X)[Dm, Dm])."""
    X = np.asarray(X, dtype=np.float64)
    d, N = X.shape
    Dm = bn_Dm(d, N)
    T = bn_D2v(bn_mean_removal(X), epsilon)
    return np.einsum("abc,bi,cj->aij", T, Dm, Dm)


# ---------------------------------------------------------------------------
# skips


def avgpool_matrix(d_in, d_out):
    """Scaled, zero-padded block average pool; every nonzero singular value is 1.

    Row i averages a contiguous block of ``d_in // d_out`` inputs, rescaled to
    unit norm.  If ``d_out > d_in`` the extra output rows are zero.
    """
    P = np.zeros((d_out, d_in))
    if d_out <= d_in:
        k = d_in // d_out
        for i in range(d_out):
            P[i, i * k:(i + 1) * k] = 1.0 / math.sqrt(k)
    else:
        P[:d_in, :d_in] = np.eye(d_in)
    return P


def skip_matrix(skip_kind, d_in, d_out):
    """The ``d_out x d_in`` linear map of a skip before tensoring with Id_N."""
    if skip_kind == "identity":
        _check(d_in == d_out, f"identity skip needs d_in == d_out, got {d_in} -> {d_out}")
        return np.eye(d_in)
    if skip_kind == "partial_isometry":
        _check(d_in >= d_out, f"partial isometry skip needs d_in >= d_out, got {d_in} -> {d_out}")
        return np.eye(d_out, d_in)
    if skip_kind == "avgpool":
        _check(d_in >= d_out, f"avgpool skip needs d_in >= d_out, got {d_in} -> {d_out}")
        return avgpool_matrix(d_in, d_out)
    if skip_kind == "none":
        return np.zeros((d_out, d_in))
    raise ValueError(f"unknown skip kind {skip_kind!r}")


def skip_build(skip_kind, d_in, d_out, N):
    """Skip as a linear map on vec(X): ``kron(I, Id_N)``."""
    return kron(skip_matrix(skip_kind, d_in, d_out), np.eye(N))


# ---------------------------------------------------------------------------
# layer objects


class Layer:
    """Common interface; subclasses are dataclasses."""

    kind = "layer"
    d_in: int
    d_out: int

    @property
    def n_params(self):
        return 0

    def forward(self, theta, X):
        raise NotImplementedError

    def jacobian(self, theta, X):
        raise NotImplementedError

    def param_derivative(self, theta, X):
        X = np.asarray(X)
        return np.zeros((self.d_out * X.shape[1], 0))

    def second_derivative(self, theta, X):
        """Second derivative in the input variable, rank 3."""
        raise NotImplementedError

    def _check_input(self, theta, X):
        X = np.asarray(X, dtype=np.float64)
        _check(X.ndim == 2 and X.shape[0] == self.d_in,
               f"{self.kind}: expected input with {self.d_in} rows, got {X.shape}")
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        _check(theta.size == self.n_params,
               f"{self.kind}: expected {self.n_params} parameters, got {theta.size}")
        return theta, X

    def to_dict(self):
        raise NotImplementedError


@dataclass
class Affine(Layer):
    """Unnormalised affine layer ``A X + b 1^T``."""

    d_in: int
    d_out: int
    bias: bool = True
    kind = "Affine"

    @property
    def n_params(self):
        return self.d_out * self.d_in + (self.d_out if self.bias else 0)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        A = theta[:self.d_out * self.d_in].reshape(self.d_out, self.d_in)
        b = theta[self.d_out * self.d_in:] if self.bias else None
        return A, b

    def forward(self, theta, X):
        theta, X = self._check_input(theta, X)
        return affine_forward(*self.unpack(theta), X)

    def jacobian(self, theta, X):
        theta, X = self._check_input(theta, X)
        return affine_J(self.unpack(theta)[0], X.shape[1])

    def param_derivative(self, theta, X):
        theta, X = self._check_input(theta, X)
        return affine_D(X, self.d_out, self.bias)

    def second_derivative(self, theta, X):
        n = self.d_in * np.shape(X)[1]
        return np.zeros((self.d_out * np.shape(X)[1], n, n))

    def to_dict(self):
        return {"kind": self.kind, "d_in": self.d_in, "d_out": self.d_out, "bias": self.bias}


def default_branch_scale(norm_kind, d_in, d_out, delta=DEFAULT_DELTA):
    """Scale making ``|P(w)|_2 <= 1 - delta`` for every ``w``.

    wn rows have norm < 1 so ``|wn(w)|_2 < sqrt(d_out)``; en entries lie in
    (-1, 1) so only ``|en(w)|_2 < sqrt(d_out * d_in)`` holds.
    """
    if norm_kind == "weight":
        return (1.0 - delta) / math.sqrt(d_out)
    return (1.0 - delta) / math.sqrt(d_out * d_in)


@dataclass
class NormAffine(Layer):
    """``scale * P(w) X (+ en(b) 1^T)`` with P entry or weight normalisation.

    ``scale=None`` picks :func:`default_branch_scale`, the contractive choice
    used inside residual branches.
    """

    d_in: int
    d_out: int
    norm_kind: str = "entry"
    epsilon: float = DEFAULT_EPSILON
    scale: Optional[float] = None
    bias: bool = False
    kind = "NormAffine"

    def __post_init__(self):
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"norm_kind must be one of {NORM_KINDS}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.scale is not None and self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def resolved_scale(self):
        if self.scale is None:
            return default_branch_scale(self.norm_kind, self.d_in, self.d_out)
        return float(self.scale)

    @property
    def n_params(self):
        return self.d_out * self.d_in + (self.d_out if self.bias else 0)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        w = theta[:self.d_out * self.d_in].reshape(self.d_out, self.d_in)
        b = theta[self.d_out * self.d_in:] if self.bias else None
        return w, b

    def weight_matrix(self, w):
        return self.resolved_scale * apply_param(self.norm_kind, w, self.epsilon)

    def forward(self, theta, X):
        theta, X = self._check_input(theta, X)
        w, b = self.unpack(theta)
        return norm_affine_forward(self, w, b, X)

    def jacobian(self, theta, X):
        theta, X = self._check_input(theta, X)
        return norm_affine_J(self, self.unpack(theta)[0], X.shape[1])

    def param_derivative(self, theta, X):
        theta, X = self._check_input(theta, X)
        w, b = self.unpack(theta)
        return norm_affine_D(self, w, X, b)

    def second_derivative(self, theta, X):
        n = self.d_in * np.shape(X)[1]
        return np.zeros((self.d_out * np.shape(X)[1], n, n))

    def to_dict(self):
        return {"kind": self.kind, "d_in": self.d_in, "d_out": self.d_out,
                "norm_kind": self.norm_kind, "epsilon": self.epsilon,
                "scale": self.scale, "bias": self.bias}


def norm_affine_forward(spec, w, b, X):
    P = spec.weight_matrix(w)
    bias = param_en(b, spec.epsilon) if (spec.bias and b is not None) else None
    return affine_forward(P, bias, X)


def norm_affine_J(spec, w, N):
    return kron(spec.weight_matrix(w), np.eye(N))


def norm_affine_D(spec, w, X, b=None):
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[1]
    DP = spec.resolved_scale * param_D(spec.norm_kind, w, spec.epsilon)
    weight = kron(np.eye(spec.d_out), X.T) @ DP
    if not spec.bias:
        return weight
    if b is None:
        b = np.zeros(spec.d_out)
    bias_blk = kron(np.eye(spec.d_out), np.ones((N, 1))) * en_prime(b, spec.epsilon)[None, :]
    return np.hstack([weight, bias_blk])


@dataclass
class Nonlinearity(Layer):
    d: int
    phi: str = "tanh"
    kind = "Nonlinearity"

    def __post_init__(self):
        if self.phi not in PHI_KINDS:
            raise ValueError(f"phi must be one of {PHI_KINDS}")

    @property
    def d_in(self):
        return self.d

    @property
    def d_out(self):
        return self.d

    def forward(self, theta, X):
        _, X = self._check_input(theta, X)
        return nonlin_forward(self.phi, X)

    def jacobian(self, theta, X):
        _, X = self._check_input(theta, X)
        return nonlin_J(self.phi, X)

    def second_derivative(self, theta, X):
        return nonlin_D2(self.phi, X)

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "phi": self.phi}


@dataclass
class BatchNorm(Layer):
    d: int
    epsilon: float = DEFAULT_EPSILON
    kind = "BatchNorm"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def d_in(self):
        return self.d

    @property
    def d_out(self):
        return self.d

    def forward(self, theta, X):
        _, X = self._check_input(theta, X)
        return bn_forward(X, self.epsilon)

    def jacobian(self, theta, X):
        _, X = self._check_input(theta, X)
        return bn_J(X, self.epsilon)

    def second_derivative(self, theta, X):
        return bn_D2(X, self.epsilon)

    def to_dict(self):
        return {"kind": self.kind, "d": self.d, "epsilon": self.epsilon}


@dataclass
class Residual(Layer):
    """``f(theta, X) = S X + g(theta, X)`` with g a composite of branch layers.

    S is the skip matrix of ``skip_kind`` plus the optional fixed matrix
    ``skip_dense``.  ``skip_kind="none"`` without ``skip_dense`` turns the
    block into a plain composite of its branch.
    """

    branch: list
    skip_kind: str = "identity"
    skip_dense: Optional[np.ndarray] = None
    kind = "Residual"
    _skip: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.branch:
            raise ShapeError("residual branch must contain at least one layer")
        for a, b in zip(self.branch, self.branch[1:]):
            _check(a.d_out == b.d_in, f"branch dims do not chain: {a.d_out} -> {b.d_in}")
        if self.skip_kind not in SKIP_KINDS:
            raise ValueError(f"skip_kind must be one of {SKIP_KINDS}")
        S = skip_matrix(self.skip_kind, self.d_in, self.d_out)
        if self.skip_dense is not None:
            self.skip_dense = np.asarray(self.skip_dense, dtype=np.float64)
            _check(self.skip_dense.shape == S.shape,
                   f"skip_dense must be {S.shape}, got {self.skip_dense.shape}")
            S = S + self.skip_dense
        self._skip = S

    @property
    def d_in(self):
        return self.branch[0].d_in

    @property
    def d_out(self):
        return self.branch[-1].d_out

    @property
    def skip(self):
        return self._skip

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.branch)

    def forward(self, theta, X):
        return residual_forward(self, theta, X)

    def jacobian(self, theta, X):
        return residual_J(self, theta, X)

    def param_derivative(self, theta, X):
        return residual_D(self, theta, X)

    def branch_jacobian(self, theta, X):
        from .compose import derivative_blocks, forward_trace, split_params

        theta, X = self._check_input(theta, X)
        thetas = split_params(self.branch, theta)
        acts = forward_trace(self.branch, thetas, X)
        return derivative_blocks(self.branch, thetas, acts)[1]

    def to_dict(self):
        out = {"kind": self.kind, "skip_kind": self.skip_kind,
               "branch": [layer.to_dict() for layer in self.branch]}
        if self.skip_dense is not None:
            out["skip_dense"] = self.skip_dense.tolist()
        return out


def residual_forward(spec, theta, X):
    from .compose import forward_trace, split_params

    theta, X = spec._check_input(theta, X)
    acts = forward_trace(spec.branch, split_params(spec.branch, theta), X)
    return spec.skip @ X + acts[-1]


def residual_J(spec, theta, X):
    """``kron(S, Id_N) + Jg``."""
    theta, X = spec._check_input(theta, X)
    return kron(spec.skip, np.eye(X.shape[1])) + spec.branch_jacobian(theta, X)


def residual_D(spec, theta, X):
    from .compose import derivative_blocks, forward_trace, split_params

    theta, X = spec._check_input(theta, X)
    thetas = split_params(spec.branch, theta)
    acts = forward_trace(spec.branch, thetas, X)
    blocks, _ = derivative_blocks(spec.branch, thetas, acts)
    return np.hstack(blocks)


LAYER_TYPES = {cls.kind: cls for cls in (Affine, NormAffine, Nonlinearity, BatchNorm, Residual)}


def layer_from_dict(data):
    data = dict(data)
    kind = data.pop("kind")
    if kind not in LAYER_TYPES:
        raise ValueError(f"unknown layer kind {kind!r}")
    if kind == "Residual":
        data["branch"] = [layer_from_dict(d) for d in data["branch"]]
        if data.get("skip_dense") is not None:
            data["skip_dense"] = np.asarray(data["skip_dense"], dtype=np.float64)
    return LAYER_TYPES[kind](**data)

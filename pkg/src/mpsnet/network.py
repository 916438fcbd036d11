"""Multilayer parameterised systems: PF map, its derivative, regularity checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .compose import derivative_blocks, forward_trace, split_params
from .errors import ShapeError
from .layers import (
    DEFAULT_EPSILON,
    NormAffine,
    Nonlinearity,
    Residual,
    layer_from_dict,
)
from .numerics import lambda_min_gram, singular_values

RANK_RTOL = 1e-8


@dataclass
class NetworkSpec:
    """An ordered list of layers whose dimensions chain."""

    layers: list
    N: Optional[int] = None

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        for l, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.d_out != b.d_in:
                raise ShapeError(f"layer {l} outputs {a.d_out} rows but layer {l + 1} expects {b.d_in}")

    @property
    def dims(self):
        return [self.layers[0].d_in] + [layer.d_out for layer in self.layers]

    @property
    def param_sizes(self):
        return [layer.n_params for layer in self.layers]

    @property
    def n_params(self):
        return sum(self.param_sizes)

    def to_dict(self):
        return {"N": self.N, "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, data):
        return cls([layer_from_dict(d) for d in data["layers"]], N=data.get("N"))


@dataclass
class ParamBlock:
    layer_index: int
    values: np.ndarray
    shape: tuple
    bias_length: int = 0


@dataclass
class ParamState:
    """Per-layer parameter blocks; parameter-free layers get empty blocks."""

    blocks: list

    @property
    def flat(self):
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([b.values for b in self.blocks])

    @classmethod
    def from_flat(cls, net, theta):
        blocks = []
        for idx, (layer, values) in enumerate(zip(net.layers, split_params(net.layers, theta))):
            has_weight = hasattr(layer, "unpack")
            shape = (layer.d_out, layer.d_in) if has_weight else (0,)
            bias_len = layer.d_out if getattr(layer, "bias", False) else 0
            blocks.append(ParamBlock(idx, values.copy(), shape, bias_len))
        return cls(blocks)


def as_vector(net, params):
    if isinstance(params, ParamState):
        theta = params.flat
    else:
        theta = np.asarray(params, dtype=np.float64).reshape(-1)
    if theta.size != net.n_params:
        raise ShapeError(f"network has {net.n_params} parameters, got {theta.size}")
    return theta


def init_params(net, seed, scale=1.0):
    """Default uniform initialisation U(-1/sqrt(d_in), 1/sqrt(d_in)) per layer.

    Residual blocks initialise each branch layer with its own fan-in.
    """
    rng = np.random.default_rng(seed)
    pieces = []

    def fill(layer):
        if isinstance(layer, Residual):
            for sub in layer.branch:
                fill(sub)
        elif layer.n_params:
            bound = scale / np.sqrt(layer.d_in)
            pieces.append(rng.uniform(-bound, bound, size=layer.n_params))

    for layer in net.layers:
        fill(layer)
    return np.concatenate(pieces) if pieces else np.zeros(0)


@dataclass
class ForwardTrace:
    """``activations[l]`` is the input to layer l; the last entry is the output."""

    activations: list = field(default_factory=list)


def _check_data(net, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != net.dims[0]:
        raise ShapeError(f"data must have {net.dims[0]} rows, got shape {X.shape}")
    if net.N is not None and X.shape[1] != net.N:
        raise ShapeError(f"network configured for N={net.N}, data has {X.shape[1]} columns")
    return X


def pf_map(net, params, X):
    """Evaluate ``F(theta) = f_L(theta_L) o ... o f_1(theta_1)(X)``."""
    theta = as_vector(net, params)
    X = _check_data(net, X)
    acts = forward_trace(net.layers, split_params(net.layers, theta), X)
    return acts[-1], ForwardTrace(acts)


def pf_derivative(net, params, X):
    """Per-layer blocks ``D_{theta_l} F`` and the assembled ``DF``.

    DF has shape ``(d_L * N, p)`` with columns ordered as the flat parameter
    vector.
    """
    theta = as_vector(net, params)
    X = _check_data(net, X)
    thetas = split_params(net.layers, theta)
    acts = forward_trace(net.layers, thetas, X)
    blocks, _ = derivative_blocks(net.layers, thetas, acts)
    return blocks, np.hstack(blocks)


def layer_factors(net, params, X):
    """Per-layer ``(Df_l, Jf_l)`` evaluated along the forward trace."""
    theta = as_vector(net, params)
    X = _check_data(net, X)
    thetas = split_params(net.layers, theta)
    acts = forward_trace(net.layers, thetas, X)
    out = []
    for layer, th, A in zip(net.layers, thetas, acts):
        D = layer.param_derivative(th, A) if layer.n_params else np.zeros((layer.d_out * A.shape[1], 0))
        out.append((D, layer.jacobian(th, A)))
    return out


def lambda_lower_bound_terms(net, params, X, method="jacobi"):
    """Summands ``lambda(Df_l) * prod_{j>l} lambda(Jf_j)`` of the regularity bound.

    The Jacobi SVD is the default because the first-layer derivative of an
    entry-normalised layer is column-scaled by factors spanning many orders
    of magnitude once weights grow.
    """
    factors = layer_factors(net, params, X)
    lam_D = [lambda_min_gram(D, method=method) if D.shape[1] else 0.0 for D, _ in factors]
    lam_J = [lambda_min_gram(J, method=method) for _, J in factors]
    terms = []
    for l in range(len(factors)):
        tail = float(np.prod(lam_J[l + 1:])) if l + 1 < len(factors) else 1.0
        terms.append(lam_D[l] * tail)
    return terms


def lambda_lower_bound(net, params, X, method="jacobi"):
    """Lower bound on ``lambda(DF)`` assembled from per-layer factors."""
    return float(sum(lambda_lower_bound_terms(net, params, X, method=method)))


def numerical_rank_ok(X, rtol=RANK_RTOL):
    sv = singular_values(X)
    return bool(sv[-1] > rtol * sv[0]), float(sv[-1]), float(sv[0])


@dataclass
class CheckResult:
    passed: bool
    message: str
    value: Optional[float] = None


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def failures(self):
        return {k: c for k, c in self.checks.items() if not c.passed}

    def __str__(self):
        lines = []
        for name, c in self.checks.items():
            lines.append(f"[{'PASS' if c.passed else 'FAIL'}] {name}: {c.message}")
        return "\n".join(lines)


def validate_normalised_resnet(net, X):
    """Check the hypotheses under which ``lambda(DF) > 0`` for every parameter.

    Keys: ``a_first_layer``, ``b_skip_isometry``, ``c_branch_contractive``,
    ``d_dims_nonincreasing``, ``e_data_full_rank``, ``f_first_layer_params``.
    """
    from .bounds import branch_jacobian_bound

    rep = ValidationReport()
    first = net.layers[0]

    ok = isinstance(first, NormAffine) and first.norm_kind == "entry" and not first.bias
    rep.checks["a_first_layer"] = CheckResult(
        ok, "first layer is a bias-free entry-normalised affine layer" if ok
        else f"first layer must be bias-free entry-normalised NormAffine, got {first.to_dict()}")

    bad_skip, bad_branch, worst = [], [], 0.0
    for l, layer in enumerate(net.layers[1:], start=1):
        if not isinstance(layer, Residual):
            bad_skip.append(f"layer {l} is {layer.kind}, not Residual")
            bad_branch.append(f"layer {l} has no branch")
            continue
        sv = singular_values(layer.skip)
        if layer.d_out > layer.d_in or not np.allclose(sv, 1.0, atol=1e-10):
            bad_skip.append(f"layer {l} skip singular values in [{sv.min():.4g}, {sv.max():.4g}]")
        try:
            bound = branch_jacobian_bound(layer.branch)
        except Exception as exc:  # uncertifiable layer kind in the branch
            bad_branch.append(f"layer {l}: {exc}")
            continue
        worst = max(worst, bound)
        if not bound < 1.0:
            bad_branch.append(f"layer {l} certified |Jg|_2 bound {bound:.4g} >= 1")
    rep.checks["b_skip_isometry"] = CheckResult(
        not bad_skip, "; ".join(bad_skip) or "all skips have singular values 1")
    rep.checks["c_branch_contractive"] = CheckResult(
        not bad_branch, "; ".join(bad_branch) or f"largest certified branch bound {worst:.4g} < 1", worst)

    dims = net.dims
    bad_dims = [f"d_{l - 1}={dims[l - 1]} < d_{l}={dims[l]}" for l in range(2, len(dims)) if dims[l - 1] < dims[l]]
    rep.checks["d_dims_nonincreasing"] = CheckResult(
        not bad_dims, "; ".join(bad_dims) or "d_{l-1} >= d_l for l >= 2")

    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != dims[0]:
        rep.checks["e_data_full_rank"] = CheckResult(False, f"data shape {X.shape} does not match d_0={dims[0]}")
    elif X.shape[1] > X.shape[0]:
        rep.checks["e_data_full_rank"] = CheckResult(False, f"N={X.shape[1]} exceeds d_0={X.shape[0]}")
    else:
        full, smin, smax = numerical_rank_ok(X)
        rep.checks["e_data_full_rank"] = CheckResult(
            full, f"sigma_min/sigma_max = {smin / smax if smax else 0.0:.3g}" +
            ("" if full else " (rank deficient)"), smin)

    p1 = first.n_params
    need = first.d_out * first.d_in
    rep.checks["f_first_layer_params"] = CheckResult(p1 >= need, f"p_1={p1}, d_1*d_0={need}")
    return rep


def build_normalised_resnet(dims, norm_kind="weight", phi="tanh", epsilon=DEFAULT_EPSILON,
                            branch_depth=1, N=None):
    """Entry-normalised first layer followed by contractive residual blocks.

    Block l has branch ``[NormAffine(d_{l-1} -> d_l), phi]`` followed by
    ``branch_depth - 1`` further ``[NormAffine(d_l -> d_l), phi]`` pairs; the
    skip is the identity when dimensions agree and a row selection otherwise.
    """
    dims = list(dims)
    if len(dims) < 2:
        raise ShapeError("need at least d_0 and d_1")
    layers = [NormAffine(dims[0], dims[1], norm_kind="entry", epsilon=epsilon, scale=1.0)]
    for d_prev, d in zip(dims[1:], dims[2:]):
        branch = [NormAffine(d_prev, d, norm_kind=norm_kind, epsilon=epsilon), Nonlinearity(d, phi)]
        for _ in range(branch_depth - 1):
            branch += [NormAffine(d, d, norm_kind=norm_kind, epsilon=epsilon), Nonlinearity(d, phi)]
        skip = "identity" if d == d_prev else "partial_isometry"
        layers.append(Residual(branch, skip_kind=skip))
    return NetworkSpec(layers, N=N)

"""Analytic derivatives against central finite differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..layers import (
    Affine,
    BatchNorm,
    NormAffine,
    Nonlinearity,
    Residual,
    en_prime,
    en_second,
    param_D,
    param_D2,
    apply_param,
)
from ..network import NetworkSpec, build_normalised_resnet, pf_derivative, pf_map
from ..numerics import finite_diff_jacobian
from ..training import CostSpec, loss_and_grad


@dataclass
class GradcheckRow:
    target: str
    quantity: str
    instances: int
    max_abs_err: float


def _dims(rng, lo=1, hi=5):
    return int(rng.integers(lo, hi + 1))


def _layer_instance(kind, rng):
    """A random ``(layer, N)`` of the named kind at unit scale."""
    d_in, d_out = _dims(rng), _dims(rng)
    N = _dims(rng, 2, 4)
    if kind == "affine":
        return Affine(d_in, d_out, bias=bool(rng.integers(2))), N
    if kind in ("norm_affine_entry", "norm_affine_weight"):
        norm = kind.rsplit("_", 1)[1]
        return NormAffine(d_in, d_out, norm, epsilon=0.1, scale=float(rng.uniform(0.5, 1.5)),
                          bias=bool(rng.integers(2))), N
    if kind in ("tanh", "identity"):
        return Nonlinearity(d_in, kind), N
    if kind == "batchnorm":
        return BatchNorm(d_in, epsilon=0.1), N
    d_out = min(d_out, d_in)
    branch = [NormAffine(d_in, d_out, "weight", 0.1), Nonlinearity(d_out, "tanh")]
    if kind == "residual_identity":
        return Residual([NormAffine(d_in, d_in, "weight", 0.1), Nonlinearity(d_in)], "identity"), N
    if kind == "residual_partial_isometry":
        return Residual(branch, "partial_isometry"), N
    if kind == "residual_avgpool":
        return Residual(branch, "avgpool"), N
    if kind == "residual_bn":
        dense = rng.uniform(-0.5, 0.5, size=(d_out, d_in))
        return Residual(branch[:1] + [BatchNorm(d_out, 0.1)] + branch[1:], "none", skip_dense=dense), N
    raise ValueError(kind)


LAYER_KINDS = ("affine", "norm_affine_entry", "norm_affine_weight", "tanh", "identity", "batchnorm",
               "residual_identity", "residual_partial_isometry", "residual_avgpool", "residual_bn")


def _network_instance(rng):
    """Depth <= 4, dims <= 8, N <= 4."""
    N = _dims(rng, 2, 4)
    depth = _dims(rng, 1, 3)
    dims = sorted((int(d) for d in rng.integers(N, 9, size=depth + 1)), reverse=True)
    if rng.integers(2):
        net = build_normalised_resnet(dims, norm_kind=["weight", "entry"][rng.integers(2)])
    else:
        layers = [NormAffine(dims[0], dims[1], "weight", 0.1, scale=1.0), BatchNorm(dims[1], 0.1),
                  Nonlinearity(dims[1])]
        layers += [Affine(dims[1], dims[-1], bias=True)]
        net = NetworkSpec(layers)
    return net, N


def _err(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0


def check_layer(layer, theta, X, h=1e-5):
    """Max abs errors of J, D and the input second derivative of one layer."""
    out = {}
    shape = X.shape
    f_x = lambda x: layer.forward(theta, x.reshape(shape)).reshape(-1)
    out["J"] = _err(layer.jacobian(theta, X), finite_diff_jacobian(f_x, X.reshape(-1), h))
    if layer.n_params:
        f_t = lambda t: layer.forward(t, X).reshape(-1)
        out["D"] = _err(layer.param_derivative(theta, X), finite_diff_jacobian(f_t, theta, h))
    if not isinstance(layer, Residual):
        J_x = lambda x: layer.jacobian(theta, x.reshape(shape)).reshape(-1)
        T = layer.second_derivative(theta, X)
        fd = finite_diff_jacobian(J_x, X.reshape(-1), h).reshape(T.shape)
        out["second"] = _err(T, fd)
    return out


def check_param(norm_kind, w, epsilon=0.1, h=1e-5):
    """Errors of DP and D^2 P for one parameterisation."""
    f = lambda v: apply_param(norm_kind, v.reshape(w.shape), epsilon).reshape(-1)
    D = lambda v: param_D(norm_kind, v.reshape(w.shape), epsilon).reshape(-1)
    D2 = param_D2(norm_kind, w, epsilon)
    out = {"DP": _err(param_D(norm_kind, w, epsilon), finite_diff_jacobian(f, w.reshape(-1), h)),
           "D2P": _err(D2, finite_diff_jacobian(D, w.reshape(-1), h).reshape(D2.shape))}
    if norm_kind == "entry":
        x = w.reshape(-1)
        out["en_second"] = _err(en_second(x, epsilon), (en_prime(x + h, epsilon) - en_prime(x - h, epsilon)) / (2 * h))
    return out


def check_network(net, theta, X, cost, h=1e-5):
    f = lambda t: pf_map(net, t, X)[0].reshape(-1)
    _, DF = pf_derivative(net, theta, X)
    _, g = loss_and_grad(net, theta, X, cost)
    loss = lambda t: np.array([loss_and_grad(net, t, X, cost)[0]])
    return {"DF": _err(DF, finite_diff_jacobian(f, theta, h)),
            f"grad_{cost.kind}": _err(g, finite_diff_jacobian(loss, theta, h)[0])}


def gradcheck_suite(instances=50, seed=0, h=1e-5):
    """Run every check on ``instances`` random draws; one row per (target, quantity)."""
    rng = np.random.default_rng(seed)
    worst = {}

    def record(target, errs):
        for q, e in errs.items():
            n, m = worst.get((target, q), (0, 0.0))
            worst[(target, q)] = (n + 1, max(m, e))

    for kind in LAYER_KINDS:
        for _ in range(instances):
            layer, N = _layer_instance(kind, rng)
            theta = rng.standard_normal(layer.n_params)
            X = rng.standard_normal((layer.d_in, N))
            record(kind, check_layer(layer, theta, X, h))
    for norm in ("entry", "weight"):
        for _ in range(instances):
            w = rng.standard_normal((_dims(rng), _dims(rng)))
            record(f"param_{norm}", check_param(norm, w, 0.1, h))
    for _ in range(instances):
        net, N = _network_instance(rng)
        theta = rng.standard_normal(net.n_params)
        X = rng.standard_normal((net.dims[0], N))
        d_L = net.dims[-1]
        Y = rng.standard_normal((d_L, N))
        onehot = np.zeros((d_L, N))
        onehot[rng.integers(0, d_L, size=N), np.arange(N)] = 1.0
        record("network", check_network(net, theta, X, CostSpec("square", Y), h))
        ce = check_network(net, theta, X, CostSpec("softmax_cross_entropy", onehot), h)
        ce.pop("DF")
        record("network", ce)
    return [GradcheckRow(t, q, n, m) for (t, q), (n, m) in worst.items()]

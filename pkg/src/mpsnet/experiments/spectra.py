"""Singular value spectra of random shifts and of residual-block Jacobians."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..compose import forward_trace, split_params
from ..layers import Affine, BatchNorm, Nonlinearity, NormAffine, Residual
from ..network import NetworkSpec, init_params
from ..numerics import singular_values, spectrum_from_values
from ..training import CostSpec, loss_and_grad
from .data import gen_data

VARIANTS = ("chain", "res", "resavg")


def _map_trials(fn, args, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, args))
    return [fn(a) for a in args]


# ---------------------------------------------------------------------------
# identity shift


@dataclass
class IdentityShiftResult:
    spectrum_A: object
    spectrum_shifted: object
    trial_means_A: list
    trial_means_shifted: list
    n: int
    seed: int

    @property
    def mean_A(self):
        return float(np.mean(self.trial_means_A))

    @property
    def mean_shifted(self):
        return float(np.mean(self.trial_means_shifted))

    def summary(self):
        return {"n": self.n, "trials": len(self.trial_means_A), "seed": self.seed,
                "mean_sigma_A": self.mean_A, "mean_sigma_shifted": self.mean_shifted,
                "shift": self.mean_shifted - self.mean_A}


def _shift_trial(args):
    n, seed, trial, zero = args
    if zero:
        A = np.zeros((n, n))
    else:
        rng = np.random.default_rng([seed, trial])
        A = rng.uniform(-1.0 / np.sqrt(n), 1.0 / np.sqrt(n), size=(n, n))
    return singular_values(A), singular_values(np.eye(n) + A)


def identity_shift_experiment(n=500, trials=10, seed=0, bins=50, zero=False, workers=1):
    """Spectra of ``A`` and ``Id + A`` for ``A`` with iid ``U(-1/sqrt n, 1/sqrt n)`` entries.

    Trial t draws from ``default_rng([seed, t])``.  Both histograms share the
    range ``[0, max]`` so they can be compared bin by bin.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    out = _map_trials(_shift_trial, [(n, seed, t, zero) for t in range(trials)], workers)
    sv_a = np.concatenate([a for a, _ in out])
    sv_s = np.concatenate([s for _, s in out])
    upper = max(sv_a.max(), sv_s.max())
    return IdentityShiftResult(
        spectrum_A=spectrum_from_values(sv_a, bins, upper),
        spectrum_shifted=spectrum_from_values(sv_s, bins, upper),
        trial_means_A=[float(a.mean()) for a, _ in out],
        trial_means_shifted=[float(s.mean()) for _, s in out],
        n=n, seed=seed,
    )


# ---------------------------------------------------------------------------
# layer spectra


def _branch(d_in, d_out, epsilon):
    return [NormAffine(d_in, d_out, "weight", epsilon, scale=1.0), BatchNorm(d_out, epsilon),
            Nonlinearity(d_out, "tanh"),
            NormAffine(d_out, d_out, "weight", epsilon, scale=1.0), BatchNorm(d_out, epsilon),
            Nonlinearity(d_out, "tanh")]


def build_variants(dims=(32, 16, 16, 8), epsilon=0.1, seed=0, n_classes=None):
    """Chain, Res and ResAvg networks sharing every parameter shape.

    A stem ``[norm-affine, bn, tanh]`` maps ``dims[0] -> dims[1]``, two blocks
    map ``dims[1] -> dims[2] -> dims[3]`` and an affine head maps to
    ``n_classes`` outputs.  Res uses an identity skip on the first block and
    a fixed random dense skip ``A`` on the dimension-changing block; ResAvg
    adds the unit-singular-value average pool to ``A``.
    """
    d0, d1, d2, d3 = dims
    n_classes = n_classes or d3
    rng = np.random.default_rng(seed + 10_000)
    A = rng.uniform(-1.0 / np.sqrt(d2), 1.0 / np.sqrt(d2), size=(d3, d2))

    def stem():
        return [NormAffine(d0, d1, "weight", epsilon, scale=1.0), BatchNorm(d1, epsilon),
                Nonlinearity(d1, "tanh")]

    def head():
        return [Affine(d3, n_classes, bias=True)]

    blocks = {
        "chain": [Residual(_branch(d1, d2, epsilon), "none"), Residual(_branch(d2, d3, epsilon), "none")],
        "res": [Residual(_branch(d1, d2, epsilon), "identity"),
                Residual(_branch(d2, d3, epsilon), "none", skip_dense=A)],
        "resavg": [Residual(_branch(d1, d2, epsilon), "identity"),
                   Residual(_branch(d2, d3, epsilon), "avgpool", skip_dense=A)],
    }
    return {k: NetworkSpec(stem() + b + head()) for k, b in blocks.items()}


def block_indices(net):
    return [i for i, layer in enumerate(net.layers) if isinstance(layer, Residual)]


def block_jacobian_values(net, theta, X):
    """Singular values of every residual block's input-output Jacobian, pooled."""
    thetas = split_params(net.layers, theta)
    acts = forward_trace(net.layers, thetas, X)
    return np.concatenate([singular_values(net.layers[i].jacobian(thetas[i], acts[i]))
                           for i in block_indices(net)])


@dataclass
class LayerSpectraTrial:
    seed: int
    mean_sigma: dict
    losses: dict
    values: dict = field(repr=False, default_factory=dict)


def _spectra_trial(args):
    seed, dims, N, generator, data_scale, n_classes, iterations, lr, epsilon = args
    ds = gen_data(dims[0], N, generator, seed=seed, scale=data_scale, n_classes=n_classes)
    cost = CostSpec("softmax_cross_entropy", ds.one_hot(n_classes))
    nets = build_variants(dims, epsilon, seed, n_classes)
    theta0 = init_params(nets["chain"], seed)
    mean_sigma, losses, values = {}, {}, {}
    for name in VARIANTS:
        net, theta = nets[name], theta0.copy()
        svs, curve = [], []
        for it in range(iterations + 1):
            loss, grad = loss_and_grad(net, theta, ds.X, cost)
            curve.append(loss)
            if it < iterations:
                svs.append(block_jacobian_values(net, theta, ds.X))
                theta = theta - lr * grad
        values[name] = np.concatenate(svs)
        mean_sigma[name] = float(values[name].mean())
        losses[name] = curve
    return LayerSpectraTrial(seed=seed, mean_sigma=mean_sigma, losses=losses, values=values)


@dataclass
class LayerSpectraResult:
    trials: list
    spectra: dict        # variant -> SpectrumReport pooled over trials and iterations
    iterations: int

    def sigma_ordering_count(self):
        return sum(t.mean_sigma["chain"] < t.mean_sigma["res"] < t.mean_sigma["resavg"]
                   for t in self.trials)

    def loss_ordering_count(self):
        k = self.iterations
        return sum(t.losses["resavg"][k] <= t.losses["res"][k] <= t.losses["chain"][k]
                   for t in self.trials)

    def mean_loss_curves(self):
        return {v: np.mean([t.losses[v] for t in self.trials], axis=0) for v in VARIANTS}

    def summary(self):
        out = {"trials": len(self.trials), "iterations": self.iterations,
               "sigma_ordering_count": self.sigma_ordering_count(),
               "loss_ordering_count": self.loss_ordering_count()}
        for v in VARIANTS:
            out[f"mean_sigma_{v}"] = float(np.mean([t.mean_sigma[v] for t in self.trials]))
            out[f"loss_{v}"] = float(np.mean([t.losses[v][self.iterations] for t in self.trials]))
        return out


def layer_spectra_experiment(dims=(32, 16, 16, 8), N=16, trials=10, seed=0, bins=50,
                             iterations=10, lr=0.1, epsilon=0.1, generator="synthetic_images",
                             data_scale=None, n_classes=8, workers=1):
    """Block-Jacobian spectra of Chain, Res and ResAvg over the first GD iterations.

    Trial t uses seed ``seed + t`` for data, skip matrix and initial
    parameters, which are shared by all three variants.  Spectra pool the
    block Jacobians at iterates ``0 .. iterations - 1``; losses run through
    iterate ``iterations``.
    """
    if data_scale is None:
        data_scale = float(np.sqrt(dims[0]))
    args = [(seed + t, tuple(dims), N, generator, data_scale, n_classes, iterations, lr, epsilon)
            for t in range(trials)]
    results = _map_trials(_spectra_trial, args, workers)
    pooled = {v: np.concatenate([r.values[v] for r in results]) for v in VARIANTS}
    upper = max(p.max() for p in pooled.values())
    spectra = {v: spectrum_from_values(pooled[v], bins, upper) for v in VARIANTS}
    return LayerSpectraResult(trials=results, spectra=spectra, iterations=iterations)

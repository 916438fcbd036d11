"""Chain-rule machinery shared by residual branches and whole networks."""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeError


def split_params(layers, theta):
    """Cut a flat parameter vector into per-layer pieces."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    sizes = [layer.n_params for layer in layers]
    if theta.size != sum(sizes):
        raise ShapeError(f"expected {sum(sizes)} parameters, got {theta.size}")
    return np.split(theta, np.cumsum(sizes)[:-1])


def forward_trace(layers, thetas, X):
    """Activations ``[X, f_1(X), f_2(f_1(X)), ...]``.

    Raises NonFiniteError naming the first layer whose output is not finite.
    """
    acts = [np.asarray(X, dtype=np.float64)]
    for idx, (layer, theta) in enumerate(zip(layers, thetas)):
        out = layer.forward(theta, acts[-1])
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"layer {idx} ({layer.kind}) produced non-finite output", where=idx)
        acts.append(out)
    return acts


def derivative_blocks(layers, thetas, acts):
    """Per-layer parameter derivatives of the composite, and its input Jacobian.

    Block l is ``J_L ... J_{l+1} D_l`` with the product accumulated right to
    left starting from the output, so each layer Jacobian is formed once.
    """
    N = acts[0].shape[1]
    running = np.eye(layers[-1].d_out * N)
    blocks = [None] * len(layers)
    for l in range(len(layers) - 1, -1, -1):
        layer, theta, X = layers[l], thetas[l], acts[l]
        if layer.n_params:
            blocks[l] = running @ layer.param_derivative(theta, X)
        else:
            blocks[l] = np.zeros((running.shape[0], 0))
        running = running @ layer.jacobian(theta, X)
    return blocks, running

"""Smoothness and regularity bound ledgers.

A ledger entry ``(b, c)`` says a matrix-valued map is bounded by ``b`` and
Lipschitz with constant ``c`` in the spectral norm.  Products compose as
``(prod b_i, sum_i c_i prod_{j != i} b_j)``.

Analytic constants used below (s = scale, e = epsilon):

* en:  |en'| <= e^-1/2 at 0,  |en''| <= (3/2)(4/5)^(5/2) / e at w^2 = e/4
* wn:  |Dwn| <= e^-1/2,       |D2wn| <= 4 / (sqrt(3) e)
* tanh: |phi'| <= 1,          |phi''| <= 4 / (3 sqrt(3))
* bn:  |Jbn| <= e^-1/2,       |D2bn| <= 4 / (sqrt(3 N) e)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, RankError, UncertifiedError, UnsupportedLayerError
from .layers import (
    Affine,
    BatchNorm,
    NormAffine,
    Nonlinearity,
    Residual,
    param_D,
    residual_J,
)
from .numerics import singular_values, smallest_sv

EN_SECOND_MAX = 1.5 * 0.8 ** 2.5          # times 1/epsilon
WN_SECOND_MAX = 4.0 / math.sqrt(3.0)      # times 1/epsilon
TANH_SECOND_MAX = 4.0 / (3.0 * math.sqrt(3.0))
COV_EIG_FLOOR = 1e-6

CERTIFIED = "certified"
CONDITIONAL = "conditional"
EMPIRICAL = "empirical"


@dataclass
class BoundEntry:
    b: float
    c: float
    status: str = CERTIFIED
    note: str = ""


@dataclass
class BoundLedger:
    per_layer: list = field(default_factory=list)
    composed_bound: float = 1.0
    composed_lipschitz: float = 0.0

    def rows(self):
        out = [{"factor": i, "b": b, "c": c} for i, (b, c) in enumerate(self.per_layer)]
        out.append({"factor": "composed", "b": self.composed_bound, "c": self.composed_lipschitz})
        return out


def compose_bounds(factors):
    """Bound and Lipschitz constant of a pointwise product of matrix maps.

    Factors are summed in a canonical (sorted) order so that the result is
    exactly invariant under permutation of the input.
    """
    factors = [(float(b), float(c)) for b, c in factors]
    for b, c in factors:
        if b < 0 or c < 0 or not (math.isfinite(b) and math.isfinite(c)):
            raise ValueError(f"bounds must be finite and non-negative, got ({b}, {c})")
    canon = sorted(factors)
    bound = 1.0
    for b, _ in canon:
        bound *= b
    lip = 0.0
    for i, (_, c) in enumerate(canon):
        others = 1.0
        for j, (b, _) in enumerate(canon):
            if j != i:
                others *= b
        lip += c * others
    return BoundLedger(per_layer=factors, composed_bound=bound, composed_lipschitz=lip)


def _weight_norm_bound(layer):
    s = layer.resolved_scale
    if layer.norm_kind == "weight":
        return s * math.sqrt(layer.d_out)
    return s * math.sqrt(layer.d_out * layer.d_in)


def _second_max(layer):
    if layer.norm_kind == "weight":
        return WN_SECOND_MAX / layer.epsilon
    return EN_SECOND_MAX / layer.epsilon


def jacobian_norm_bound(layer):
    """Global bound on ``|Jf|_2`` independent of parameters and data."""
    if isinstance(layer, NormAffine):
        return _weight_norm_bound(layer)
    if isinstance(layer, Nonlinearity):
        return 1.0
    if isinstance(layer, BatchNorm):
        return layer.epsilon ** -0.5
    if isinstance(layer, Residual):
        return singular_values(layer.skip)[0] + branch_jacobian_bound(layer.branch)
    raise UnsupportedLayerError(f"{layer.kind} has no global Jacobian bound")


def branch_jacobian_bound(branch):
    """Certified bound on the spectral norm of a composite's input Jacobian."""
    out = 1.0
    for layer in branch:
        out *= jacobian_norm_bound(layer)
    return out


def covariance_certificate(data):
    """Smallest eigenvalue of the row covariance of each sample in ``data``."""
    samples = data if isinstance(data, (list, tuple)) else [data]
    worst = math.inf
    for X in samples:
        X = np.asarray(X, dtype=np.float64)
        Y = X - X.mean(axis=1, keepdims=True)
        cov = Y @ Y.T / X.shape[1]
        worst = min(worst, float(np.linalg.eigvalsh(cov)[0]))
    return worst


def layer_bound_constants(layer, data_ball_radius, data=None, N=None):
    """Ledger entries for the forward map, J and D of one layer.

    ``data_ball_radius`` bounds the Frobenius norm of the layer input.  Batch
    norm needs ``data`` (one matrix or a list) to certify a nondegenerate
    covariance; its constants are then marked conditional.  Biased
    normalised affine layers need the column count ``N``.
    """
    R = float(data_ball_radius)
    if R <= 0:
        raise ValueError("data_ball_radius must be positive")

    if isinstance(layer, NormAffine):
        pn = _weight_norm_bound(layer)
        dP = layer.resolved_scale * layer.epsilon ** -0.5
        d2P = layer.resolved_scale * _second_max(layer)
        fwd = BoundEntry(pn * R, pn + dP * R)
        J = BoundEntry(pn, dP)
        D = BoundEntry(R * dP, dP + R * d2P)
        if layer.bias:
            if N is None:
                raise ValueError("biased layers need N for their bias-block constants")
            rn, e_half = math.sqrt(N), layer.epsilon ** -0.5
            fwd = BoundEntry(fwd.b + math.sqrt(layer.d_out) * rn, fwd.c + rn * e_half)
            D = BoundEntry(D.b + rn * e_half, D.c + rn * EN_SECOND_MAX / layer.epsilon)
        return {"forward": fwd, "J": J, "D": D}

    if isinstance(layer, Nonlinearity):
        if layer.phi == "tanh":
            return {"forward": BoundEntry(R, 1.0), "J": BoundEntry(1.0, TANH_SECOND_MAX)}
        return {"forward": BoundEntry(R, 1.0), "J": BoundEntry(1.0, 0.0)}

    if isinstance(layer, BatchNorm):
        if data is None:
            raise UncertifiedError("batch norm constants need data to certify nondegenerate covariance")
        lam = covariance_certificate(data)
        if not lam > COV_EIG_FLOOR:
            raise UncertifiedError(f"covariance smallest eigenvalue {lam:.3g} <= {COV_EIG_FLOOR}")
        N = (data[0] if isinstance(data, (list, tuple)) else np.asarray(data)).shape[1]
        eps = layer.epsilon
        note = f"valid for inputs with nondegenerate covariance (sampled min eig {lam:.3g})"
        return {
            "forward": BoundEntry(math.sqrt(layer.d * N), eps ** -0.5, CONDITIONAL, note),
            "J": BoundEntry(eps ** -0.5, 4.0 / (math.sqrt(3.0 * N) * eps), CONDITIONAL, note),
        }

    if isinstance(layer, Residual):
        return residual_bound_constants(layer, R, data, N)

    if isinstance(layer, Affine):
        raise UnsupportedLayerError("unnormalised affine layers are unbounded over parameter space")
    raise UnsupportedLayerError(f"unsupported layer kind {getattr(layer, 'kind', type(layer))}")


def residual_bound_constants(layer, radius, data=None, N=None):
    """Propagate radii and Lipschitz constants through a residual branch.

    With ``L_j`` the Lipschitz constant of ``(theta, X) -> Y_j`` (input of
    branch layer j), factor ``J_j`` is Lipschitz with ``c_j (1 + L_j)``.
    """
    R = radius
    L = 1.0
    J_factors, D_entries, status = [], [], CERTIFIED
    inputs = []
    for sub in layer.branch:
        ent = layer_bound_constants(sub, R, data, N)
        if any(e.status != CERTIFIED for e in ent.values()):
            status = CONDITIONAL
        inputs.append((ent, L))
        J_factors.append((ent["J"].b, ent["J"].c * (1.0 + L)))
        L = ent["forward"].c * (1.0 + L)
        R = ent["forward"].b
    jg = compose_bounds(J_factors)
    # D block l = J_n ... J_{l+1} D_l
    for l, (ent, L_in) in enumerate(inputs):
        if "D" not in ent:
            continue
        led = compose_bounds(J_factors[l + 1:] + [(ent["D"].b, ent["D"].c * (1.0 + L_in))])
        D_entries.append((led.composed_bound, led.composed_lipschitz))
    s_norm = float(singular_values(layer.skip)[0])
    D_b = math.sqrt(sum(b * b for b, _ in D_entries)) if D_entries else 0.0
    D_c = sum(c for _, c in D_entries)
    return {
        "forward": BoundEntry(s_norm * radius + R, s_norm + L, status),
        "J": BoundEntry(s_norm + jg.composed_bound, jg.composed_lipschitz, status),
        "D": BoundEntry(D_b, D_c, status),
    }


def beta_estimate(grad, center, radius, samples=64, seed=0, power_steps=8, safety=2.0):
    """Empirical gradient-Lipschitz constant around ``center``.

    For each of ``samples`` points drawn uniformly from the ball, a few
    power iterations on finite-difference Hessian-vector products pick the
    most curved direction; every visited pair contributes its secant slope
    ``|grad(t1) - grad(t2)| / |t1 - t2|``.  Returns ``safety`` times the
    largest slope.  Deterministic given ``seed``.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    center = np.asarray(center, dtype=np.float64).reshape(-1)
    p = center.size
    rng = np.random.default_rng(seed)
    h = 1e-4 * max(radius, 1e-3)
    best = 0.0

    def g(theta):
        out = np.asarray(grad(theta), dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError("non-finite gradient while estimating beta")
        return out

    for _ in range(samples):
        u = rng.standard_normal(p)
        u /= np.linalg.norm(u) or 1.0
        t1 = center + radius * rng.uniform() ** (1.0 / p) * u
        g1 = g(t1)
        v = rng.standard_normal(p)
        v /= np.linalg.norm(v) or 1.0
        for _ in range(power_steps):
            t2 = t1 + h * v
            diff = g(t2) - g1
            slope = np.linalg.norm(diff) / np.linalg.norm(t2 - t1)
            best = max(best, slope)
            nrm = np.linalg.norm(diff)
            if nrm == 0.0:
                break
            v = diff / nrm
    return safety * best


def sigma_residual_J_bound(delta, branch=None):
    """Lower bound ``delta`` on ``sigma(Jf)`` for an isometric-skip residual block.

    If ``branch`` is given its certified Jacobian bound must not exceed
    ``1 - delta``.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if branch is not None:
        bound = branch_jacobian_bound(branch)
        if bound > 1.0 - delta:
            raise UncertifiedError(f"branch bound {bound:.4g} exceeds 1 - delta = {1.0 - delta:.4g}")
    return float(delta)


def verify_sigma_residual_J(layer, delta, samples=50, seed=0, theta_scale=3.0, data_scale=1.0, N=2):
    """Smallest singular value of ``Jf`` over random parameters and inputs.

    Returns ``(min_sigma, holds)`` where ``holds`` means ``min_sigma > delta``.
    """
    bound = sigma_residual_J_bound(delta, layer.branch)
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(samples):
        theta = theta_scale * rng.standard_normal(layer.n_params)
        X = data_scale * rng.standard_normal((layer.d_in, N))
        worst = min(worst, smallest_sv(residual_J(layer, theta, X)))
    return worst, worst > bound


def sigma_D_en(w, epsilon):
    """Smallest singular value of D en(w): ``min eps (eps + w_ij^2)^(-3/2)``."""
    w = np.asarray(w, dtype=np.float64)
    return float(np.min(epsilon * (epsilon + w * w) ** -1.5))


def sigma_param_affine_D_bound(X, w, norm_kind="entry", epsilon=0.1, scale=1.0):
    """``sigma(X) * sigma(DP(w))``, a lower bound on ``sigma(D aff_P(w, X))``."""
    X = np.asarray(X, dtype=np.float64)
    d0, N = X.shape
    if N > d0:
        raise RankError(f"need N <= d_0, got N={N}, d_0={d0}")
    sx = singular_values(X)
    if not sx[-1] > 1e-8 * sx[0]:
        raise RankError("data matrix is rank deficient")
    if norm_kind == "entry":
        sp = scale * sigma_D_en(w, epsilon)
    else:
        sp = scale * smallest_sv(param_D(norm_kind, w, epsilon))
    return float(sx[-1] * sp)

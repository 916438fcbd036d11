"""Costs, full-batch gradient descent with PL diagnostics, and certificates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import beta_estimate
from .errors import NonFiniteError, ShapeError
from .network import as_vector, pf_derivative, pf_map
from .numerics import lambda_min_gram

log = logging.getLogger(__name__)

COST_KINDS = ("square", "softmax_cross_entropy")
TRACE_COLUMNS = ("step", "loss", "grad_norm", "lambda_df", "mu_t", "pl_residual",
                 "first_layer_norm", "step_size")


@dataclass
class CostSpec:
    """Mean per-example cost against labels ``Y`` (``d_L x N``)."""

    kind: str
    Y: np.ndarray

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"cost kind must be one of {COST_KINDS}")
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim != 2 or not np.all(np.isfinite(self.Y)):
            raise ValueError("labels must be a finite 2-D array")
        if self.kind == "softmax_cross_entropy":
            one_hot = np.all((self.Y == 0.0) | (self.Y == 1.0)) and np.all(self.Y.sum(axis=0) == 1.0)
            if not one_hot:
                raise ValueError("cross-entropy labels must be one-hot columns")


def _log_softmax(Z):
    Zs = Z - Z.max(axis=0, keepdims=True)
    return Zs - np.log(np.exp(Zs).sum(axis=0, keepdims=True))


def cost_eval_grad(cost, Z):
    """Return ``(gamma, Dgamma, mu_gamma)`` at outputs ``Z``.

    ``Dgamma`` is the row-major vectorised gradient.  ``mu_gamma`` is the PL
    constant of gamma (``4/N`` for square cost, infimum 0) or None for
    cross-entropy, which is not PL on unbounded sets.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape != cost.Y.shape:
        raise ShapeError(f"outputs {Z.shape} do not match labels {cost.Y.shape}")
    N = Z.shape[1]
    if cost.kind == "square":
        R = Z - cost.Y
        return float(np.sum(R * R) / N), (2.0 / N * R).reshape(-1), 4.0 / N
    logp = _log_softmax(Z)
    gamma = float(-np.sum(cost.Y * logp) / N)
    grad = (np.exp(logp) - cost.Y) / N
    return gamma, grad.reshape(-1), None


def _evaluate(net, theta, X, cost):
    Z, _ = pf_map(net, theta, X)
    gamma, dgamma, mu_gamma = cost_eval_grad(cost, Z)
    _, DF = pf_derivative(net, theta, X)
    return gamma, DF.T @ dgamma, DF, mu_gamma


def loss_and_grad(net, params, X, cost):
    """``loss = gamma(F(theta))`` and its gradient ``DF^T Dgamma^T``."""
    theta = as_vector(net, params)
    loss, grad, _, _ = _evaluate(net, theta, X, cost)
    if not math.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    return loss, grad


@dataclass
class TrainTrace:
    """Per-step diagnostics; entry t describes the iterate theta_t."""

    step: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    lambda_df: list = field(default_factory=list)
    mu_t: list = field(default_factory=list)
    pl_residual: list = field(default_factory=list)
    first_layer_norm: list = field(default_factory=list)
    step_size: list = field(default_factory=list)
    eta: float = float("nan")
    beta: float = float("nan")
    mu_gamma: Optional[float] = None
    loss_star: float = 0.0
    final_params: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.step)

    def rows(self):
        return [{c: getattr(self, c)[i] for c in TRACE_COLUMNS} for i in range(len(self))]

    def array(self, name):
        return np.asarray(getattr(self, name), dtype=np.float64)


def auto_step_size(net, theta0, X, cost, radius=None, samples=64, seed=0):
    """``(eta, beta_hat)`` with ``eta = 1 / beta_hat``, inside the ``eta < 2/beta`` regime."""
    theta0 = as_vector(net, theta0)
    if radius is None:
        radius = max(1.0, float(np.linalg.norm(theta0)))
    beta = beta_estimate(lambda th: loss_and_grad(net, th, X, cost)[1], theta0, radius,
                         samples=samples, seed=seed)
    return 1.0 / beta, beta


def gd_train(net, params0, X, cost, eta="auto", steps=100, diagnostics=True, diag_every=1,
             loss_star=0.0, beta=None, beta_samples=64, beta_radius=None, seed=0):
    """Full-batch gradient descent ``theta <- theta - eta * grad``.

    With ``eta="auto"`` the step is ``1 / beta_hat`` from :func:`beta_estimate`.
    Diagnostics (smallest eigenvalue of ``DF DF^T`` and the PL residual) are
    recorded every ``diag_every`` steps and left as NaN otherwise.
    """
    theta = as_vector(net, params0).copy()
    n_first = net.layers[0].n_params
    if eta == "auto":
        eta, beta_hat = auto_step_size(net, theta, X, cost, beta_radius, beta_samples, seed)
        beta = beta_hat if beta is None else beta
    elif not eta > 0:
        raise ValueError("eta must be positive or 'auto'")
    trace = TrainTrace(eta=float(eta), beta=float(beta) if beta is not None else float("nan"),
                       loss_star=float(loss_star))
    for t in range(steps + 1):
        loss, grad, DF, mu_gamma = _evaluate(net, theta, X, cost)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NonFiniteError(f"non-finite loss or gradient at step {t}", where=t)
        trace.mu_gamma = mu_gamma
        gnorm = float(np.linalg.norm(grad))
        trace.step.append(t)
        trace.loss.append(loss)
        trace.grad_norm.append(gnorm)
        trace.first_layer_norm.append(float(np.linalg.norm(theta[:n_first])))
        trace.step_size.append(float(eta))
        if diagnostics and t % diag_every == 0:
            lam = lambda_min_gram(DF)
            mu = (mu_gamma if mu_gamma is not None else 0.0) * lam
            trace.lambda_df.append(lam)
            trace.mu_t.append(mu)
            trace.pl_residual.append(gnorm ** 2 - mu * (loss - loss_star))
        else:
            trace.lambda_df.append(float("nan"))
            trace.mu_t.append(float("nan"))
            trace.pl_residual.append(float("nan"))
        if t == steps:
            break
        theta = theta - eta * grad
        if not np.all(np.isfinite(theta)):
            raise NonFiniteError(f"non-finite parameters after step {t}", where=t)
    trace.final_params = theta
    return trace


@dataclass
class CertificateReport:
    alpha: float
    product: np.ndarray        # product[t] = prod_{i<t} (1 - mu_i alpha)
    bound_holds: np.ndarray    # l_t - l* <= product[t] (l_0 - l*)
    step_holds: np.ndarray     # l_{t+1} - l* <= (1 - mu_t alpha)(l_t - l*)
    log_partial_sums: np.ndarray
    vacuous: np.ndarray        # mu_t alpha >= 1

    @property
    def holds(self):
        return bool(np.all(self.bound_holds) and np.all(self.step_holds))


def log_product_partial_sums(mu, alpha):
    """Partial sums of ``log(1 - mu_t alpha)``; -inf once a factor is <= 0."""
    f = 1.0 - np.asarray(mu, dtype=np.float64) * alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(f > 0, np.log(np.where(f > 0, f, 1.0)), -np.inf)
    return np.cumsum(terms)


def roundoff_floor(Y, N):
    """Square-cost gap below which loss differences are float64 noise.

    Outputs carry relative error of order ``100 eps`` after many layers, so the
    gap ``||Z - Y||^2 / N`` cannot be resolved below ``(100 eps)^2 ||Y||^2 / N``.
    """
    scale = max(float(np.sum(np.asarray(Y) ** 2)), 1.0)
    return (100.0 * np.finfo(np.float64).eps) ** 2 * scale / N


def convergence_certificate(trace, eta, beta, rtol=1e-9, floor=0.0):
    """Product-form bound on the sub-optimality gap along a recorded trace.

    ``alpha = eta (1 - beta eta / 2)``.  Steps where ``mu_t alpha >= 1`` are
    flagged vacuous and their factor is clamped to 0 in the product.  Gaps at
    or below ``floor`` (see :func:`roundoff_floor`) count as converged.
    """
    alpha = eta * (1.0 - 0.5 * beta * eta)
    mu = trace.array("mu_t")
    if np.any(np.isnan(mu)):
        raise ValueError("certificate needs mu_t at every step (diag_every=1)")
    gap = trace.array("loss") - trace.loss_star
    factors = 1.0 - mu * alpha
    vacuous = factors <= 0.0
    factors = np.clip(factors, 0.0, None)
    product = np.concatenate([[1.0], np.cumprod(factors[:-1])])
    slack = rtol * max(abs(gap[0]), 1e-300)
    bound_holds = gap <= product * gap[0] + slack + floor
    step_holds = gap[1:] <= factors[:-1] * gap[:-1] + rtol * np.abs(gap[:-1]) + floor + 1e-300
    return CertificateReport(alpha=alpha, product=product, bound_holds=bound_holds,
                             step_holds=step_holds,
                             log_partial_sums=log_product_partial_sums(mu[:-1], alpha),
                             vacuous=vacuous)


@dataclass
class EulerReport:
    r: np.ndarray
    flow: np.ndarray
    deviation: np.ndarray
    max_deviation: float
    bounded: bool
    mu_curve: np.ndarray
    slope: float
    fit_range: tuple


def flow_solution(C, epsilon, t):
    """Solution ``(4 C eps t + 1)^(1/4)`` of ``r' = C eps r^-3`` with ``r(0) = 1``."""
    return (4.0 * C * epsilon * np.asarray(t, dtype=np.float64) + 1.0) ** 0.25


def worst_case_euler(C=1.0, epsilon=1.0, eta=1.0, T=100_000, fit_start=None):
    """Euler iterates of ``r' = C eps r^-3`` from ``r_0 = 1`` against the exact flow.

    Also returns the singular-value lower bound ``eps / (eps + r_t^2)^(3/2)``
    and its least-squares log-log slope over ``t in [fit_start, T]``
    (default ``T / 100``), expected near -3/4.
    """
    if min(C, epsilon, eta) <= 0:
        raise ValueError("C, epsilon and eta must be positive")
    a = eta * C * epsilon
    r = np.empty(T + 1)
    r[0] = x = 1.0
    for t in range(T):
        x = x + a / (x * x * x)
        r[t + 1] = x
    t = np.arange(T + 1, dtype=np.float64)
    flow = flow_solution(C, epsilon, eta * t)
    dev = np.abs(r - flow)
    half = (T + 1) // 2
    # bounded: the second half never exceeds the first-half maximum by more than rounding
    bounded = bool(T < 2 or dev[half:].max() <= dev[:half].max() * (1.0 + 1e-6) + 1e-12)
    mu_curve = epsilon / (epsilon + r * r) ** 1.5
    lo = max(1, int(fit_start if fit_start is not None else T // 100))
    idx = np.unique(np.geomspace(lo, T, num=200).astype(int)) if T > lo else np.array([lo])
    slope = float(np.polyfit(np.log(idx), np.log(mu_curve[idx]), 1)[0]) if idx.size > 1 else float("nan")
    return EulerReport(r=r, flow=flow, deviation=dev, max_deviation=float(dev.max()),
                       bounded=bounded, mu_curve=mu_curve, slope=slope, fit_range=(lo, T))

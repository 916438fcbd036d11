"""Normalised residual networks as multilayer parameterised systems.

Layers, parameter-function maps and their derivatives, regularity and
smoothness bounds, gradient descent with PL diagnostics, and the spectrum
experiments built on them.
"""

from .errors import (
    ConvergenceError,
    MpsError,
    NonFiniteError,
    RankError,
    ShapeError,
    UncertifiedError,
    UnsupportedLayerError,
)
from .layers import Affine, BatchNorm, NormAffine, Nonlinearity, Residual
from .network import (
    NetworkSpec,
    ParamState,
    build_normalised_resnet,
    init_params,
    lambda_lower_bound,
    pf_derivative,
    pf_map,
    validate_normalised_resnet,
)
from .training import CostSpec, convergence_certificate, gd_train, loss_and_grad, worst_case_euler

__version__ = "0.1.0"

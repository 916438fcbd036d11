import math

import numpy as np
import pytest

from mpsnet.errors import NonFiniteError, ShapeError
from mpsnet.experiments.data import gen_data
from mpsnet.layers import Affine, NormAffine, Nonlinearity
from mpsnet.network import NetworkSpec, build_normalised_resnet, init_params
from mpsnet.numerics import finite_diff_jacobian
from mpsnet.training import (
    CostSpec,
    TrainTrace,
    convergence_certificate,
    cost_eval_grad,
    flow_solution,
    gd_train,
    log_product_partial_sums,
    loss_and_grad,
    roundoff_floor,
    worst_case_euler,
)


# costs ---------------------------------------------------------------------

def test_square_cost_at_labels(rng):
    Y = rng.standard_normal((3, 4))
    gamma, grad, mu = cost_eval_grad(CostSpec("square", Y), Y)
    assert gamma == 0 and not np.any(grad) and mu == 1.0


def test_square_cost_pl_identity(rng):
    Y = rng.standard_normal((3, 5))
    for _ in range(20):
        Z = rng.standard_normal((3, 5))
        gamma, grad, mu = cost_eval_grad(CostSpec("square", Y), Z)
        assert mu == 4 / 5
        assert grad @ grad == pytest.approx(mu * gamma, rel=1e-12)


def test_cross_entropy_uniform_logits():
    Y = np.eye(4)[:, [0, 1, 2, 3, 0]]
    gamma, _, mu = cost_eval_grad(CostSpec("softmax_cross_entropy", Y), np.zeros((4, 5)))
    assert gamma == pytest.approx(math.log(4)) and mu is None


@pytest.mark.parametrize("kind", ["square", "softmax_cross_entropy"])
def test_cost_gradient_fd(rng, kind):
    Y = np.eye(3)[:, [0, 2, 1, 1]]
    cost = CostSpec(kind, Y)
    Z = rng.standard_normal((3, 4))
    fd = finite_diff_jacobian(lambda z: np.array([cost_eval_grad(cost, z.reshape(3, 4))[0]]), Z.reshape(-1))
    assert np.allclose(cost_eval_grad(cost, Z)[1], fd[0], atol=1e-8)


def test_cost_validation():
    with pytest.raises(ValueError):
        CostSpec("softmax_cross_entropy", np.full((2, 2), 0.5))
    with pytest.raises(ValueError):
        CostSpec("hinge", np.zeros((2, 2)))
    with pytest.raises(ValueError):
        CostSpec("square", np.array([[np.nan]]))
    with pytest.raises(ShapeError):
        cost_eval_grad(CostSpec("square", np.zeros((2, 2))), np.zeros((2, 3)))


# gradients -----------------------------------------------------------------

def test_gradient_zero_at_global_minimum(rng):
    net = NetworkSpec([Affine(3, 2)])
    theta, X = rng.standard_normal(8), rng.standard_normal((3, 4))
    Y = theta[:6].reshape(2, 3) @ X + theta[6:, None]
    _, g = loss_and_grad(net, theta, X, CostSpec("square", Y))
    assert np.allclose(g, 0, atol=1e-14)


def test_single_linear_layer_least_squares_gradient(rng):
    net = NetworkSpec([Affine(3, 2, bias=False)])
    A, X, Y = rng.standard_normal((2, 3)), rng.standard_normal((3, 4)), rng.standard_normal((2, 4))
    _, g = loss_and_grad(net, A.reshape(-1), X, CostSpec("square", Y))
    assert np.allclose(g, (2 / 4 * (A @ X - Y) @ X.T).reshape(-1), atol=1e-12)


def test_loss_gradient_fd_three_layers(rng):
    net = NetworkSpec([NormAffine(3, 3, "entry", 0.1, 1.0), Nonlinearity(3), NormAffine(3, 2, "weight", 0.1)])
    theta, X = rng.standard_normal(net.n_params), rng.standard_normal((3, 2))
    cost = CostSpec("square", rng.standard_normal((2, 2)))
    fd = finite_diff_jacobian(lambda t: np.array([loss_and_grad(net, t, X, cost)[0]]), theta)
    assert np.allclose(loss_and_grad(net, theta, X, cost)[1], fd[0], atol=1e-6)


# gradient descent ----------------------------------------------------------

def test_quadratic_converges_in_one_step(rng):
    # Z = theta / sqrt(2) with zero labels gives loss |theta|^2 / 2
    net = NetworkSpec([Affine(1, 5, bias=False)])
    X = np.array([[1 / math.sqrt(2)]])
    trace = gd_train(net, rng.standard_normal(5), X, CostSpec("square", np.zeros((5, 1))), eta=1.0, steps=1)
    assert trace.loss[1] == pytest.approx(0.0, abs=1e-30)
    assert np.allclose(trace.final_params, 0, atol=1e-15)


def test_divergent_step_reports_step_index():
    net = NetworkSpec([Affine(2, 2), Nonlinearity(2, "identity")])
    cost = CostSpec("square", np.ones((2, 2)))
    with pytest.raises(NonFiniteError) as err, np.errstate(all="ignore"):
        gd_train(net, np.ones(6), np.eye(2), cost, eta=1e150, steps=20, diagnostics=False)
    assert isinstance(err.value.where, int)


def test_gd_train_rejects_bad_step():
    net = NetworkSpec([Affine(1, 1)])
    with pytest.raises(ValueError):
        gd_train(net, np.zeros(2), np.ones((1, 1)), CostSpec("square", np.zeros((1, 1))), eta=-1.0)


def _square_setup():
    net = build_normalised_resnet([8, 8, 8, 4])
    ds = gen_data(8, 4, seed=0)
    return net, ds, CostSpec("square", ds.targets(4, 0.5))


def test_square_run_certificate_and_descent():
    net, ds, cost = _square_setup()
    trace = gd_train(net, init_params(net, 0), ds.X, cost, steps=150, beta_samples=32)
    assert len(trace) == 151 and len(trace.rows()) == 151
    assert trace.eta < 2 / trace.beta
    floor = roundoff_floor(cost.Y, ds.N)
    assert np.all(np.diff(trace.loss) <= floor)
    res = trace.array("pl_residual")
    assert np.all(res >= -1e-9 * trace.array("grad_norm") ** 2)
    cert = convergence_certificate(trace, trace.eta, trace.beta, floor=floor)
    assert cert.holds and not cert.vacuous.any()
    gap = trace.array("loss") / trace.loss[0]
    assert np.all(cert.product + floor / trace.loss[0] >= gap)


def test_cross_entropy_run_descends_and_norm_grows():
    net = build_normalised_resnet([8, 8, 8, 4])
    ds = gen_data(8, 4, seed=0, scale=1.5, n_classes=4)
    cost = CostSpec("softmax_cross_entropy", ds.one_hot(4))
    trace = gd_train(net, init_params(net, 0, 0.5), ds.X, cost, steps=300, diagnostics=False)
    assert np.all(np.diff(trace.loss) < 0)
    assert np.all(np.diff(trace.first_layer_norm[1:]) >= 0)
    assert trace.mu_gamma is None and np.isnan(trace.mu_t).all()


# certificate ---------------------------------------------------------------

def _trace(loss, mu):
    tr = TrainTrace(loss=list(loss), mu_t=list(mu))
    tr.step = list(range(len(loss)))
    return tr


def test_certificate_constant_mu():
    mu, eta, beta = 0.3, 0.5, 1.0
    alpha = eta * (1 - beta * eta / 2)
    loss = [(1 - mu * alpha) ** t for t in range(6)]
    cert = convergence_certificate(_trace(loss, [mu] * 6), eta, beta)
    assert cert.alpha == alpha
    assert np.allclose(cert.product, (1 - mu * alpha) ** np.arange(6), rtol=1e-14)
    assert cert.holds


def test_certificate_zero_mu_stalls_and_vacuous_flag():
    cert = convergence_certificate(_trace([1.0, 0.9, 0.8], [0.0, 0.5, 0.5]), 1.0, 0.0)
    assert cert.product[1] == 1.0
    assert cert.vacuous.tolist() == [False, False, False]
    cert = convergence_certificate(_trace([1.0, 0.0, 0.0], [1.5, 0.1, 0.1]), 1.0, 0.0)
    assert cert.vacuous[0] and cert.product[1] == 0.0


def test_certificate_detects_violation():
    cert = convergence_certificate(_trace([1.0, 0.99], [0.5, 0.5]), 1.0, 0.0)
    assert not cert.holds


def test_certificate_needs_every_mu():
    with pytest.raises(ValueError):
        convergence_certificate(_trace([1.0, 0.5], [0.1, float("nan")]), 1.0, 1.0)


def test_log_product_diverges_for_three_quarter_decay():
    t = np.arange(1, 10**6 + 1, dtype=np.float64)
    sums = log_product_partial_sums(0.5 / t ** 0.75, 1.0)
    assert np.all(np.diff(sums) < 0)
    assert sums[-1] / sums[10**4 - 1] > 3.0  # grows like t^(1/4), so unbounded below


def test_log_product_clamps_nonpositive_factors():
    assert log_product_partial_sums([0.5, 2.0], 1.0)[-1] == -np.inf


def test_roundoff_floor_is_tiny():
    f = roundoff_floor(np.ones((4, 4)), 4)
    assert 0 < f < 1e-25


# worst-case dynamics ------------------------------------------------------

def test_euler_consistency_in_small_steps():
    devs = []
    for eta in (1e-2, 1e-3):
        T = int(10 / eta)
        rep = worst_case_euler(1.0, 1.0, eta, T)
        devs.append(rep.max_deviation)
    assert devs[0] < 1e-2 and devs[1] < 1e-3
    assert 5 < devs[0] / devs[1] < 20


def test_worst_case_long_run():
    rep = worst_case_euler(1.0, 1.0, 1.0, 10**6)
    assert np.all(np.diff(rep.r) > 0)
    assert rep.r[-1] > 10 * rep.r[0]
    assert rep.bounded
    assert -0.8 <= rep.slope <= -0.7


def test_flow_solution_and_errors():
    assert flow_solution(1.0, 1.0, 0.0) == 1.0
    assert flow_solution(2.0, 0.5, 20.0) == pytest.approx(81 ** 0.25)
    with pytest.raises(ValueError):
        worst_case_euler(C=0.0)

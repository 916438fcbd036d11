"""Experiment runners: config in, CSV/SVG/JSON files and named assertions out."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..bounds import (
    layer_bound_constants,
    verify_sigma_residual_J,
)
from ..layers import Residual
from ..network import (
    NetworkSpec,
    build_normalised_resnet,
    init_params,
    lambda_lower_bound,
    pf_derivative,
    validate_normalised_resnet,
)
from ..numerics import lambda_min_gram
from ..training import (
    TRACE_COLUMNS,
    CostSpec,
    convergence_certificate,
    gd_train,
    roundoff_floor,
    worst_case_euler,
)
from .data import gen_data
from .gradcheck import gradcheck_suite
from .report import emit_csv, emit_svg_histogram, emit_svg_lines
from .spectra import VARIANTS, identity_shift_experiment, layer_spectra_experiment

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    experiment: str
    summary: dict
    assertions: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    @property
    def failed(self):
        return [k for k, ok in self.assertions.items() if not ok]

    @property
    def ok(self):
        return not self.failed


def _out(cfg):
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _finish(cfg, summary, assertions, files):
    summary = {**summary, "seed": cfg.seed, "config": cfg.to_dict(),
               "assertions": {k: bool(v) for k, v in assertions.items()}}
    path = _out(cfg) / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    return RunResult(cfg.experiment, summary, {k: bool(v) for k, v in assertions.items()},
                     files + [path])


def _with_seed(rows, seed):
    return [{"seed": seed, **r} for r in rows]


def run_identity_shift(cfg):
    res = identity_shift_experiment(n=cfg.param("n"), trials=cfg.trials, seed=cfg.seed,
                                    bins=cfg.bin_count, workers=cfg.param("workers"))
    out, files = _out(cfg), []
    for name, rep in (("A", res.spectrum_A), ("shifted", res.spectrum_shifted)):
        files.append(emit_csv(_with_seed(rep.histogram_rows(), cfg.seed), out / f"spectrum_{name}.csv"))
        files.append(emit_svg_histogram(rep.histogram, out / f"spectrum_{name}.svg",
                                        title=f"{'A' if name == 'A' else 'Id + A'}: mean {rep.mean:.3f} (seed {cfg.seed})"))
    files.append(emit_csv([{"seed": cfg.seed, "trial": t, "mean_sigma_A": a, "mean_sigma_shifted": s}
                           for t, (a, s) in enumerate(zip(res.trial_means_A, res.trial_means_shifted))],
                          out / "trials.csv"))
    summary = res.summary()
    return _finish(cfg, summary, {"shift_exceeds_half": summary["shift"] > 0.5}, files)


def run_layer_spectra(cfg):
    p = cfg.param
    res = layer_spectra_experiment(dims=tuple(p("dims")), N=cfg.data.N, trials=cfg.trials, seed=cfg.seed,
                                   bins=cfg.bin_count, iterations=p("iterations"), lr=p("lr"),
                                   epsilon=p("epsilon"), generator=cfg.data.generator,
                                   data_scale=cfg.data.scale, n_classes=p("n_classes"),
                                   workers=p("workers"))
    out, files = _out(cfg), []
    for v in VARIANTS:
        rep = res.spectra[v]
        files.append(emit_csv(_with_seed(rep.histogram_rows(), cfg.seed), out / f"spectrum_{v}.csv"))
        files.append(emit_svg_histogram(rep.histogram, out / f"spectrum_{v}.svg",
                                        title=f"{v}: mean {rep.mean:.3f} (seed {cfg.seed})"))
    rows = []
    for tr in res.trials:
        for v in VARIANTS:
            for it, loss in enumerate(tr.losses[v]):
                rows.append({"seed": tr.seed, "variant": v, "iteration": it, "loss": loss,
                             "mean_sigma": tr.mean_sigma[v]})
    files.append(emit_csv(rows, out / "trials.csv"))
    curves = res.mean_loss_curves()
    files.append(emit_svg_lines({v: (range(len(c)), c) for v, c in curves.items()}, out / "loss.svg",
                                title=f"mean loss over {cfg.trials} trials (seed {cfg.seed})",
                                xlabel="iteration", ylabel="loss"))
    summary = res.summary()
    need = math.ceil(0.9 * cfg.trials)
    return _finish(cfg, summary, {
        "sigma_ordering": summary["sigma_ordering_count"] >= need,
        "loss_ordering": summary["loss_ordering_count"] >= need,
    }, files)


def _network(cfg):
    if cfg.network is not None:
        return NetworkSpec.from_dict(cfg.network)
    return build_normalised_resnet(cfg.param("dims"), norm_kind=cfg.param("norm_kind"),
                                   epsilon=cfg.param("epsilon"))


def _data(cfg, net, n_classes=None):
    if cfg.data.d0 != net.dims[0]:
        raise ValueError(f"data d0={cfg.data.d0} does not match network input dim {net.dims[0]}")
    return gen_data(cfg.data.d0, cfg.data.N, cfg.data.generator, seed=cfg.data.seed,
                    scale=cfg.data.scale, n_classes=n_classes)


def train_assertions(trace, cost, cert=None, floor=0.0):
    loss = trace.array("loss")
    diffs = np.diff(loss)
    if cost.kind == "square":
        res = trace.array("pl_residual")
        mu = trace.array("mu_t")
        g2 = trace.array("grad_norm") ** 2
        checked = ~np.isnan(res)
        pl_ok = bool(np.all(res[checked] >= -(1e-9 * g2[checked] + mu[checked] * floor)))
        out = {
            "monotone_decrease": bool(np.all(diffs <= floor)),
            "pl_inequality": pl_ok,
            "final_below_1e-6_initial": bool(loss[-1] < 1e-6 * loss[0]),
        }
        if cert is not None:
            out["certificate"] = cert.holds
        return out
    growth = trace.first_layer_norm[-1] / trace.first_layer_norm[0]
    return {
        "strictly_decreasing": bool(np.all(diffs < 0)),
        "final_below_1e-2": bool(loss[-1] < 1e-2),
        "first_layer_norm_grows_3x": bool(growth > 3.0),
    }


def run_train(cfg):
    p = cfg.param
    net = _network(cfg)
    d_L = net.dims[-1]
    cost_kind = p("cost")
    ds = _data(cfg, net, n_classes=d_L)
    if cost_kind == "square":
        cost = CostSpec("square", ds.targets(d_L, p("target_scale")))
    else:
        cost = CostSpec("softmax_cross_entropy", ds.one_hot(d_L))
    theta0 = init_params(net, cfg.seed, p("init_scale"))
    trace = gd_train(net, theta0, ds.X, cost, eta=p("eta"), steps=p("steps"),
                     diagnostics=p("diagnostics"), diag_every=p("diag_every"),
                     beta_samples=p("beta_samples"), seed=cfg.seed)
    out, files = _out(cfg), []
    files.append(emit_csv(_with_seed(trace.rows(), cfg.seed), out / "trace.csv",
                          columns=["seed", *TRACE_COLUMNS]))
    files.append(emit_svg_lines({"loss": (trace.step, trace.loss)}, out / "loss.svg",
                                title=f"{cost_kind} loss (seed {cfg.seed})", ylog=True))
    cert, floor = None, 0.0
    summary = {"eta": trace.eta, "beta": trace.beta, "initial_loss": trace.loss[0],
               "final_loss": trace.loss[-1],
               "first_layer_norm_ratio": trace.first_layer_norm[-1] / trace.first_layer_norm[0]}
    if cost_kind == "square":
        floor = roundoff_floor(cost.Y, ds.N)
        if p("diagnostics") and p("diag_every") == 1 and math.isfinite(trace.beta):
            cert = convergence_certificate(trace, trace.eta, trace.beta, floor=floor)
            summary.update(alpha=cert.alpha, vacuous_steps=int(cert.vacuous.sum()))
    return _finish(cfg, summary, train_assertions(trace, cost, cert, floor), files)


def run_gradcheck(cfg):
    rows = gradcheck_suite(instances=cfg.param("instances"), seed=cfg.seed, h=cfg.param("h"))
    tol = cfg.param("tol")
    files = [emit_csv([{"seed": cfg.seed, "target": r.target, "quantity": r.quantity,
                        "instances": r.instances, "max_abs_err": r.max_abs_err} for r in rows],
                      _out(cfg) / "gradcheck.csv")]
    assertions = {f"{r.target}.{r.quantity}": r.max_abs_err <= tol for r in rows}
    summary = {"tol": tol, "worst": max(r.max_abs_err for r in rows)}
    return _finish(cfg, summary, assertions, files)


def run_worst_case(cfg):
    p = cfg.param
    rep = worst_case_euler(p("C"), p("epsilon"), p("eta"), int(p("T")))
    T = int(p("T"))
    idx = np.unique(np.concatenate([[0], np.geomspace(1, T, 400).astype(int)])) if T else np.array([0])
    rows = [{"seed": cfg.seed, "t": int(t), "r": rep.r[t], "flow": rep.flow[t],
             "deviation": rep.deviation[t], "mu_lower": rep.mu_curve[t]} for t in idx]
    out = _out(cfg)
    files = [emit_csv(rows, out / "worst_case.csv")]
    ts = idx[1:]
    files.append(emit_svg_lines({"Euler r_t": (np.log10(ts), rep.r[ts]), "flow r(t)": (np.log10(ts), rep.flow[ts])},
                                out / "trajectory.svg", title=f"worst-case trajectory (seed {cfg.seed})",
                                xlabel="log10 t", ylabel="r"))
    files.append(emit_svg_lines({"mu lower bound": (np.log10(ts), rep.mu_curve[ts])}, out / "mu.svg",
                                title=f"slope {rep.slope:.4f} (seed {cfg.seed})", xlabel="log10 t",
                                ylabel="mu_t", ylog=True))
    lo, hi = p("slope_range")
    summary = {"slope": rep.slope, "max_deviation": rep.max_deviation, "r_T": float(rep.r[-1])}
    return _finish(cfg, summary, {"slope_in_range": lo <= rep.slope <= hi,
                                  "deviation_bounded": rep.bounded}, files)


def lambda_probe(net, X, probes, seed=0, max_norm=1e4):
    """``(lambda bound, lambda(DF))`` at random parameters with log-uniform norms up to ``max_norm``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(probes):
        theta = rng.standard_normal(net.n_params)
        theta *= 10.0 ** rng.uniform(-1.0, math.log10(max_norm)) / np.linalg.norm(theta)
        _, DF = pf_derivative(net, theta, X)
        out.append((lambda_lower_bound(net, theta, X), lambda_min_gram(DF, method="jacobi")))
    return out


def run_bounds_report(cfg):
    p = cfg.param
    net = _network(cfg)
    ds = _data(cfg, net)
    X = ds.X
    report = validate_normalised_resnet(net, X)
    radius = p("radius") or float(np.linalg.norm(X))
    rows, R = [], radius
    for l, layer in enumerate(net.layers):
        ent = layer_bound_constants(layer, R, data=None, N=ds.N)
        row = {"seed": cfg.seed, "layer": l, "kind": layer.kind, "input_radius": R}
        for key in ("forward", "J", "D"):
            e = ent.get(key)
            row[f"{key}_b"] = e.b if e else ""
            row[f"{key}_c"] = e.c if e else ""
        row["status"] = ent["J"].status
        rows.append(row)
        R = ent["forward"].b
    out = _out(cfg)
    files = [emit_csv(rows, out / "bounds.csv")]
    files.append(emit_csv([{"seed": cfg.seed, "check": k, "passed": c.passed, "detail": c.message}
                           for k, c in report.checks.items()], out / "validation.csv"))
    probes = lambda_probe(net, X, p("probes"), seed=cfg.seed)
    files.append(emit_csv([{"seed": cfg.seed, "probe": i, "lambda_bound": b, "lambda_df": lam}
                           for i, (b, lam) in enumerate(probes)], out / "lambda.csv"))
    sigma = []
    for l, layer in enumerate(net.layers):
        if isinstance(layer, Residual) and layer.skip_kind in ("identity", "partial_isometry"):
            smin, holds = verify_sigma_residual_J(layer, p("delta"), seed=cfg.seed, N=ds.N)
            sigma.append({"seed": cfg.seed, "layer": l, "min_sigma": smin, "delta": p("delta"), "holds": holds})
    files.append(emit_csv(sigma, out / "sigma_residual.csv",
                          columns=["seed", "layer", "min_sigma", "delta", "holds"]))
    assertions = {f"validate.{k}": c.passed for k, c in report.checks.items()}
    assertions["lambda_bound_positive"] = all(b > 0 for b, _ in probes)
    assertions["lambda_bound_below_lambda_df"] = all(b <= lam + 1e-8 for b, lam in probes)
    assertions["sigma_residual_J"] = all(s["holds"] for s in sigma)
    summary = {"min_lambda_bound": min(b for b, _ in probes), "probes": len(probes),
               "min_residual_sigma": min((s["min_sigma"] for s in sigma), default=float("nan"))}
    return _finish(cfg, summary, assertions, files)


RUNNERS = {
    "identity_shift": run_identity_shift,
    "layer_spectra": run_layer_spectra,
    "train": run_train,
    "gradcheck": run_gradcheck,
    "worst_case": run_worst_case,
    "bounds_report": run_bounds_report,
}


def run(cfg):
    return RUNNERS[cfg.experiment](cfg)

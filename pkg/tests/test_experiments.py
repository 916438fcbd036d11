import json

import numpy as np
import pytest

from mpsnet.errors import RankError
from mpsnet.experiments.config import ExperimentConfig, load_config
from mpsnet.experiments.data import gen_data
from mpsnet.experiments.report import emit_csv, emit_svg_histogram, emit_svg_lines, read_csv
from mpsnet.experiments.runs import run
from mpsnet.experiments.spectra import (
    block_indices,
    build_variants,
    identity_shift_experiment,
    layer_spectra_experiment,
)
from mpsnet.network import build_normalised_resnet, init_params, validate_normalised_resnet
from mpsnet.numerics import kron, singular_values
from mpsnet.training import TRACE_COLUMNS

import mpsnet.experiments.data as data_mod


# data ----------------------------------------------------------------------

def test_square_orthogonalised_data_is_perfectly_conditioned():
    X = gen_data(6, 6, seed=3).X
    sv = singular_values(X)
    assert sv[-1] / sv[0] == pytest.approx(1.0, abs=1e-14)


def test_single_column():
    ds = gen_data(5, 1, kind="synthetic_images", seed=0)
    assert ds.X.shape == (5, 1) and np.linalg.norm(ds.X) > 0


@pytest.mark.parametrize("kind", ["gaussian_orthogonalised", "synthetic_images"])
def test_seed_sweep_passes_rank_test_and_check_e(kind):
    net = build_normalised_resnet([16, 8])
    for seed in range(100):
        ds = gen_data(16, 8, kind=kind, seed=seed)
        sv = singular_values(ds.X)
        assert sv[-1] > 1e-8 * sv[0]
        assert validate_normalised_resnet(net, ds.X).checks["e_data_full_rank"].passed


def test_gen_data_errors(monkeypatch):
    with pytest.raises(ValueError):
        gen_data(3, 4)
    with pytest.raises(ValueError):
        gen_data(3, 2, kind="mnist")
    monkeypatch.setattr(data_mod, "numerical_rank_ok", lambda X, rtol: (False, 0.0, 1.0))
    with pytest.raises(RankError):
        gen_data(4, 2)


def test_labels_and_targets():
    ds = gen_data(8, 6, seed=1, n_classes=3)
    Y = ds.one_hot(3)
    assert np.array_equal(Y.sum(axis=0), np.ones(6)) and set(ds.labels) == {0, 1, 2}
    T = ds.targets(3, 0.5)
    assert set(np.unique(T)) == {-0.5, 0.5}


def test_gen_data_deterministic():
    a, b = gen_data(8, 4, seed=7, kind="synthetic_images"), gen_data(8, 4, seed=7, kind="synthetic_images")
    assert np.array_equal(a.X, b.X) and np.array_equal(a.labels, b.labels)


# identity shift ------------------------------------------------------------

def test_identity_shift_zero_matrix():
    res = identity_shift_experiment(n=6, trials=2, zero=True, bins=3)
    assert np.array_equal(res.spectrum_A.singular_values, np.zeros(12))
    assert np.allclose(res.spectrum_shifted.singular_values, 1)


def test_identity_shift_small_and_errors():
    res = identity_shift_experiment(n=50, trials=3, seed=1, bins=10)
    assert len(res.trial_means_A) == 3
    assert res.mean_shifted > res.mean_A
    assert sum(c for _, _, c in res.spectrum_A.histogram) == 150
    with pytest.raises(ValueError):
        identity_shift_experiment(n=1)
    with pytest.raises(ValueError):
        identity_shift_experiment(n=4, trials=0)


def test_identity_shift_workers_match_serial():
    a = identity_shift_experiment(n=40, trials=2, seed=5)
    b = identity_shift_experiment(n=40, trials=2, seed=5, workers=2)
    assert a.trial_means_A == b.trial_means_A


# layer spectra -------------------------------------------------------------

def test_variants_share_shapes_and_skips():
    nets = build_variants(seed=0)
    sizes = {k: n.param_sizes for k, n in nets.items()}
    assert sizes["chain"] == sizes["res"] == sizes["resavg"]
    assert block_indices(nets["chain"]) == [3, 4]
    res2, avg2 = nets["res"].layers[4], nets["resavg"].layers[4]
    assert np.allclose(singular_values(avg2.skip - res2.skip), 1)
    assert np.array_equal(nets["res"].layers[3].skip, np.eye(16))
    assert not np.any(nets["chain"].layers[3].skip)


def test_zero_branch_jacobians_reduce_to_skips():
    nets = build_variants(seed=0)
    ds = gen_data(32, 16, "synthetic_images", seed=0, scale=32 ** 0.5)
    from mpsnet.compose import forward_trace, split_params
    for name, net in nets.items():
        theta = init_params(net, 0)
        thetas = split_params(net.layers, theta)
        for i in block_indices(net):
            thetas[i] = np.zeros_like(thetas[i])
        acts = forward_trace(net.layers, thetas, ds.X)
        for i in block_indices(net):
            J = net.layers[i].jacobian(thetas[i], acts[i])
            assert np.allclose(J, kron(net.layers[i].skip, np.eye(16)), atol=1e-14)
    res_block1 = nets["res"].layers[3]
    assert np.allclose(singular_values(res_block1.skip), 1)


def test_layer_spectra_small_run_is_reproducible():
    kw = dict(trials=2, seed=3, iterations=3, bins=5)
    a, b = layer_spectra_experiment(**kw), layer_spectra_experiment(**kw)
    assert a.summary() == b.summary()
    assert set(a.spectra) == {"chain", "res", "resavg"}
    assert len(a.trials[0].losses["chain"]) == 4
    assert a.mean_loss_curves()["res"].shape == (4,)


# reports -------------------------------------------------------------------

def test_empty_trace_csv_is_header_only(tmp_path):
    p = emit_csv([], tmp_path / "t.csv", columns=list(TRACE_COLUMNS))
    assert p.read_bytes() == (",".join(TRACE_COLUMNS) + "\r\n").encode()
    assert emit_csv([], tmp_path / "e.csv").read_bytes() == b"\r\n"


def test_csv_round_trip_and_quoting(tmp_path):
    rows = [{"name": 'a,"b"', "x": 0.1 + 0.2, "n": 3}, {"name": "line\nbreak", "x": -1e-300, "n": 0}]
    p = emit_csv(rows, tmp_path / "r.csv")
    back = read_csv(p)
    assert [r["name"] for r in back] == [r["name"] for r in rows]
    assert [float(r["x"]) for r in back] == [r["x"] for r in rows]
    assert [int(r["n"]) for r in back] == [3, 0]
    assert b'"a,""b"""' in p.read_bytes()


def test_single_bin_histogram_has_one_rect(tmp_path):
    p = emit_svg_histogram([(0.0, 1.0, 7)], tmp_path / "h.svg", title="t")
    text = p.read_text()
    assert text.count("<rect") == 2  # background plus the bar
    assert text.count('fill="#1f77b4"') == 1
    assert 'version="1.1"' in text and "singular value" in text and "count" in text


def test_svg_is_deterministic(tmp_path):
    hist = [(0.0, 0.5, 2), (0.5, 1.0, 3)]
    a = emit_svg_histogram(hist, tmp_path / "a.svg").read_bytes()
    b = emit_svg_histogram(hist, tmp_path / "b.svg").read_bytes()
    assert a == b
    s1 = emit_svg_lines({"x": ([0, 1, 2], [1.0, 0.1, 0.01])}, tmp_path / "l1.svg", ylog=True).read_bytes()
    s2 = emit_svg_lines({"x": ([0, 1, 2], [1.0, 0.1, 0.01])}, tmp_path / "l2.svg", ylog=True).read_bytes()
    assert s1 == s2 and b"<polyline" in s1


def test_svg_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_svg_histogram([], tmp_path / "x.svg")
    with pytest.raises(ValueError):
        emit_svg_lines({"x": ([], [])}, tmp_path / "y.svg")


def test_svg_escapes_titles(tmp_path):
    text = emit_svg_lines({"a<b": ([0, 1], [1, 2])}, tmp_path / "e.svg", title="x & y").read_text()
    assert "x &amp; y" in text and "a&lt;b" in text


# config and runners --------------------------------------------------------

def test_config_defaults_file_and_overrides(tmp_path):
    cfg = load_config(experiment="train")
    assert cfg.param("dims") == [8, 8, 8, 4] and cfg.trials == 1
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"experiment": "train", "data": {"N": 3}, "params": {"steps": 5}, "seed": 2}))
    cfg = load_config(path, "train", {"seed": 9, "output_dir": "o", "trials": None})
    assert cfg.seed == 9 and cfg.data.seed == 9 and cfg.data.N == 3 and cfg.data.d0 == 8
    assert cfg.param("steps") == 5 and cfg.param("cost") == "square" and cfg.output_dir == "o"
    with pytest.raises(ValueError):
        load_config(path, "gradcheck")
    with pytest.raises(ValueError):
        ExperimentConfig(experiment="nope")
    with pytest.raises(ValueError):
        load_config(experiment="train", overrides={"trials": 0})


def _small(kind, out, **params):
    cfg = load_config(experiment=kind, overrides={"output_dir": str(out)})
    cfg.params.update(params)
    return cfg


def test_runs_are_bit_reproducible(tmp_path):
    for kind, params in [("worst_case", {"T": 2000}),
                         ("train", {"steps": 20, "beta_samples": 8}),
                         ("identity_shift", {"n": 30})]:
        a = run(_small(kind, tmp_path / "a" / kind, **params))
        b = run(_small(kind, tmp_path / "b" / kind, **params))
        for fa, fb in zip(a.files, b.files):
            if fa.suffix in (".csv", ".svg"):
                assert fa.read_bytes() == fb.read_bytes(), fa.name


def test_seed_recorded_in_outputs(tmp_path):
    cfg = _small("worst_case", tmp_path, T=500)
    cfg.seed = 11
    res = run(cfg)
    for f in res.files:
        if f.suffix == ".csv":
            assert all(r["seed"] == "11" for r in read_csv(f))
        elif f.suffix == ".svg":
            assert "seed 11" in f.read_text()
        else:
            assert json.loads(f.read_text())["seed"] == 11


def test_network_from_config(tmp_path):
    net = build_normalised_resnet([6, 5, 4])
    cfg = _small("train", tmp_path, steps=5, eta=0.05)
    cfg.network = net.to_dict()
    cfg.data.d0 = 6
    res = run(cfg)
    assert res.summary["final_loss"] < res.summary["initial_loss"]
    cfg.data.d0 = 7
    with pytest.raises(ValueError):
        run(cfg)


def test_bounds_report_small(tmp_path):
    res = run(_small("bounds_report", tmp_path, probes=10))
    assert res.ok, res.failed
    rows = read_csv(tmp_path / "bounds.csv")
    assert [r["kind"] for r in rows] == ["NormAffine", "Residual", "Residual"]


def test_gradcheck_small(tmp_path):
    res = run(_small("gradcheck", tmp_path, instances=2))
    assert res.ok and res.summary["worst"] < 1e-6

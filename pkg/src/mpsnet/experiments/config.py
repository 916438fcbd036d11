"""JSON experiment configuration."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

EXPERIMENT_KINDS = ("identity_shift", "layer_spectra", "train", "gradcheck", "worst_case", "bounds_report")


@dataclass
class DataConfig:
    d0: int = 8
    N: int = 4
    generator: str = "gaussian_orthogonalised"
    seed: int = 0
    scale: float = 1.0


@dataclass
class ExperimentConfig:
    """One experiment run.  ``params`` holds experiment-specific settings."""

    experiment: str
    network: Optional[dict] = None
    data: DataConfig = field(default_factory=DataConfig)
    trials: int = 1
    output_dir: str = "out"
    bin_count: int = 50
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_KINDS:
            raise ValueError(f"experiment must be one of {EXPERIMENT_KINDS}, got {self.experiment!r}")
        if isinstance(self.data, dict):
            self.data = DataConfig(**self.data)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.bin_count < 1:
            raise ValueError("bin_count must be >= 1")

    def to_dict(self):
        return asdict(self)

    def param(self, name):
        return self.params.get(name, DEFAULT_PARAMS[self.experiment].get(name))


DEFAULT_PARAMS = {
    "identity_shift": {"n": 500, "workers": 1},
    "layer_spectra": {"dims": [32, 16, 16, 8], "iterations": 10, "lr": 0.1, "epsilon": 0.1,
                      "n_classes": 8, "workers": 1},
    "train": {"dims": [8, 8, 8, 4], "cost": "square", "steps": 2000, "eta": "auto",
              "diagnostics": True, "diag_every": 1, "init_scale": 1.0, "norm_kind": "weight",
              "epsilon": 0.1, "target_scale": 0.5, "beta_samples": 64},
    "gradcheck": {"instances": 50, "h": 1e-5, "tol": 1e-6},
    "worst_case": {"C": 1.0, "epsilon": 1.0, "eta": 1.0, "T": 100_000,
                   "slope_range": [-0.80, -0.70]},
    "bounds_report": {"dims": [8, 8, 8, 4], "norm_kind": "weight", "epsilon": 0.1,
                      "radius": None, "probes": 200, "delta": 0.1},
}

DEFAULT_DATA = {
    "identity_shift": DataConfig(d0=500, N=500),
    "layer_spectra": DataConfig(d0=32, N=16, generator="synthetic_images", scale=32 ** 0.5),
    "train": DataConfig(d0=8, N=4),
    "gradcheck": DataConfig(d0=3, N=2),
    "worst_case": DataConfig(),
    "bounds_report": DataConfig(d0=8, N=4),
}

DEFAULT_TRIALS = {"identity_shift": 10, "layer_spectra": 10}


def default_config(experiment):
    return ExperimentConfig(
        experiment=experiment,
        data=copy.deepcopy(DEFAULT_DATA[experiment]),
        trials=DEFAULT_TRIALS.get(experiment, 1),
        params=copy.deepcopy(DEFAULT_PARAMS[experiment]),
    )


def load_config(path=None, experiment=None, overrides=None):
    """Defaults for ``experiment``, updated by a JSON file, then by ``overrides``.

    ``overrides`` keys ``seed``, ``output_dir``, ``trials`` and ``bin_count``
    replace top-level fields; ``seed`` also reseeds the data generator.
    """
    raw = {}
    if path is not None:
        raw = json.loads(Path(path).read_text())
    kind = raw.get("experiment", experiment)
    if experiment is not None and kind != experiment:
        raise ValueError(f"config is for {kind!r}, subcommand asked for {experiment!r}")
    cfg = default_config(kind)
    if "data" in raw:
        cfg.data = DataConfig(**{**asdict(cfg.data), **raw["data"]})
    for key in ("network", "trials", "output_dir", "bin_count", "seed"):
        if key in raw:
            setattr(cfg, key, raw[key])
    cfg.params.update(raw.get("params", {}))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        setattr(cfg, key, value)
        if key == "seed":
            cfg.data.seed = value
    cfg.__post_init__()
    return cfg

"""Synthetic data, spectrum experiments, runners and file output."""

from .config import ExperimentConfig, load_config
from .data import SyntheticDataset, gen_data
from .runs import RunResult, run
from .spectra import identity_shift_experiment, layer_spectra_experiment

"""Quadratic inference functions with FPCA-derived working correlation for dense functional data."""

from .estimator import FunctionalQIFRegressor, estimate_eigensystem
from .fpca import EigenSystem, eigen_decompose, eval_eigenfunction, select_kappa
from .funcdata import FunctionalDataset, FunctionalSample, TimeGrid, load_csv, dump_csv, residuals
from .inference import sandwich
from .kernelsmooth import KernelSpec, raw_cov_pairs, select_bandwidth_gcv, smooth_cov_surface
from .qif import FitConfig, fit_quasi_newton_halving, ols_initial, qif_value
from .scores import ScoreBasis, gbar_and_chat
from .simgen import Scenario, gen_dataset

__version__ = "0.1.0"

__all__ = [
    "EigenSystem",
    "FitConfig",
    "FunctionalDataset",
    "FunctionalQIFRegressor",
    "FunctionalSample",
    "KernelSpec",
    "Scenario",
    "ScoreBasis",
    "TimeGrid",
    "dump_csv",
    "eigen_decompose",
    "estimate_eigensystem",
    "eval_eigenfunction",
    "fit_quasi_newton_halving",
    "gbar_and_chat",
    "gen_dataset",
    "load_csv",
    "ols_initial",
    "qif_value",
    "raw_cov_pairs",
    "residuals",
    "sandwich",
    "select_bandwidth_gcv",
    "select_kappa",
    "smooth_cov_surface",
]

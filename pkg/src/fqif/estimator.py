"""End-to-end fitting pipeline and a scikit-learn style regressor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .fpca import EigenSystem, eigen_decompose, select_kappa
from .funcdata import FunctionalDataset, TimeGrid, residuals
from .inference import SandwichVariance, sandwich
from .kernelsmooth import (
    DEFAULT_BANDWIDTHS,
    DEFAULT_GRID_SIZE,
    KernelSpec,
    SmoothedCovariance,
    raw_cov_pairs,
    select_bandwidth_gcv,
    smooth_cov_surface,
)
from .qif import FitConfig, FitResult, fit_quasi_newton_halving, ols_initial
from .scores import ScoreBasis

METHODS = ("fda", "cs", "ar1", "init")


@dataclass(frozen=True)
class CovarianceEstimate:
    eigsys: EigenSystem
    surface: SmoothedCovariance
    bandwidth: float


def estimate_eigensystem(
    dataset: FunctionalDataset,
    beta_init,
    bandwidth="gcv",
    grid_size: int = DEFAULT_GRID_SIZE,
    weighting: str = "per_subject",
    candidates=DEFAULT_BANDWIDTHS,
) -> CovarianceEstimate:
    """Smooth the residual covariance at ``beta_init`` and decompose it."""
    grid = TimeGrid.uniform(grid_size)
    pairs = raw_cov_pairs(residuals(dataset, beta_init), weighting)
    if bandwidth == "gcv":
        h = select_bandwidth_gcv(pairs, grid, candidates)
    else:
        h = float(bandwidth)
    surface = smooth_cov_surface(pairs, grid, KernelSpec(h))
    return CovarianceEstimate(eigen_decompose(surface), surface, h)


def cluster_robust_ols(dataset: FunctionalDataset, beta) -> SandwichVariance:
    """Subject-clustered sandwich for the pooled OLS estimate."""
    p = dataset.p
    bread = np.zeros((p, p))
    meat = np.zeros((p, p))
    for s in dataset.samples:
        u = s.x.T @ (s.y - s.x @ beta)
        meat += np.outer(u, u)
        bread += s.x.T @ s.x
    binv = np.linalg.inv(bread)
    sigma = binv @ meat @ binv
    sigma = 0.5 * (sigma + sigma.T)
    n = dataset.n
    return SandwichVariance(sigma, np.sqrt(np.clip(np.diag(sigma), 0, None)), meat / n, bread / n, analogue=True)


class FunctionalQIFRegressor(RegressorMixin, BaseEstimator):
    """Constant linear-effect regression for dense functional responses.

    Parameters
    ----------
    method : {'fda', 'cs', 'ar1', 'init'}, default='fda'
        ``'fda'`` builds scores from estimated eigenfunctions of the residual
        covariance; ``'cs'`` and ``'ar1'`` use the compound-symmetry and AR(1)
        basis matrices; ``'init'`` stops at pooled OLS.
    n_components : int or 'auto', default=3
        Number of eigenfunctions. ``'auto'`` picks the smallest count whose
        cumulative FVE reaches ``fve_threshold``.
    fve_threshold : float, default=0.95
    bandwidth : float or 'gcv', default='gcv'
        Covariance smoothing bandwidth on the [0, 1] time scale.
    grid_size : int, default=51
    weighting : {'per_subject', 'per_pair'}, default='per_subject'
    epsilon0 : float, default=1e-10
        Stop when the squared step length falls below this.
    max_iter : int, default=500
    max_halvings : int, default=50

    Attributes
    ----------
    coef_ : ndarray of shape (p,)
    stderr_ : ndarray of shape (p,)
    covariance_ : ndarray of shape (p, p)
    init_coef_ : ndarray of shape (p,)
    fit_result_ : FitResult or None
    eigensystem_ : EigenSystem or None
    n_components_ : int or None
    bandwidth_ : float or None
    """

    def __init__(
        self,
        method="fda",
        n_components=3,
        fve_threshold=0.95,
        bandwidth="gcv",
        grid_size=DEFAULT_GRID_SIZE,
        weighting="per_subject",
        epsilon0=1e-10,
        max_iter=500,
        max_halvings=50,
    ):
        self.method = method
        self.n_components = n_components
        self.fve_threshold = fve_threshold
        self.bandwidth = bandwidth
        self.grid_size = grid_size
        self.weighting = weighting
        self.epsilon0 = epsilon0
        self.max_iter = max_iter
        self.max_halvings = max_halvings

    def _validate_params(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n_components != "auto" and int(self.n_components) < 1:
            raise ValueError("n_components must be a positive integer or 'auto'")
        if self.bandwidth != "gcv" and not float(self.bandwidth) > 0:
            raise ValueError("bandwidth must be positive or 'gcv'")

    def fit(self, X, y, groups=None, times=None):
        """Fit from pooled rows; ``groups`` label subjects and ``times`` lie in [0, 1]."""
        if groups is None or times is None:
            raise ValueError("groups and times are required to identify the functional structure")
        X, y = check_X_y(X, y, y_numeric=True)
        self._validate_params()
        dataset = FunctionalDataset.from_arrays(X, y, groups, times)
        return self.fit_dataset(dataset)

    def fit_dataset(self, dataset: FunctionalDataset):
        self._validate_params()
        self.n_features_in_ = dataset.p
        beta0 = ols_initial(dataset)
        self.init_coef_ = beta0
        self.eigensystem_ = None
        self.n_components_ = None
        self.bandwidth_ = None
        self.fit_result_ = None

        if self.method == "init":
            self.coef_ = beta0
            self.sandwich_ = cluster_robust_ols(dataset, beta0)
        else:
            if self.method == "fda":
                est = estimate_eigensystem(dataset, beta0, self.bandwidth, self.grid_size, self.weighting)
                self.eigensystem_ = est.eigsys
                self.bandwidth_ = est.bandwidth
                if self.n_components == "auto":
                    k = select_kappa(est.eigsys, fve=self.fve_threshold)
                else:
                    k = select_kappa(est.eigsys, fixed=int(self.n_components))
                self.n_components_ = k
                basis = ScoreBasis.fpca(est.eigsys, k)
            elif self.method == "cs":
                basis = ScoreBasis.compound_symmetry()
            else:
                basis = ScoreBasis.ar1()
            config = FitConfig(basis, self.epsilon0, self.max_iter, self.max_halvings)
            self.fit_result_ = fit_quasi_newton_halving(dataset, config, beta0)
            self.coef_ = self.fit_result_.beta_hat
            self.sandwich_ = sandwich(dataset, self.fit_result_, basis)
        self.covariance_ = self.sandwich_.sigma
        self.stderr_ = self.sandwich_.std_errors
        return self

    @property
    def fve_(self):
        check_is_fitted(self, "coef_")
        if self.eigensystem_ is None:
            return None
        return float(self.eigensystem_.fve[self.n_components_ - 1])

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_


def fit_result_summary(fit: FitResult | None) -> dict:
    if fit is None:
        return {}
    return {
        "iterations": fit.iterations,
        "converged": bool(fit.converged),
        "q_value": fit.q_value,
        "q_init": fit.q_init,
        "halving_events": fit.halving_events,
        "ridge_flag": bool(fit.ridge_flag),
        "objective_trace": list(map(float, fit.objective_trace)),
        "message": fit.message,
    }

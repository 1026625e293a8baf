"""Simulated functional datasets with known residual covariance.

Random streams: subject ``i`` of replication ``b`` draws from
``SeedSequence(seed, spawn_key=(b, i))``, so a subject's data do not depend
on ``n`` or on the order in which replications are generated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .funcdata import FunctionalDataset, FunctionalSample, TimeGrid

BETA_TRUE = (1.0, 0.5)
KL_TRUNCATION = 3

_ALLOWED = {
    "bm": (),
    "lp": (1, 2, 3),
    "ou": (1, 3),
    "pe": (1, 2, 5),
    "rq": (1, 2, 5),
}


@dataclass(frozen=True)
class Scenario:
    """Residual process. ``kind`` in ``bm, lp, ou, pe, rq``; ``param`` is
    ``l0`` (lp), ``mu0`` (ou) or ``b0`` (pe, rq); ``a0`` is the scale for pe/rq."""

    kind: str
    param: float | None = None
    a0: float = 1.0
    unsafe_params: bool = False

    def __post_init__(self):
        if self.kind not in _ALLOWED:
            raise ValueError(f"unknown scenario {self.kind!r}")
        if self.kind == "bm":
            return
        if self.param is None:
            raise ValueError(f"scenario {self.kind!r} needs a parameter")
        if not self.unsafe_params and (self.param not in _ALLOWED[self.kind] or self.a0 != 1.0):
            raise ValueError(
                f"parameter {self.param} not in {_ALLOWED[self.kind]} for {self.kind!r} "
                "(pass unsafe_params=True to override)"
            )

    @classmethod
    def from_code(cls, code: str, unsafe_params: bool = False) -> "Scenario":
        """Parse CLI codes such as ``bm``, ``lp1``, ``ou3``, ``pe5``, ``rq2``."""
        kind, rest = code[:2], code[2:]
        if kind == "bm" and not rest:
            return cls("bm")
        try:
            value = float(rest)
        except ValueError:
            raise ValueError(f"cannot parse scenario code {code!r}") from None
        if value == int(value):
            value = int(value)
        return cls(kind, value, unsafe_params=unsafe_params)

    @property
    def code(self) -> str:
        return self.kind if self.kind == "bm" else f"{self.kind}{self.param:g}"

    @property
    def has_kl(self) -> bool:
        return self.kind in ("bm", "lp", "ou")

    def eigenpairs(self, count: int = KL_TRUNCATION):
        """``[(lambda_k, phi_k), ...]`` for the KL scenarios."""
        if self.kind == "bm":
            return [bm_eigen(k) for k in range(1, count + 1)]
        if self.kind == "lp":
            return [linear_process_eigen(k, self.param) for k in range(1, count + 1)]
        if self.kind == "ou":
            roots = ou_roots(self.param, count)
            return [_ou_pair(w, self.param) for w in roots]
        raise ValueError(f"scenario {self.kind!r} has no closed-form eigenpairs")


def bm_eigen(k: int):
    if k < 1:
        raise ValueError("k must be >= 1")
    lam = 4.0 / (math.pi**2 * (2 * k - 1) ** 2)
    freq = 1.0 / math.sqrt(lam)
    return lam, lambda t: math.sqrt(2.0) * np.sin(np.asarray(t, dtype=float) * freq)


def linear_process_eigen(k: int, l0: int):
    if k < 1:
        raise ValueError("k must be >= 1")
    lam = float(k) ** (-2 * l0)
    return lam, lambda t: math.sqrt(2.0) * np.cos(k * math.pi * np.asarray(t, dtype=float))


def _ou_equation(w: float, mu0: float) -> float:
    return math.cos(w) / math.sin(w) - (w * w - mu0 * mu0) / (2.0 * mu0 * w)


def ou_roots(mu0: float, count: int) -> np.ndarray:
    """First ``count`` positive roots of ``cot(w) = (w^2 - mu0^2) / (2 mu0 w)``.

    On each interval ``((j-1) pi, j pi)`` the left side falls from ``+inf``
    to ``-inf`` while the right side is increasing, so there is exactly one
    root; the interval ends are pulled in slightly to avoid the poles.
    """
    if mu0 <= 0:
        raise ValueError("mu0 must be positive")
    roots = []
    for j in range(1, count + 1):
        lo, hi = (j - 1) * math.pi, j * math.pi
        pad = 1e-12 * max(1.0, hi)
        a, b = max(lo + pad, 1e-12), hi - pad
        fa, fb = _ou_equation(a, mu0), _ou_equation(b, mu0)
        if not (fa > 0 > fb):
            raise ArithmeticError(f"bracket failure on ({a}, {b}): f={fa}, {fb}")
        roots.append(brentq(_ou_equation, a, b, args=(mu0,), xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500))
    return np.array(roots)


def _ou_pair(w: float, mu0: float):
    A = math.sqrt(2.0 * w * w / (2.0 * mu0 + mu0 * mu0 + w * w))
    B = mu0 * A / w
    lam = 2.0 * mu0 / (w * w + mu0 * mu0)

    def phi(t):
        t = np.asarray(t, dtype=float)
        return A * np.cos(w * t) + B * np.sin(w * t)

    return lam, phi


def ou_eigen(k: int, mu0: float):
    if k < 1:
        raise ValueError("k must be >= 1")
    return _ou_pair(ou_roots(mu0, k)[-1], mu0)


def ou_coefficients(k: int, mu0: float):
    """``(omega_k, A_k, B_k)`` for the k-th OU eigenfunction."""
    w = ou_roots(mu0, k)[-1]
    A = math.sqrt(2.0 * w * w / (2.0 * mu0 + mu0 * mu0 + w * w))
    return w, A, mu0 * A / w


def cov_matrix(scenario: Scenario, grid: TimeGrid | np.ndarray) -> np.ndarray:
    """True residual covariance on ``grid`` (truncated KL sum for bm/lp/ou)."""
    t = grid.points if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    if scenario.has_kl:
        out = np.zeros((t.size, t.size))
        for lam, phi in scenario.eigenpairs():
            f = phi(t)
            out += lam * np.outer(f, f)
        return out
    lag = np.abs(t[:, None] - t[None, :])
    if scenario.kind == "pe":
        return np.exp(-((lag / scenario.a0) ** scenario.param))
    return (1.0 + lag**2 / scenario.a0**2) ** (-scenario.param)


def covariate_sds(p: int) -> np.ndarray:
    """``(p, 3)`` SDs of the constant / sine / cosine coefficients of each covariate."""
    base = 2.0 ** (-0.5 * np.arange(p))
    return np.column_stack([base, 0.85 * base, 0.7 * base])


@dataclass(frozen=True)
class SimulatedTruth:
    beta_true: np.ndarray
    scenario: Scenario
    grid: np.ndarray
    eigenvalues: np.ndarray | None
    eigenfunctions: np.ndarray | None
    covariance: np.ndarray
    residuals: tuple


def _sqrt_factor(cov: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < -1e-12 * max(1.0, w.max()):
        raise np.linalg.LinAlgError(f"covariance has eigenvalue {w.min():.3g} below clipping level")
    return V * np.sqrt(np.clip(w, 0.0, None))


def subject_rng(seed: int, replication: int, subject: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(replication), int(subject))))


def gen_dataset(
    scenario: Scenario,
    n: int,
    m: int,
    beta=BETA_TRUE,
    seed: int = 0,
    replication: int = 0,
):
    """Equidistant design ``t_j = (j-1)/(m-1)`` with the covariate model and residual process."""
    if n < 1 or m < 2:
        raise ValueError("need n >= 1 and m >= 2")
    beta = np.asarray(beta, dtype=float)
    p = beta.size
    t = np.linspace(0.0, 1.0, m)
    basis = np.column_stack([np.ones(m), math.sqrt(2.0) * np.sin(math.pi * t), math.sqrt(2.0) * np.cos(math.pi * t)])
    sds = covariate_sds(p)

    cov = cov_matrix(scenario, t)
    if scenario.has_kl:
        pairs = scenario.eigenpairs()
        lams = np.array([lam for lam, _ in pairs])
        phis = np.stack([phi(t) for _, phi in pairs])
        factor = None
    else:
        lams = phis = None
        factor = _sqrt_factor(cov)

    samples, res = [], []
    width = len(str(n))
    for i in range(n):
        rng = subject_rng(seed, replication, i)
        chi = rng.standard_normal((p, 3)) * sds
        X = basis @ chi.T
        if factor is None:
            e = (rng.standard_normal(KL_TRUNCATION) * np.sqrt(lams)) @ phis
        else:
            e = factor @ rng.standard_normal(m)
        y = X @ beta + e
        samples.append(FunctionalSample(f"s{i + 1:0{width}d}", t, y, X))
        res.append(e)
    truth = SimulatedTruth(beta, scenario, t, lams, phis, cov, tuple(res))
    return FunctionalDataset(samples), truth

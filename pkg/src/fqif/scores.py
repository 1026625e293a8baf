"""Extended score vectors for quadratic inference functions.

For the linear model every subject's stacked score is affine in beta,

    g_i(beta) = P_i - H_i beta,   H_i[k] = X_i' W_ik X_i,   P_i[k] = X_i' W_ik y_i,

where ``W_ik`` is the k-th weight matrix of the basis: the rank-one
eigenfunction matrix for FPCA scores, or ``A^{-1/2} M_k A^{-1/2}`` for the
compound-symmetry and AR(1) basis expansions. ``ScoreDesign`` caches the
``H_i``/``P_i`` blocks so that objective evaluations are cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fpca import EigenSystem, eval_eigenfunction
from .funcdata import FunctionalDataset, FunctionalSample

_COND_LIMIT = 1e12
_RIDGE_SCALE = 1e-8


class InsufficientSubjectsError(ValueError):
    """Fewer subjects than moment conditions, so C-hat cannot be inverted."""


def basis_matrices_cs(m: int) -> list[np.ndarray]:
    """``[I_m, J_m]`` with ``J_m`` zero on the diagonal and one elsewhere."""
    if m < 1:
        raise ValueError("m must be >= 1")
    eye = np.eye(m)
    return [eye, np.ones((m, m)) - eye]


def basis_matrices_ar1(m: int) -> list[np.ndarray]:
    """``[I_m, J1_m, J2_m]``: identity, first off-diagonals, and the two corners."""
    if m < 2:
        raise ValueError("AR(1) basis needs m >= 2")
    j1 = np.eye(m, k=1) + np.eye(m, k=-1)
    j2 = np.zeros((m, m))
    j2[0, 0] = j2[-1, -1] = 1.0
    return [np.eye(m), j1, j2]


@dataclass(frozen=True)
class ScoreBasis:
    """Which weight matrices build the score blocks.

    ``variant`` is ``"fpca"``, ``"cs"`` or ``"ar1"``. ``marginal_variance``
    applies to the CS/AR1 variants only: ``"identity"`` (``A_i = I``) or
    ``"cross_sectional"`` (diagonal ``A`` from the per-time residual
    variance of an OLS fit).
    """

    variant: str
    eigsys: EigenSystem | None = None
    kappa0: int | None = None
    marginal_variance: str = "identity"

    def __post_init__(self):
        if self.variant not in ("fpca", "cs", "ar1"):
            raise ValueError(f"unknown basis variant {self.variant!r}")
        if self.variant == "fpca":
            if self.eigsys is None or self.kappa0 is None:
                raise ValueError("fpca basis needs an eigen system and kappa0")
            if not 1 <= self.kappa0 <= self.eigsys.n_components:
                raise ValueError(
                    f"kappa0={self.kappa0} outside 1..{self.eigsys.n_components} retained components"
                )
        if self.marginal_variance not in ("identity", "cross_sectional"):
            raise ValueError("marginal_variance must be 'identity' or 'cross_sectional'")

    @classmethod
    def fpca(cls, eigsys: EigenSystem, kappa0: int) -> "ScoreBasis":
        return cls("fpca", eigsys, int(kappa0))

    @classmethod
    def compound_symmetry(cls, marginal_variance="identity") -> "ScoreBasis":
        return cls("cs", marginal_variance=marginal_variance)

    @classmethod
    def ar1(cls, marginal_variance="identity") -> "ScoreBasis":
        return cls("ar1", marginal_variance=marginal_variance)

    @property
    def n_blocks(self) -> int:
        return {"fpca": self.kappa0, "cs": 2, "ar1": 3}[self.variant]

    def eigenfunction_values(self, sample: FunctionalSample) -> np.ndarray:
        """``(kappa0, m_i)`` eigenfunction values at the sample's times."""
        return np.stack([eval_eigenfunction(self.eigsys, k, sample.times) for k in range(self.kappa0)])

    def weight_matrices(self, sample: FunctionalSample, inv_sd=None) -> list[np.ndarray]:
        """Dense ``m_i x m_i`` weight matrices, one per block."""
        m = sample.m
        if self.variant == "fpca":
            vals = self.eigenfunction_values(sample)
            return [phi_matrix(self.eigsys, k, sample, vals[k]) for k in range(self.kappa0)]
        mats = basis_matrices_cs(m) if self.variant == "cs" else basis_matrices_ar1(m)
        if inv_sd is None:
            return mats
        return [inv_sd[:, None] * M * inv_sd[None, :] for M in mats]


def phi_matrix(eigsys: EigenSystem, k: int, sample: FunctionalSample, values=None) -> np.ndarray:
    """``(m_i^{-2} phi_k(T_ij) phi_k(T_ij'))_{j,j'}`` for 0-based component ``k``."""
    if values is None:
        values = eval_eigenfunction(eigsys, k, sample.times)
    values = np.asarray(values, dtype=float)
    return np.outer(values, values) / sample.m**2


def _cross_sectional_inv_sd(dataset: FunctionalDataset) -> list[np.ndarray]:
    from .qif import ols_initial

    beta = ols_initial(dataset)
    times = np.concatenate([s.times for s in dataset.samples])
    res = np.concatenate([s.y - s.x @ beta for s in dataset.samples])
    ut, inv = np.unique(times, return_inverse=True)
    counts = np.bincount(inv)
    if np.any(counts < 2):
        raise ValueError("cross-sectional variances need >= 2 observations at every time point")
    mean = np.bincount(inv, weights=res) / counts
    var = np.bincount(inv, weights=(res - mean[inv]) ** 2) / (counts - 1)
    if np.any(var <= 0):
        raise ValueError("zero cross-sectional residual variance at some time point")
    inv_sd = 1.0 / np.sqrt(var)
    return [inv_sd[np.searchsorted(ut, s.times)] for s in dataset.samples]


@dataclass(frozen=True)
class ScoreDesign:
    """Per-subject affine score coefficients: ``g_i(beta) = P[i] - H[i] @ beta``.

    ``H`` has shape ``(n, q, p)`` and ``P`` shape ``(n, q)`` with blocks of
    ``p`` rows stacked in basis order.
    """

    basis: ScoreBasis
    H: np.ndarray
    P: np.ndarray
    inv_sd: list | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def q(self) -> int:
        return self.H.shape[1]

    @property
    def p(self) -> int:
        return self.H.shape[2]

    def per_subject(self, beta) -> np.ndarray:
        return self.P - self.H @ np.asarray(beta, dtype=float)

    @property
    def jacobian(self) -> np.ndarray:
        """Derivative of ``gbar`` with respect to beta, shape ``(q, p)``."""
        return -self.H.mean(axis=0)


def build_design(dataset: FunctionalDataset, basis: ScoreBasis) -> ScoreDesign:
    n, p, kappa = dataset.n, dataset.p, basis.n_blocks
    H = np.empty((n, kappa, p, p))
    P = np.empty((n, kappa, p))
    inv_sds = None
    if basis.variant != "fpca" and basis.marginal_variance == "cross_sectional":
        inv_sds = _cross_sectional_inv_sd(dataset)
    for i, s in enumerate(dataset.samples):
        X, y, m = s.x, s.y, s.m
        if basis.variant == "fpca":
            vals = basis.eigenfunction_values(s)
            U = vals @ X / m
            a = vals @ y / m
            H[i] = U[:, :, None] * U[:, None, :]
            P[i] = U * a[:, None]
            continue
        if inv_sds is not None:
            X = X * inv_sds[i][:, None]
            y = y * inv_sds[i]
        xtx, xty = X.T @ X, X.T @ y
        sx, sy = X.sum(axis=0), y.sum()
        H[i, 0], P[i, 0] = xtx, xty
        if basis.variant == "cs":
            H[i, 1] = np.outer(sx, sx) - xtx
            P[i, 1] = sx * sy - xty
        else:
            cross = X[:-1].T @ X[1:]
            H[i, 1] = cross + cross.T
            P[i, 1] = X[:-1].T @ y[1:] + X[1:].T @ y[:-1]
            H[i, 2] = np.outer(X[0], X[0]) + np.outer(X[-1], X[-1])
            P[i, 2] = X[0] * y[0] + X[-1] * y[-1]
    return ScoreDesign(basis, H.reshape(n, kappa * p, p), P.reshape(n, kappa * p), inv_sds)


def score_i(sample: FunctionalSample, beta, basis: ScoreBasis, inv_sd=None) -> np.ndarray:
    """Stacked blocks ``X_i' W_ik (y_i - X_i beta)`` from explicit weight matrices."""
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != sample.p:
        raise ValueError(f"beta has length {beta.size}, expected p={sample.p}")
    r = sample.y - sample.x @ beta
    return np.concatenate([sample.x.T @ W @ r for W in basis.weight_matrices(sample, inv_sd)])


@dataclass(frozen=True)
class ScoreSet:
    gbar: np.ndarray
    per_subject: np.ndarray
    jacobian: np.ndarray
    chat: np.ndarray
    ridge: bool = False
    ridge_eps: float = 0.0


def regularize(chat: np.ndarray):
    """Add ``1e-8 * trace / q`` to the diagonal when the condition number exceeds 1e12."""
    q = chat.shape[0]
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(chat)
    if np.isfinite(cond) and cond <= _COND_LIMIT:
        return chat, False, 0.0
    eps = _RIDGE_SCALE * np.trace(chat) / q
    if not eps > 0:
        raise np.linalg.LinAlgError("C-hat is zero; moment conditions carry no information")
    return chat + eps * np.eye(q), True, float(eps)


def chat_from_scores(g: np.ndarray) -> np.ndarray:
    chat = g.T @ g / g.shape[0]
    return 0.5 * (chat + chat.T)


def gbar_and_chat(dataset_or_design, beta, basis: ScoreBasis | None = None) -> ScoreSet:
    """Mean score, its Jacobian and ``C-hat = n^{-1} sum g_i g_i'`` at ``beta``."""
    design = dataset_or_design
    if not isinstance(design, ScoreDesign):
        design = build_design(dataset_or_design, basis)
    if design.n < design.q:
        raise InsufficientSubjectsError(
            f"n={design.n} subjects but {design.q} moment conditions; reduce kappa"
        )
    g = design.per_subject(beta)
    chat, ridged, eps = regularize(chat_from_scores(g))
    return ScoreSet(g.mean(axis=0), g, design.jacobian, chat, ridged, eps)

"""Sandwich variance ``B^{-1} A B^{-1}`` for QIF coefficient estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .funcdata import FunctionalDataset, FunctionalSample
from .qif import FitResult
from .scores import ScoreBasis, build_design, chat_from_scores, regularize


@dataclass(frozen=True)
class SandwichVariance:
    """Coefficient covariance (already divided by ``n``) and its factors."""

    sigma: np.ndarray
    std_errors: np.ndarray
    a_hat: np.ndarray
    b_hat: np.ndarray
    analogue: bool = False


def c_inverse_blocks(chat: np.ndarray, p: int, kappa: int) -> np.ndarray:
    """Invert ``C-hat`` and split it into a ``(kappa, kappa, p, p)`` block array."""
    q = p * kappa
    if chat.shape != (q, q):
        raise ValueError(f"C-hat has shape {chat.shape}, expected {(q, q)}")
    C, _, _ = regularize(np.asarray(chat, dtype=float))
    inv = np.linalg.inv(C)
    inv = 0.5 * (inv + inv.T)
    return inv.reshape(kappa, p, kappa, p).transpose(0, 2, 1, 3)


def curly_c_i(sample: FunctionalSample, blocks: np.ndarray, weights: list[np.ndarray]) -> np.ndarray:
    """``sum_{k1,k2} W_k1 X_i Cinv[k1,k2] X_i' W_k2`` as an ``m_i x m_i`` matrix.

    ``weights`` are the subject's block weight matrices (the eigenfunction
    matrices for FPCA scores).
    """
    kappa = blocks.shape[0]
    if len(weights) != kappa or blocks.shape[2:] != (sample.p, sample.p):
        raise ValueError("block grid does not match the weight matrices / covariate dimension")
    WX = [W @ sample.x for W in weights]
    out = np.zeros((sample.m, sample.m))
    for k1 in range(kappa):
        for k2 in range(kappa):
            out += WX[k1] @ blocks[k1, k2] @ WX[k2].T
    return out


def sandwich(dataset: FunctionalDataset, fit: FitResult, basis: ScoreBasis) -> SandwichVariance:
    """Plug-in sandwich at the fitted coefficients.

    ``C-hat`` is evaluated at ``beta_hat`` and residuals are ``y_i - X_i beta_hat``.
    For the CS/AR1 bases the same construction is used with the basis
    matrices in place of the eigenfunction matrices (flagged ``analogue``).
    """
    beta = np.asarray(fit.beta_hat, dtype=float)
    design = build_design(dataset, basis)
    chat = chat_from_scores(design.per_subject(beta))
    blocks = c_inverse_blocks(chat, dataset.p, basis.n_blocks)

    p, n = dataset.p, dataset.n
    A = np.zeros((p, p))
    B = np.zeros((p, p))
    for i, s in enumerate(dataset.samples):
        inv_sd = None if design.inv_sd is None else design.inv_sd[i]
        Ci = curly_c_i(s, blocks, basis.weight_matrices(s, inv_sd))
        e = s.y - s.x @ beta
        u = s.x.T @ (Ci @ e)
        A += np.outer(u, u)
        B += s.x.T @ Ci @ s.x
    A /= n
    B /= n
    Binv = np.linalg.inv(0.5 * (B + B.T))
    sigma = Binv @ A @ Binv.T / n
    sigma = 0.5 * (sigma + sigma.T)
    se = np.sqrt(np.clip(np.diag(sigma), 0.0, None))
    return SandwichVariance(sigma, se, A, B, analogue=basis.variant != "fpca")

"""Quadratic inference function, its derivatives and the halving Newton fit."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .funcdata import FunctionalDataset
from .scores import ScoreBasis, ScoreDesign, build_design, gbar_and_chat, regularize

logger = logging.getLogger(__name__)


class RankDeficientError(np.linalg.LinAlgError):
    pass


def ols_initial(dataset: FunctionalDataset) -> np.ndarray:
    """Pooled least squares over every observation of every subject."""
    _, y, X = dataset.stacked()
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise RankDeficientError(f"pooled design has rank {rank} < p={X.shape[1]}")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return beta


def _as_design(data, basis) -> ScoreDesign:
    return data if isinstance(data, ScoreDesign) else build_design(data, basis)


def _sym_solve(A, b):
    A, _, _ = regularize(0.5 * (A + A.T))
    try:
        return linalg.solve(A, b, assume_a="pos")
    except linalg.LinAlgError:
        return linalg.solve(A, b, assume_a="sym")


def qif_value(data, beta, basis: ScoreBasis | None = None, chat=None) -> float:
    """``Q(beta) = n gbar' C^{-1} gbar``; ``chat`` overrides ``C-hat(beta)`` when given."""
    design = _as_design(data, basis)
    ss = gbar_and_chat(design, beta)
    C = ss.chat if chat is None else chat
    return float(design.n * ss.gbar @ _sym_solve(C, ss.gbar))


def qif_gradient(data, beta, basis: ScoreBasis | None = None, chat=None) -> np.ndarray:
    """``2 n gdot' C^{-1} gbar`` with ``C`` held fixed at the evaluation point."""
    design = _as_design(data, basis)
    ss = gbar_and_chat(design, beta)
    C = ss.chat if chat is None else chat
    return 2.0 * design.n * ss.jacobian.T @ _sym_solve(C, ss.gbar)


def qif_hessian(data, beta, basis: ScoreBasis | None = None, chat=None) -> np.ndarray:
    """Leading term ``2 n gdot' C^{-1} gdot``."""
    design = _as_design(data, basis)
    ss = gbar_and_chat(design, beta)
    C = ss.chat if chat is None else chat
    Hs = 2.0 * design.n * ss.jacobian.T @ _sym_solve(C, ss.jacobian)
    return 0.5 * (Hs + Hs.T)


@dataclass
class FitConfig:
    """Stopping rules for the halving Newton iteration.

    ``freeze_chat`` holds ``C-hat`` at its value at the starting point for
    the whole fit, which turns ``Q`` into an exact quadratic.
    ``line_search`` chooses how halved trial points are compared:
    ``"recompute"`` evaluates ``Q`` with ``C-hat`` at the trial point,
    ``"frozen"`` keeps ``C-hat`` from the start of the step (a trial then
    always descends on that surrogate, but the recomputed ``Q`` may rise).
    """

    basis: ScoreBasis | None = None
    epsilon0: float = 1e-10
    max_count: int = 500
    max_halvings: int = 50
    freeze_chat: bool = False
    line_search: str = "recompute"

    def __post_init__(self):
        if self.line_search not in ("recompute", "frozen"):
            raise ValueError("line_search must be 'recompute' or 'frozen'")
        if not self.epsilon0 > 0:
            raise ValueError("epsilon0 must be positive")
        if self.max_count < 1:
            raise ValueError("max_count must be >= 1")
        if self.max_halvings < 0:
            raise ValueError("max_halvings must be >= 0")


@dataclass
class FitResult:
    beta_hat: np.ndarray
    q_value: float
    iterations: int
    converged: bool
    halving_events: int
    objective_trace: list = field(default_factory=list)
    ridge_flag: bool = False
    beta_init: np.ndarray | None = None
    q_init: float = np.nan
    steps: list = field(default_factory=list)
    message: str = ""


def fit_quasi_newton_halving(
    dataset: FunctionalDataset | ScoreDesign,
    config: FitConfig,
    beta0=None,
) -> FitResult:
    """Minimise ``Q`` from ``beta0`` (OLS when omitted) by Newton steps with step halving.

    Every trial point is judged by ``Q`` with ``C-hat`` re-evaluated there
    (or the frozen ``C-hat`` when ``config.freeze_chat``). A step whose
    halvings are exhausted without descent leaves beta unchanged and ends
    the fit; it counts as converged only if the undamped step already met
    the tolerance.
    """
    design = _as_design(dataset, config.basis)
    if beta0 is None:
        if isinstance(dataset, ScoreDesign):
            raise ValueError("beta0 is required when fitting from a prebuilt design")
        beta0 = ols_initial(dataset)
    beta0 = np.asarray(beta0, dtype=float).copy()

    ss0 = gbar_and_chat(design, beta0)
    frozen = ss0.chat if config.freeze_chat else None
    ridge_flag = ss0.ridge

    def Q(beta, C=None):
        nonlocal ridge_flag
        ss = gbar_and_chat(design, beta)
        ridge_flag |= ss.ridge
        if C is None:
            C = ss.chat if frozen is None else frozen
        return float(design.n * ss.gbar @ _sym_solve(C, ss.gbar)), ss, C

    beta1 = beta0
    Q1, ss1, C1 = Q(beta1)
    result = FitResult(beta1, Q1, 0, False, 0, [Q1], ridge_flag, beta0.copy(), Q1)

    Error = np.inf
    count = 0
    while Error > config.epsilon0 and count < config.max_count:
        count += 1
        Qdot = 2.0 * design.n * ss1.jacobian.T @ _sym_solve(C1, ss1.gbar)
        Qddot = 2.0 * design.n * ss1.jacobian.T @ _sym_solve(C1, ss1.jacobian)
        direction = _sym_solve(Qddot, Qdot)
        if float(direction @ direction) <= config.epsilon0:
            # comparing Q across a roundoff-sized step is meaningless
            result.converged = True
            result.message = "converged"
            break

        trial_C = C1 if config.line_search == "frozen" else None

        r0 = 1.0
        beta2 = beta1 - r0 * direction
        Q2, ss2, C2 = Q(beta2, trial_C)
        Q1_ref = Q1 if trial_C is None else Q(beta1, trial_C)[0]
        halvings = 0
        while Q2 > Q1_ref and halvings < config.max_halvings:
            r0 /= 2.0
            halvings += 1
            beta2 = beta1 - r0 * direction
            Q2, ss2, C2 = Q(beta2, trial_C)
        result.halving_events += halvings

        if Q2 > Q1_ref:
            full_step = float(direction @ direction)
            result.converged = full_step <= config.epsilon0
            result.message = (
                "no descent after halving; undamped step below tolerance"
                if result.converged
                else f"no descent after {halvings} halvings"
            )
            break

        if trial_C is not None:
            Q2, ss2, C2 = Q(beta2)
        Error = float((beta2 - beta1) @ (beta2 - beta1))
        result.steps.append(r0)
        beta1, Q1, ss1, C1 = beta2, Q2, ss2, C2
        result.objective_trace.append(Q1)
    else:
        result.converged = Error <= config.epsilon0
        result.message = "converged" if result.converged else f"stopped after max_count={config.max_count}"

    result.beta_hat = beta1
    result.q_value = Q1
    result.iterations = count
    result.ridge_flag = ridge_flag
    if not result.converged:
        logger.debug("QIF fit did not converge: %s", result.message)
    return result

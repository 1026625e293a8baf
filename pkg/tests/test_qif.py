import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fqif.funcdata import FunctionalDataset, FunctionalSample
from fqif.qif import (
    FitConfig,
    RankDeficientError,
    fit_quasi_newton_halving,
    ols_initial,
    qif_gradient,
    qif_hessian,
    qif_value,
)
from fqif.scores import ScoreBasis, build_design, gbar_and_chat


def _gmm_closed_form(design, chat):
    """Minimiser of n gbar' C^{-1} gbar for affine gbar = gbar(0) + J beta, C fixed."""
    J = design.jacobian
    g0 = design.P.mean(0)
    Ci = np.linalg.inv(chat)
    return -np.linalg.solve(J.T @ Ci @ J, J.T @ Ci @ g0)


def test_ols_matches_lstsq(bm_small):
    ds, _ = bm_small
    _, y, X = ds.stacked()
    np.testing.assert_allclose(ols_initial(ds), np.linalg.lstsq(X, y, rcond=None)[0])


def test_ols_rank_deficient():
    s = [FunctionalSample(f"s{i}", [0.0, 1.0], [1.0, 2.0], [[1.0, 2.0], [1.0, 2.0]]) for i in range(3)]
    with pytest.raises(RankDeficientError):
        ols_initial(FunctionalDataset(s))


def test_gradient_matches_frozen_finite_differences(bm_small, bm_eigsys):
    ds, _ = bm_small
    design = build_design(ds, ScoreBasis.fpca(bm_eigsys, 3))
    beta = np.array([0.9, 0.6])
    chat = gbar_and_chat(design, beta).chat
    grad = qif_gradient(design, beta)
    h = 1e-5
    fd = np.array(
        [
            (qif_value(design, beta + h * e, chat=chat) - qif_value(design, beta - h * e, chat=chat)) / (2 * h)
            for e in np.eye(2)
        ]
    )
    np.testing.assert_allclose(grad, fd, rtol=1e-6)


def test_hessian_is_exact_for_frozen_quadratic(bm_small):
    ds, _ = bm_small
    design = build_design(ds, ScoreBasis.ar1())
    beta = np.array([1.0, 0.5])
    chat = gbar_and_chat(design, beta).chat
    H = qif_hessian(design, beta)
    h = 1e-3
    fd = np.empty((2, 2))
    for j, e in enumerate(np.eye(2)):
        fd[:, j] = (qif_gradient(design, beta + h * e, chat=chat) - qif_gradient(design, beta - h * e, chat=chat)) / (
            2 * h
        )
    np.testing.assert_allclose(H, fd, rtol=1e-6)
    assert np.all(np.linalg.eigvalsh(H) > 0)


@settings(max_examples=15, deadline=None)
@given(b=st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_q_nonnegative(bm_small, bm_eigsys, b):
    ds, _ = bm_small
    design = build_design(ds, ScoreBasis.fpca(bm_eigsys, 2))
    assert qif_value(design, b) >= 0.0


@pytest.mark.parametrize("variant", ["fpca", "cs", "ar1"])
def test_frozen_fit_hits_closed_form(bm_small, bm_eigsys, variant):
    ds, _ = bm_small
    basis = ScoreBasis.fpca(bm_eigsys, 3) if variant == "fpca" else ScoreBasis(variant)
    design = build_design(ds, basis)
    beta0 = ols_initial(ds)
    fit = fit_quasi_newton_halving(design, FitConfig(basis, freeze_chat=True), beta0)
    target = _gmm_closed_form(design, gbar_and_chat(design, beta0).chat)
    assert fit.converged and fit.halving_events == 0
    assert fit.steps[0] == 1.0
    assert np.max(np.abs(fit.beta_hat - target)) < 1e-8


def test_fit_recompute_is_monotone_and_stationary(bm_small, bm_eigsys):
    ds, _ = bm_small
    basis = ScoreBasis.fpca(bm_eigsys, 2)
    fit = fit_quasi_newton_halving(ds, FitConfig(basis))
    assert fit.converged
    assert np.all(np.diff(fit.objective_trace) <= 0)
    assert fit.q_value <= fit.q_init
    # stopping rule: the last accepted (possibly halved) move is below tolerance
    last = fit.steps[-1] if fit.steps else 0.0
    assert fit.iterations <= len(fit.steps) + 1
    assert last <= 1.0
    np.testing.assert_array_equal(fit.beta_init, ols_initial(ds))


def test_frozen_line_search_mode_runs(bm_small):
    ds, _ = bm_small
    fit = fit_quasi_newton_halving(ds, FitConfig(ScoreBasis.ar1(), line_search="frozen"))
    assert fit.converged and fit.iterations >= 1


def test_max_count_stops_unconverged(bm_small):
    ds, _ = bm_small
    fit = fit_quasi_newton_halving(ds, FitConfig(ScoreBasis("cs"), max_count=1))
    assert fit.iterations == 1
    assert not fit.converged and "max_count" in fit.message


def test_design_requires_start(bm_small):
    ds, _ = bm_small
    basis = ScoreBasis("cs")
    with pytest.raises(ValueError):
        fit_quasi_newton_halving(build_design(ds, basis), FitConfig(basis))


@pytest.mark.parametrize(
    "kw", [{"epsilon0": 0.0}, {"max_count": 0}, {"max_halvings": -1}, {"line_search": "armijo"}]
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        FitConfig(**kw)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fqif.fpca import eigen_decompose, eval_eigenfunction, select_kappa
from fqif.funcdata import TimeGrid
from fqif.kernelsmooth import SmoothedCovariance


def _surface(values):
    G = values.shape[0]
    return SmoothedCovariance(TimeGrid.uniform(G), np.asarray(values, float), 0.1, 0)


def _bm(G):
    g = np.linspace(0, 1, G)
    return _surface(np.minimum.outer(g, g))


def test_brownian_eigenvalues():
    es = eigen_decompose(_bm(101))
    for k in (1, 2, 3):
        exact = 1.0 / ((k - 0.5) ** 2 * np.pi**2)
        assert es.eigenvalues[k - 1] == pytest.approx(exact, rel=0.01)


def test_brownian_eigenfunctions_match_sines():
    es = eigen_decompose(_bm(201))
    g = es.grid.points
    for k in (1, 2):
        ref = np.sqrt(2) * np.sin((k - 0.5) * np.pi * g)
        phi = es.eigenfunctions[k - 1] * np.sign(es.eigenfunctions[k - 1] @ ref)
        assert np.max(np.abs(phi - ref)) < 0.03


def test_sign_convention_largest_entry_positive():
    es = eigen_decompose(_bm(41))
    for phi in es.eigenfunctions:
        assert phi[np.argmax(np.abs(phi))] > 0


def test_rank_one_surface():
    g = np.linspace(0, 1, 31)
    f = 1 + g
    es = eigen_decompose(_surface(np.outer(f, f)))
    assert es.n_positive >= 1
    assert es.eigenvalues[0] == pytest.approx(np.mean(f**2))
    assert es.fve[0] == pytest.approx(1.0)
    assert select_kappa(es, fixed=5) <= es.n_positive


def test_negative_eigenvalues_clipped():
    R = np.diag(np.linspace(-1, 1, 11))
    es = eigen_decompose(_surface(R))
    assert np.all(es.eigenvalues >= 0)
    assert es.fve[-1] == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), G=st.integers(5, 40))
def test_orthonormal_and_fve_monotone(seed, G):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(G, G))
    es = eigen_decompose(_surface(A @ A.T))
    gram = es.weight * es.eigenfunctions @ es.eigenfunctions.T
    np.testing.assert_allclose(gram, np.eye(es.n_components), atol=1e-8)
    assert np.all(np.diff(es.eigenvalues) <= 1e-12)
    assert np.all(np.diff(es.fve) >= -1e-12) and es.fve[-1] <= 1.0 + 1e-12
    assert es.n_components == min(G, 20)


def test_full_reconstruction():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(12, 12))
    R = A @ A.T
    es = eigen_decompose(_surface(R))
    np.testing.assert_allclose(es.reconstruct(), R, atol=1e-9)


def test_select_kappa_rules():
    es = eigen_decompose(_bm(51))
    assert select_kappa(es, fixed=3) == 3
    k = select_kappa(es, fve=0.95)
    assert es.fve[k - 1] >= 0.95 and (k == 1 or es.fve[k - 2] < 0.95)
    for bad in ({"fixed": 0}, {"fve": 1.5}, {}, {"fixed": 1, "fve": 0.9}):
        with pytest.raises(ValueError):
            select_kappa(es, **bad)


def test_eval_eigenfunction_interpolates_grid():
    es = eigen_decompose(_bm(11))
    assert eval_eigenfunction(es, 0, 0.3) == pytest.approx(es.eigenfunctions[0][3])
    mid = eval_eigenfunction(es, 1, 0.35)
    assert mid == pytest.approx(0.5 * (es.eigenfunctions[1][3] + es.eigenfunctions[1][4]))
    with pytest.raises(IndexError):
        eval_eigenfunction(es, 99, 0.5)
    with pytest.raises(ValueError):
        eval_eigenfunction(es, 0, 1.5)


def test_rejects_bad_surfaces():
    with pytest.raises(ValueError):
        eigen_decompose(_surface(np.array([[1.0, 0.0], [1.0, 1.0]])))
    with pytest.raises(np.linalg.LinAlgError):
        eigen_decompose(_surface(np.array([[np.nan, 0.0], [0.0, 1.0]])))
    with pytest.raises(ValueError):
        eigen_decompose(_surface(-np.eye(3)))


def test_csv_layout():
    es = eigen_decompose(_bm(5))
    lines = es.to_csv().strip().split("\n")
    assert lines[0] == "r,lambda,fve,v1,v2,v3,v4,v5"
    assert len(lines) == 1 + es.n_components

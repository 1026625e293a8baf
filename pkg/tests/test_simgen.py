import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fqif.funcdata import TimeGrid
from fqif.simgen import (
    BETA_TRUE,
    Scenario,
    bm_eigen,
    cov_matrix,
    covariate_sds,
    gen_dataset,
    linear_process_eigen,
    ou_coefficients,
    ou_eigen,
    ou_roots,
    subject_rng,
)

GRID_1001 = np.linspace(0, 1, 1001)


def _bisect_ou(mu0, j, iters=200):
    """Plain bisection for cot(w) = (w^2 - mu0^2)/(2 mu0 w) on ((j-1)pi, j pi)."""
    f = lambda w: math.cos(w) * 2 * mu0 * w - math.sin(w) * (w * w - mu0 * mu0)  # noqa: E731
    lo, hi = (j - 1) * math.pi + 1e-9, j * math.pi - 1e-9
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


# frozen from the bisection oracle above
OU_MU1_OMEGA1 = 1.306542
OU_MU1_LAMBDA1 = 0.73881
OU_MU1_A1 = 0.85166


@pytest.mark.parametrize("mu0", [1, 3])
def test_ou_roots_match_bisection(mu0):
    roots = ou_roots(mu0, 5)
    for j, w in enumerate(roots, start=1):
        assert w == pytest.approx(_bisect_ou(mu0, j), abs=1e-10)
        assert (j - 1) * math.pi < w < j * math.pi


def test_ou_frozen_values():
    w, A, B = ou_coefficients(1, 1)
    lam, _ = ou_eigen(1, 1)
    assert w == pytest.approx(OU_MU1_OMEGA1, abs=1e-6)
    assert lam == pytest.approx(OU_MU1_LAMBDA1, abs=1e-5)
    assert A == pytest.approx(OU_MU1_A1, abs=1e-5)
    assert B == pytest.approx(A / w)


def test_ou_root_spacing_tends_to_pi():
    r = ou_roots(3, 40)
    assert abs(np.diff(r)[-1] - math.pi) < 0.01


@pytest.mark.parametrize("mu0", [1, 3])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_ou_eigen_equation(mu0, k):
    lam, phi = ou_eigen(k, mu0)
    t = GRID_1001
    K = np.exp(-mu0 * np.abs(t[:, None] - t[None, :]))
    lhs = K @ phi(t) / t.size
    assert np.max(np.abs(lhs - lam * phi(t))) < 1e-3
    assert np.mean(phi(t) ** 2) == pytest.approx(1.0, rel=2e-3)


@pytest.mark.parametrize(
    "pair_fn",
    [bm_eigen, lambda k: linear_process_eigen(k, 2)],
)
def test_closed_form_eigenfunctions_orthonormal(pair_fn):
    t = (np.arange(20000) + 0.5) / 20000
    F = np.stack([pair_fn(k)[1](t) for k in (1, 2, 3)])
    np.testing.assert_allclose(F @ F.T / t.size, np.eye(3), atol=1e-6)


def test_bm_truncated_covariance_value():
    R = cov_matrix(Scenario("bm"), np.array([0.3, 0.6]))
    assert R[0, 1] == pytest.approx(0.30227, abs=1e-5)
    # three-term truncation stays close to min(s, t)
    full = cov_matrix(Scenario("bm"), TimeGrid.uniform(21))
    g = np.linspace(0, 1, 21)
    assert np.max(np.abs(full - np.minimum.outer(g, g))) < 0.08


def test_stationary_kernels():
    t = np.array([0.0, 0.5])
    assert cov_matrix(Scenario("pe", 1), t)[0, 1] == pytest.approx(math.exp(-0.5))
    assert cov_matrix(Scenario("pe", 2), t)[0, 1] == pytest.approx(math.exp(-0.25))
    assert cov_matrix(Scenario("rq", 2), t)[0, 1] == pytest.approx(1.25**-2)
    assert cov_matrix(Scenario("rq", 5), t)[0, 0] == 1.0


def test_scenario_codes_and_validation():
    assert Scenario.from_code("lp3") == Scenario("lp", 3)
    assert Scenario.from_code("ou1").code == "ou1"
    assert Scenario.from_code("bm").code == "bm"
    with pytest.raises(ValueError):
        Scenario("lp", 7)
    with pytest.raises(ValueError):
        Scenario("xx")
    with pytest.raises(ValueError):
        Scenario.from_code("lpx")
    assert Scenario("pe", 1.5, unsafe_params=True).code == "pe1.5"
    with pytest.raises(ValueError):
        Scenario("pe", 1).eigenpairs()


def test_dataset_shape_and_determinism():
    ds1, truth = gen_dataset(Scenario("ou", 3), n=12, m=15, seed=4, replication=2)
    ds2, _ = gen_dataset(Scenario("ou", 3), n=12, m=15, seed=4, replication=2)
    ds3, _ = gen_dataset(Scenario("ou", 3), n=12, m=15, seed=4, replication=3)
    assert ds1.n == 12 and ds1.p == 2 and ds1.samples[0].m == 15
    assert ds1.samples[0].subject_id == "s01"
    for a, b in zip(ds1, ds2):
        np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(ds1.samples[0].y, ds3.samples[0].y)
    np.testing.assert_array_equal(ds1.samples[0].times, np.linspace(0, 1, 15))
    for s, e in zip(ds1, truth.residuals):
        np.testing.assert_allclose(s.y - s.x @ np.asarray(BETA_TRUE), e, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(i=st.integers(0, 50), n_small=st.integers(1, 50))
def test_subject_stream_independent_of_n(i, n_small):
    """Subject i gets the same draws regardless of how many subjects follow."""
    n_big = max(n_small, i + 1) + 5
    if i >= n_small:
        return
    a, _ = gen_dataset(Scenario("bm"), n=n_small, m=5, seed=1)
    b, _ = gen_dataset(Scenario("bm"), n=n_big, m=5, seed=1)
    np.testing.assert_array_equal(a.samples[i].y, b.samples[i].y)


def test_subject_rng_streams_differ():
    x = subject_rng(0, 0, 0).standard_normal(4)
    y = subject_rng(0, 0, 1).standard_normal(4)
    z = subject_rng(0, 1, 0).standard_normal(4)
    assert not np.allclose(x, y) and not np.allclose(x, z)


@pytest.mark.parametrize("code", ["bm", "lp1", "rq2"])
def test_residual_covariance_monte_carlo(code):
    sc = Scenario.from_code(code)
    _, truth = gen_dataset(sc, n=4000, m=6, seed=8)
    E = np.array(truth.residuals)
    emp = E.T @ E / E.shape[0]
    scale = np.max(np.abs(truth.covariance))
    assert np.max(np.abs(emp - truth.covariance)) < 0.08 * scale


def test_covariate_moments():
    sds = covariate_sds(2)
    np.testing.assert_allclose(sds[1], sds[0] / math.sqrt(2))
    np.testing.assert_allclose(sds[0], [1.0, 0.85, 0.7])
    ds, _ = gen_dataset(Scenario("bm"), n=3000, m=3, seed=2)
    x_at_0 = np.array([s.x[0] for s in ds])  # t=0: chi1 + sqrt(2) chi3
    np.testing.assert_allclose(x_at_0.std(0), np.sqrt(sds[:, 0] ** 2 + 2 * sds[:, 2] ** 2), rtol=0.05)


@pytest.mark.parametrize("code", ["pe1", "pe2", "rq1", "rq2", "rq5"])
def test_stationary_factor_reproduces_covariance(code):
    from fqif.simgen import _sqrt_factor

    R = cov_matrix(Scenario.from_code(code), np.linspace(0, 1, 100))
    F = _sqrt_factor(R)
    assert np.max(np.abs(F @ F.T - R)) < 1e-8


def test_power_exponential_above_two_is_not_a_covariance():
    with pytest.raises(np.linalg.LinAlgError, match="eigenvalue"):
        gen_dataset(Scenario("pe", 5), n=2, m=100)

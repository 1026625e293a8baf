"""Eigendecomposition of a smoothed covariance surface on a uniform grid."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .funcdata import TimeGrid
from .kernelsmooth import SmoothedCovariance

DEFAULT_MAX_COMPONENTS = 20


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues (descending, clipped at zero) and grid-sampled eigenfunctions.

    ``eigenfunctions`` has shape ``(K_max, G)`` and each row satisfies
    ``weight * sum(phi_r**2) == 1``. ``fve`` is cumulative over all
    nonnegative eigenvalues, truncated to the retained ``K_max`` entries.
    """

    grid: TimeGrid
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    fve: np.ndarray
    weight: float

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.eigenvalues > 0))

    def inner(self, f, g) -> float:
        """Discrete L2 inner product on the grid."""
        return float(self.weight * np.dot(f, g))

    def reconstruct(self, k: int | None = None) -> np.ndarray:
        """``sum_{r<k} lambda_r phi_r(s) phi_r(t)`` on the grid."""
        k = self.n_components if k is None else k
        phi = self.eigenfunctions[:k]
        return (phi.T * self.eigenvalues[:k]) @ phi

    def to_csv(self) -> str:
        """Rows ``r, lambda, fve, v_1..v_G``."""
        buf = io.StringIO()
        G = len(self.grid)
        buf.write(",".join(["r", "lambda", "fve"] + [f"v{j + 1}" for j in range(G)]) + "\n")
        for r in range(self.n_components):
            vals = [str(r + 1), repr(float(self.eigenvalues[r])), repr(float(self.fve[r]))]
            vals += [repr(float(v)) for v in self.eigenfunctions[r]]
            buf.write(",".join(vals) + "\n")
        return buf.getvalue()


def eigen_decompose(cov: SmoothedCovariance, max_components: int | None = None) -> EigenSystem:
    """Discretise the covariance operator with equal quadrature weights ``1/G``.

    Eigenvectors ``v_r`` of ``R / G`` are rescaled to ``phi_r = v_r * sqrt(G)``
    and signed so that the largest-magnitude entry is positive.
    """
    R = np.asarray(cov.values, dtype=float)
    if not np.all(np.isfinite(R)):
        raise np.linalg.LinAlgError("covariance surface contains non-finite values")
    if not np.allclose(R, R.T, rtol=0, atol=1e-10 * max(1.0, np.abs(R).max())):
        raise ValueError("covariance surface must be symmetric")
    G = R.shape[0]
    weight = 1.0 / G
    evals, evecs = np.linalg.eigh(0.5 * (R + R.T) * weight)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    evals = np.clip(evals, 0.0, None)

    total = evals.sum()
    if total <= 0:
        raise ValueError("covariance surface has no positive eigenvalues")
    K = min(G, DEFAULT_MAX_COMPONENTS if max_components is None else int(max_components))

    phi = evecs[:, :K].T / np.sqrt(weight)
    peak = np.argmax(np.abs(phi), axis=1)
    signs = np.sign(phi[np.arange(K), peak])
    phi = phi * np.where(signs == 0, 1.0, signs)[:, None]
    fve = np.minimum(np.cumsum(evals) / total, 1.0)
    fve[-1] = 1.0

    evals_k, fve_k = evals[:K].copy(), fve[:K].copy()
    for a in (evals_k, fve_k, phi):
        a.setflags(write=False)
    return EigenSystem(cov.grid, evals_k, phi, fve_k, weight)


def select_kappa(eigsys: EigenSystem, fixed: int | None = None, fve: float | None = None) -> int:
    """Number of components: ``fixed`` (capped by the positive count) or an FVE threshold."""
    n_pos = eigsys.n_positive
    if n_pos < 1:
        raise ValueError("eigen system has no positive eigenvalues")
    if (fixed is None) == (fve is None):
        raise ValueError("give exactly one of fixed or fve")
    if fixed is not None:
        if int(fixed) < 1:
            raise ValueError("fixed number of components must be >= 1")
        return min(int(fixed), n_pos)
    if not 0.0 < fve < 1.0:
        raise ValueError("FVE threshold must lie in (0, 1)")
    hits = np.flatnonzero(eigsys.fve[:n_pos] >= fve)
    return int(hits[0]) + 1 if hits.size else n_pos


def eval_eigenfunction(eigsys: EigenSystem, r: int, t):
    """Linear interpolation of the ``r``-th (0-based) eigenfunction at ``t``."""
    if not 0 <= r < eigsys.n_components:
        raise IndexError(f"component {r} out of range (have {eigsys.n_components})")
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("evaluation times must lie in [0, 1]")
    out = np.interp(t, eigsys.grid.points, eigsys.eigenfunctions[r])
    return out if out.ndim else float(out)

"""Local linear smoothing of the raw residual covariance surface.

Raw pairs ``(s, t, c)`` are formed from every ordered pair of distinct
observation indices within a subject. The smoother fits a weighted plane
around each target point with a product Epanechnikov kernel and keeps the
intercept.

Pairs sharing a location contribute to the normal equations only through
their summed weight, weighted response and weighted squared response, so
the surface is computed from those per-location totals.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .funcdata import ResidualSet, TimeGrid

DEFAULT_BANDWIDTHS = (0.05, 0.075, 0.10, 0.15, 0.20, 0.25, 0.30)
DEFAULT_GRID_SIZE = 51
MAX_FALLBACK_DOUBLINGS = 3
_COND_LIMIT = 1e12


class SingularSmootherError(np.linalg.LinAlgError):
    """The local 3x3 normal equations are singular at some location."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


def epanechnikov(u):
    """``0.75 (1 - u^2)`` on ``|u| <= 1`` and zero elsewhere."""
    u = np.asarray(u, dtype=float)
    w = np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)
    return w if w.ndim else float(w)


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float
    name: str = "epanechnikov"

    def __post_init__(self):
        if self.name != "epanechnikov":
            raise ValueError(f"unsupported kernel {self.name!r}")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError("bandwidth must be a positive number")

    def scaled(self, d):
        """``K_h(d) = K(d / h) / h``."""
        return epanechnikov(np.asarray(d, dtype=float) / self.bandwidth) / self.bandwidth


@dataclass(frozen=True)
class RawCovPairs:
    """All off-diagonal products ``e_i(T_ij1) e_i(T_ij2)``, ``j1 != j2``.

    ``s_index``/``t_index`` point into ``unique_times``; ``weight`` is
    ``1/(n N_i)`` (per_subject) or ``1/N`` (per_pair).
    """

    subject: np.ndarray
    s: np.ndarray
    t: np.ndarray
    c: np.ndarray
    weight: np.ndarray
    s_index: np.ndarray
    t_index: np.ndarray
    unique_times: np.ndarray
    weighting: str

    def __len__(self) -> int:
        return self.c.size

    @property
    def n_pairs(self) -> int:
        return self.c.size

    @cached_property
    def _totals(self):
        M = self.unique_times.size
        flat = self.s_index * M + self.t_index
        w = np.bincount(flat, weights=self.weight, minlength=M * M).reshape(M, M)
        wc = np.bincount(flat, weights=self.weight * self.c, minlength=M * M).reshape(M, M)
        wcc = np.bincount(flat, weights=self.weight * self.c**2, minlength=M * M).reshape(M, M)
        return w, wc, wcc


def raw_cov_pairs(
    residuals: ResidualSet, weighting: Literal["per_subject", "per_pair"] = "per_subject"
) -> RawCovPairs:
    if weighting not in ("per_subject", "per_pair"):
        raise ValueError("weighting must be 'per_subject' or 'per_pair'")
    unique_times = np.unique(np.concatenate(residuals.times))
    n = len(residuals)
    total = sum(e.size * (e.size - 1) for e in residuals.residuals)
    parts = []
    for i, (e, times) in enumerate(zip(residuals.residuals, residuals.times)):
        m = e.size
        if m < 2:
            raise ValueError(f"subject {i} has fewer than 2 observations")
        j1, j2 = np.nonzero(~np.eye(m, dtype=bool))
        ix = np.searchsorted(unique_times, times)
        Ni = m * (m - 1)
        w = 1.0 / (n * Ni) if weighting == "per_subject" else 1.0 / total
        parts.append((np.full(Ni, i), times[j1], times[j2], e[j1] * e[j2], np.full(Ni, w), ix[j1], ix[j2]))
    cols = [np.concatenate(col) for col in zip(*parts)]
    return RawCovPairs(*cols, unique_times=unique_times, weighting=weighting)


def _local_fit(w, wc, u, s_pts, t_pts, h):
    """Local linear intercepts on the ``s_pts x t_pts`` lattice.

    Returns ``(a0, inv00, bad)`` where ``inv00`` is the (0, 0) entry of the
    inverse normal matrix and ``bad`` marks singular cells.
    """
    ds = (u[:, None] - s_pts[None, :]) / h
    dt = (u[:, None] - t_pts[None, :]) / h
    ks = epanechnikov(ds) / h
    kt = epanechnikov(dt) / h
    ks1, kt1 = ks * ds, kt * dt
    wkt, wkt1, wkt2 = w @ kt, w @ kt1, w @ (kt1 * dt)
    S = np.empty((s_pts.size, t_pts.size, 3, 3))
    S[..., 0, 0] = ks.T @ wkt
    S[..., 0, 1] = S[..., 1, 0] = ks1.T @ wkt
    S[..., 0, 2] = S[..., 2, 0] = ks.T @ wkt1
    S[..., 1, 1] = (ks1 * ds).T @ wkt
    S[..., 1, 2] = S[..., 2, 1] = ks1.T @ wkt1
    S[..., 2, 2] = ks.T @ wkt2
    rhs = np.empty((s_pts.size, t_pts.size, 3))
    wckt = wc @ kt
    rhs[..., 0] = ks.T @ wckt
    rhs[..., 1] = ks1.T @ wckt
    rhs[..., 2] = ks.T @ (wc @ kt1)

    with np.errstate(all="ignore"):
        cond = np.linalg.cond(S)
    bad = ~(np.isfinite(cond) & (cond < _COND_LIMIT) & (S[..., 0, 0] > 0))
    a0 = np.full(bad.shape, np.nan)
    inv00 = np.full(bad.shape, np.nan)
    good = ~bad
    if good.any():
        Sg = S[good]
        both = np.stack([rhs[good], np.broadcast_to([1.0, 0.0, 0.0], rhs[good].shape)], axis=-1)
        sol = np.linalg.solve(Sg, both)
        a0[good] = sol[:, 0, 0]
        inv00[good] = sol[:, 0, 1]
    return a0, inv00, bad


def _fit_with_fallback(pairs: RawCovPairs, s_pts, t_pts, h, fallback=True):
    w, wc, _ = pairs._totals
    u = pairs.unique_times
    a0, inv00, bad = _local_fit(w, wc, u, s_pts, t_pts, h)
    n_fallback = 0
    for a, b in zip(*np.nonzero(bad)):
        if not fallback:
            raise SingularSmootherError(
                f"singular local system at (s={s_pts[a]:.4g}, t={t_pts[b]:.4g}) with h={h:.4g}",
                (float(s_pts[a]), float(t_pts[b])),
            )
        hh = h
        for _ in range(MAX_FALLBACK_DOUBLINGS):
            hh *= 2.0
            r0, r1, still = _local_fit(w, wc, u, s_pts[a : a + 1], t_pts[b : b + 1], hh)
            if not still[0, 0]:
                a0[a, b], inv00[a, b] = r0[0, 0], r1[0, 0]
                n_fallback += 1
                break
        else:
            raise SingularSmootherError(
                f"singular local system at (s={s_pts[a]:.4g}, t={t_pts[b]:.4g}) "
                f"even after widening h={h:.4g} to {hh:.4g}",
                (float(s_pts[a]), float(t_pts[b])),
            )
    return a0, inv00, n_fallback


def local_linear_cov_at(pairs: RawCovPairs, s: float, t: float, kernel: KernelSpec) -> float:
    """Intercept of the kernel-weighted plane fit at ``(s, t)``.

    Raises :class:`SingularSmootherError` when the local system is singular;
    no bandwidth widening is attempted here.
    """
    a0, _, _ = _fit_with_fallback(
        pairs, np.array([float(s)]), np.array([float(t)]), kernel.bandwidth, fallback=False
    )
    return float(a0[0, 0])


@dataclass(frozen=True)
class SmoothedCovariance:
    grid: TimeGrid
    values: np.ndarray
    bandwidth: float
    n_pairs: int
    fallback_cells: int = 0

    def to_csv(self) -> str:
        """Rows ``s,t,value`` over the full grid."""
        buf = io.StringIO()
        buf.write("s,t,value\n")
        g = self.grid.points
        for a in range(g.size):
            for b in range(g.size):
                buf.write(f"{g[a]!r},{g[b]!r},{self.values[a, b]!r}\n")
        return buf.getvalue()


def smooth_cov_surface(
    pairs: RawCovPairs, grid: TimeGrid, kernel: KernelSpec, fallback: bool = True
) -> SmoothedCovariance:
    if not grid.is_uniform:
        raise ValueError("smoothing grid must be uniform")
    pts = grid.points
    values, _, n_fallback = _fit_with_fallback(pairs, pts, pts, kernel.bandwidth, fallback)
    values = 0.5 * (values + values.T)
    values.setflags(write=False)
    return SmoothedCovariance(grid, values, float(kernel.bandwidth), pairs.n_pairs, n_fallback)


def gcv_score(pairs: RawCovPairs, grid: TimeGrid, bandwidth: float):
    """``(gcv, rss, trace)`` for one bandwidth; ``gcv`` is ``inf`` when degenerate."""
    surface = smooth_cov_surface(pairs, grid, KernelSpec(bandwidth))
    w, wc, wcc = pairs._totals
    u = pairs.unique_times
    occupied = w > 0
    interp = RegularGridInterpolator((grid.points, grid.points), surface.values, method="linear")
    ia, ib = np.nonzero(occupied)
    fitted = interp(np.column_stack([u[ia], u[ib]]))
    rss = float(np.sum(wcc[ia, ib] - 2.0 * fitted * wc[ia, ib] + fitted**2 * w[ia, ib]))

    _, inv00, _ = _fit_with_fallback(pairs, u, u, bandwidth)
    k0 = float(epanechnikov(0.0)) / bandwidth
    trace = float(np.sum(w[ia, ib] * k0 * k0 * inv00[ia, ib]))
    N = pairs.n_pairs
    if trace >= N:
        return np.inf, rss, trace
    return rss / (1.0 - trace / N) ** 2, rss, trace


def select_bandwidth_gcv(
    pairs: RawCovPairs, grid: TimeGrid, candidates: Sequence[float] = DEFAULT_BANDWIDTHS
) -> float:
    """Bandwidth minimising GCV; ties go to the larger bandwidth."""
    cands = sorted(float(h) for h in candidates)
    if not cands:
        raise ValueError("no candidate bandwidths")
    if len(cands) == 1:
        return cands[0]
    best_h, best = None, np.inf
    for h in cands:
        score, _, _ = gcv_score(pairs, grid, h)
        if np.isfinite(score) and (best_h is None or score <= best * (1.0 + 1e-12)):
            best_h, best = h, score
    if best_h is None:
        raise ValueError("GCV degenerate for every candidate: too few pairs for these bandwidths")
    return best_h

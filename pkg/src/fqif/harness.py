"""Monte-Carlo replications, summary metrics and report rendering."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimator import estimate_eigensystem
from .fpca import EigenSystem, select_kappa
from .kernelsmooth import DEFAULT_GRID_SIZE
from .qif import FitConfig, FitResult, fit_quasi_newton_halving, ols_initial
from .scores import ScoreBasis, build_design
from .simgen import BETA_TRUE, Scenario, gen_dataset

logger = logging.getLogger(__name__)

_FDA_K = re.compile(r"^fda-(\d+)$")
_FDA_AUTO = re.compile(r"^fda-auto(?:\(([0-9.]+)\))?$")


def parse_method(label: str, default_fve: float = 0.95):
    """``('init'|'cs'|'ar1', None)``, ``('fda', k)`` or ``('fda-auto', tau)``."""
    if label == "init":
        return "init", None
    if label == "ldaCS":
        return "cs", None
    if label == "ldaAR":
        return "ar1", None
    if m := _FDA_K.match(label):
        k = int(m.group(1))
        if k < 1:
            raise ValueError(f"bad method {label!r}")
        return "fda", k
    if m := _FDA_AUTO.match(label):
        tau = float(m.group(1)) if m.group(1) else default_fve
        if not 0 < tau < 1:
            raise ValueError(f"FVE threshold out of (0, 1) in {label!r}")
        return "fda-auto", tau
    raise ValueError(f"unknown method {label!r}; use init, ldaCS, ldaAR, fda-<k> or fda-auto(<tau>)")


@dataclass(frozen=True)
class StudyConfig:
    scenario: Scenario
    n: int = 100
    m: int = 100
    replications: int = 100
    methods: tuple = ("init", "ldaCS", "ldaAR", "fda-1", "fda-2", "fda-3", "fda-4", "fda-5")
    seed: int = 0
    bandwidth: object = "gcv"
    grid_size: int = DEFAULT_GRID_SIZE
    beta: tuple = BETA_TRUE
    fve_threshold: float = 0.95

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.methods:
            raise ValueError("method list is empty")
        if self.n < 1 or self.m < 2:
            raise ValueError("need n >= 1 and m >= 2")
        if self.bandwidth != "gcv" and not float(self.bandwidth) > 0:
            raise ValueError("bandwidth must be positive or 'gcv'")
        for label in self.methods:
            parse_method(label, self.fve_threshold)
        object.__setattr__(self, "methods", tuple(self.methods))


@dataclass
class ReplicationResult:
    index: int
    estimates: dict = field(default_factory=dict)
    fve: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    eigsys: EigenSystem | None = None
    bandwidth: float | None = None
    eigen_computations: int = 0


def run_replication(config: StudyConfig, b: int, dataset=None) -> ReplicationResult:
    """Generate replication ``b`` and fit every requested method.

    All fda methods share one smoothed surface and eigen system. Failures
    are recorded per method and never raised.
    """
    if dataset is None:
        dataset, _ = gen_dataset(config.scenario, config.n, config.m, config.beta, config.seed, b)
    out = ReplicationResult(b)
    beta0 = ols_initial(dataset)
    for label in config.methods:
        kind, arg = parse_method(label, config.fve_threshold)
        try:
            if kind == "init":
                out.estimates[label] = beta0.copy()
                continue
            if kind in ("fda", "fda-auto"):
                if out.eigsys is None:
                    est = estimate_eigensystem(dataset, beta0, config.bandwidth, config.grid_size)
                    out.eigsys, out.bandwidth = est.eigsys, est.bandwidth
                    out.eigen_computations += 1
                if kind == "fda":
                    k = select_kappa(out.eigsys, fixed=arg)
                else:
                    k = select_kappa(out.eigsys, fve=arg)
                basis = ScoreBasis.fpca(out.eigsys, k)
                out.fve[label] = float(out.eigsys.fve[k - 1])
            else:
                basis = ScoreBasis(kind)
            fit = fit_quasi_newton_halving(build_design(dataset, basis), FitConfig(basis), beta0)
            out.fits[label] = fit
            if fit.converged:
                out.estimates[label] = fit.beta_hat
            else:
                out.errors[label] = fit.message
        except Exception as exc:  # noqa: BLE001 - a failed cell must not abort the study
            logger.warning("replication %d, method %s failed: %s", b, label, exc)
            out.errors[label] = f"{type(exc).__name__}: {exc}"
    return out


@dataclass(frozen=True)
class MetricsRow:
    method: str
    coefficient: int
    mean: float
    sd: float
    ab: float
    mse_x100: float
    fve_pct: float
    n_used: int
    n_excluded: int


@dataclass
class Report:
    config: StudyConfig
    rows: list
    replications: list = field(default_factory=list, repr=False)

    def row(self, method: str, coefficient: int) -> MetricsRow:
        for r in self.rows:
            if r.method == method and r.coefficient == coefficient:
                return r
        raise KeyError((method, coefficient))

    @property
    def failed_methods(self) -> list:
        return sorted({r.method for r in self.rows if r.n_used == 0})


def summarize(config: StudyConfig, results: list) -> list:
    beta = np.asarray(config.beta, dtype=float)
    rows = []
    for label in config.methods:
        est = [r.estimates[label] for r in results if label in r.estimates]
        fves = [r.fve[label] for r in results if label in r.fve and label in r.estimates]
        used = len(est)
        fve_pct = 100.0 * float(np.mean(fves)) if fves else math.nan
        E = np.array(est).reshape(used, beta.size)
        for j in range(beta.size):
            if used == 0:
                rows.append(MetricsRow(label, j + 1, *([math.nan] * 5), 0, len(results)))
                continue
            col = E[:, j]
            dev = col - beta[j]
            sd = float(np.std(col, ddof=1)) if used > 1 else math.nan
            rows.append(
                MetricsRow(
                    label,
                    j + 1,
                    float(np.mean(col)),
                    sd,
                    float(np.mean(np.abs(dev))),
                    100.0 * float(np.mean(dev**2)),
                    fve_pct,
                    used,
                    len(results) - used,
                )
            )
    return rows


def run_study(config: StudyConfig, workers: int | None = None, order=None, keep_replications=False) -> Report:
    """Run all replications (optionally in a process pool) and aggregate by index."""
    indices = list(range(config.replications)) if order is None else list(order)
    if sorted(indices) != list(range(config.replications)):
        raise ValueError("order must be a permutation of the replication indices")
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(indices))) as pool:
            results = list(pool.map(_run_one, [(config, b) for b in indices], chunksize=1))
    else:
        results = [run_replication(config, b) for b in indices]
    results.sort(key=lambda r: r.index)
    return Report(config, summarize(config, results), results if keep_replications else [])


def _run_one(args):
    config, b = args
    res = run_replication(config, b)
    # eigen systems are large and not needed after aggregation
    res.eigsys = None
    return res


def _fmt(v) -> str:
    return "NA" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}"


def _wide(report: Report):
    p = len(report.config.beta)
    header = ["Method"]
    for j in range(1, p + 1):
        header += [f"b{j}_Mean", f"b{j}_SD", f"b{j}_AB", f"b{j}_MSE"]
    header += ["FVE%", "n_used", "n_excluded"]
    lines = []
    for label in report.config.methods:
        rows = [report.row(label, j) for j in range(1, p + 1)]
        vals = [label]
        for r in rows:
            vals += [_fmt(r.mean), _fmt(r.sd), _fmt(r.ab), _fmt(r.mse_x100)]
        vals += [_fmt(rows[0].fve_pct) if not math.isnan(rows[0].fve_pct) else "", str(rows[0].n_used), str(rows[0].n_excluded)]
        lines.append(vals)
    return header, lines


def emit_report(report: Report, fmt: str = "csv") -> bytes:
    """Wide layout: method, per-coefficient Mean/SD/AB/MSE(x100), FVE%."""
    if not report.rows:
        raise ValueError("empty report")
    header, lines = _wide(report)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(lines)
        return buf.getvalue().encode()
    if fmt in ("md", "markdown"):
        out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        out += ["| " + " | ".join(v for v in line) + " |" for line in lines]
        return ("\n".join(out) + "\n").encode()
    raise ValueError(f"unknown format {fmt!r}")


def emit_fve_scree(eigsys: EigenSystem) -> bytes:
    buf = io.StringIO()
    buf.write("k,lambda,fve\n")
    for k in range(eigsys.n_components):
        buf.write(f"{k + 1},{eigsys.eigenvalues[k]!r},{eigsys.fve[k]!r}\n")
    return buf.getvalue().encode()


def objective_monotone(fit: FitResult) -> bool:
    """Accepted-iterate Q values never increase and end at or below the starting Q."""
    trace = np.asarray(fit.objective_trace)
    return bool(np.all(np.diff(trace) <= 0) and fit.q_value <= fit.q_init)

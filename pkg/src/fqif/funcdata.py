"""Data model for dense functional responses and long-format CSV ingestion."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import IO

import numpy as np


class DataFormatError(ValueError):
    """Raised when a CSV source cannot be turned into a dataset."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing evaluation points on [0, 1]."""

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("a time grid needs at least 2 points")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if pts[0] < 0.0 or pts[-1] > 1.0:
            raise ValueError("grid points must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, size: int) -> "TimeGrid":
        return cls(np.linspace(0.0, 1.0, int(size)))

    def __len__(self) -> int:
        return self.points.size

    @property
    def is_uniform(self) -> bool:
        d = np.diff(self.points)
        return bool(np.allclose(d, d[0], rtol=1e-9, atol=1e-12))

    @property
    def spacing(self) -> float:
        """Distance between neighbouring points (uniform grids)."""
        return float(self.points[1] - self.points[0])


@dataclass(frozen=True)
class FunctionalSample:
    """One subject: ``m_i`` observation times, responses and an ``m_i x p`` design."""

    subject_id: str
    times: np.ndarray
    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        times = _frozen(self.times)
        y = _frozen(self.y)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x = _frozen(x)
        m = times.size
        if times.ndim != 1 or y.shape != (m,) or x.shape[0] != m:
            raise ValueError(f"subject {self.subject_id!r}: inconsistent lengths")
        if m < 2:
            raise DataFormatError(
                f"subject {self.subject_id!r}: insufficient observations (m_i={m}, need >= 2)"
            )
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DataFormatError(f"subject {self.subject_id!r}: non-finite values")
        if np.any(np.diff(times) < 0):
            raise ValueError(f"subject {self.subject_id!r}: times must be sorted")
        if times[0] < 0.0 or times[-1] > 1.0:
            raise ValueError(f"subject {self.subject_id!r}: times must lie in [0, 1]")
        object.__setattr__(self, "subject_id", str(self.subject_id))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def m(self) -> int:
        return self.times.size

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class FunctionalDataset:
    """Collection of subjects sharing the covariate dimension ``p``.

    ``time_scaling`` is ``(offset, span)`` when the raw times were mapped to
    [0, 1] via ``(t - offset) / span`` and ``None`` otherwise.
    """

    samples: tuple
    time_scaling: tuple | None = None
    covariate_names: tuple = field(default=None)

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise ValueError("a dataset needs at least one subject")
        p = samples[0].p
        if any(s.p != p for s in samples):
            raise ValueError("all subjects must share the covariate dimension p")
        object.__setattr__(self, "samples", samples)
        names = self.covariate_names
        if names is None:
            names = tuple(f"x{k + 1}" for k in range(p))
        if len(names) != p:
            raise ValueError("covariate_names must have length p")
        object.__setattr__(self, "covariate_names", tuple(names))

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def p(self) -> int:
        return self.samples[0].p

    @property
    def total_pairs(self) -> int:
        """N = sum_i m_i (m_i - 1), the number of off-diagonal ordered pairs."""
        return int(sum(s.m * (s.m - 1) for s in self.samples))

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        return iter(self.samples)

    def stacked(self):
        """Pooled ``(times, y, X)`` arrays in subject order."""
        times = np.concatenate([s.times for s in self.samples])
        y = np.concatenate([s.y for s in self.samples])
        X = np.vstack([s.x for s in self.samples])
        return times, y, X

    def shift_response(self, delta) -> "FunctionalDataset":
        """Copy of the dataset with ``y_i`` replaced by ``y_i + X_i @ delta``."""
        delta = np.asarray(delta, dtype=float)
        samples = [
            FunctionalSample(s.subject_id, s.times, s.y + s.x @ delta, s.x) for s in self.samples
        ]
        return FunctionalDataset(samples, self.time_scaling, self.covariate_names)

    @classmethod
    def from_arrays(cls, X, y, groups, times, covariate_names=None) -> "FunctionalDataset":
        """Build a dataset from pooled observation rows grouped by subject.

        Subjects keep their first-appearance order and rows are stably
        sorted by time within each subject. Times must already lie in [0, 1].
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=float).ravel()
        times = np.asarray(times, dtype=float).ravel()
        groups = np.asarray(groups)
        if not (X.shape[0] == y.size == times.size == groups.size):
            raise ValueError("X, y, groups and times must have the same number of rows")
        _, first = np.unique(groups, return_index=True)
        samples = []
        for g in groups[np.sort(first)]:
            idx = np.flatnonzero(groups == g)
            idx = idx[np.argsort(times[idx], kind="stable")]
            samples.append(FunctionalSample(str(g), times[idx], y[idx], X[idx]))
        return cls(samples, None, covariate_names)


@dataclass(frozen=True)
class ResidualSet:
    """Per-subject residuals ``y_i - X_i beta`` with their observation times."""

    residuals: tuple
    times: tuple
    beta: np.ndarray

    def __len__(self) -> int:
        return len(self.residuals)


def residuals(dataset: FunctionalDataset, beta) -> ResidualSet:
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != dataset.p:
        raise ValueError(f"beta has length {beta.size}, expected p={dataset.p}")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    res = tuple(_frozen(s.y - s.x @ beta) for s in dataset.samples)
    return ResidualSet(res, tuple(s.times for s in dataset.samples), _frozen(beta))


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"row {row}: cannot parse {column}={text!r} as a number") from None
    if not math.isfinite(value):
        raise DataFormatError(f"row {row}: {column} is not finite (missing values are rejected)")
    return value


def load_csv(source: IO | str | bytes) -> FunctionalDataset:
    """Read a long-format ``subject_id,time,y,x1,...,xp`` CSV.

    ``source`` may be a path, raw bytes or an open (text or binary) stream.
    Row numbers in error messages count data rows from 1.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataFormatError("empty CSV: header is mandatory") from None
    if len(header) < 4 or header[:3] != ["subject_id", "time", "y"]:
        raise DataFormatError("header must start with subject_id,time,y and list >= 1 covariate")
    covariates = header[3:]
    width = len(header)

    ids, t, y, x = [], [], [], []
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise DataFormatError(
                f"row {row_no}: expected {width} columns, found {len(row)} (inconsistent column count)"
            )
        ids.append(row[0].strip())
        t.append(_parse_float(row[1], row_no, "time"))
        y.append(_parse_float(row[2], row_no, "y"))
        x.append([_parse_float(v, row_no, c) for v, c in zip(row[3:], covariates)])
    if not ids:
        raise DataFormatError("CSV has no data rows")

    t = np.array(t)
    scaling = None
    lo, hi = float(t.min()), float(t.max())
    if lo < 0.0 or hi > 1.0:
        if hi <= lo:
            raise DataFormatError("cannot rescale times: all time values are equal")
        scaling = (lo, hi - lo)
        t = (t - lo) / (hi - lo)

    groups = np.array(ids, dtype=object)
    counts: dict[str, int] = {}
    for g in ids:
        counts[g] = counts.get(g, 0) + 1
    short = [g for g, c in counts.items() if c < 2]
    if short:
        raise DataFormatError(
            f"insufficient observations: subject {short[0]!r} has fewer than 2 rows"
        )
    ds = FunctionalDataset.from_arrays(np.array(x), np.array(y), groups, t, tuple(covariates))
    return FunctionalDataset(ds.samples, scaling, ds.covariate_names)


def dump_csv(dataset: FunctionalDataset, dest: IO[str] | None = None) -> str:
    """Write ``dataset`` in the long CSV format; floats use round-trip ``repr``.

    Times are written on the [0, 1] scale the dataset holds.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["subject_id", "time", "y", *dataset.covariate_names])
    for s in dataset.samples:
        for j in range(s.m):
            writer.writerow(
                [s.subject_id, repr(float(s.times[j])), repr(float(s.y[j]))]
                + [repr(float(v)) for v in s.x[j]]
            )
    text = buf.getvalue()
    if dest is not None:
        dest.write(text)
    return text


def datasets_equal(a: FunctionalDataset, b: FunctionalDataset) -> bool:
    """Field-by-field exact comparison of two datasets."""
    if a.n != b.n or a.p != b.p or a.covariate_names != b.covariate_names:
        return False
    for sa, sb in zip(a.samples, b.samples):
        if sa.subject_id != sb.subject_id:
            return False
        for u, v in ((sa.times, sb.times), (sa.y, sb.y), (sa.x, sb.x)):
            if u.shape != v.shape or not np.array_equal(u, v):
                return False
    return True


"""Final-time error measures and convergence-order fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np

CSV_COLUMNS = ("scheme", "k", "h", "N", "max_d", "sum_d", "s_en_d", "sum_dn", "s_en_dn")


def _diff(u_ref, u_num):
    a = np.asarray(u_ref, dtype=float)
    b = np.asarray(u_num, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"size mismatch: {a.shape} vs {b.shape}")
    return np.abs(a - b)


def max_d(u_ref, u_num) -> float:
    d = _diff(u_ref, u_num)
    return float(d.max()) if d.size else 0.0


def sum_d(u_ref, u_num) -> float:
    return float(_diff(u_ref, u_num).sum())


def s_en_d(u_ref, u_num, capacities) -> float:
    """Capacity-weighted deviation, the error expressed as heat."""
    d = _diff(u_ref, u_num)
    c = np.asarray(capacities, dtype=float)
    if c.shape != d.shape:
        raise ValueError(f"size mismatch: capacities {c.shape} vs {d.shape}")
    return float((c * d).sum())


@dataclass(frozen=True)
class ErrorReport:
    scheme: str
    k: int
    h: float
    N: int
    max_d: float
    sum_d: float
    s_en_d: float
    sum_dn: float = math.nan
    s_en_dn: float = math.nan

    def row(self) -> list:
        d = asdict(self)
        return [d[c] for c in CSV_COLUMNS]


def normalize(report: ErrorReport) -> ErrorReport:
    """Fill in the sum errors divided by sqrt(N). Apply once, to a fresh report."""
    root = math.sqrt(report.N)
    return replace(report, sum_dn=report.sum_d / root, s_en_dn=report.s_en_d / root)


def error_report(u_ref, u_num, capacities, scheme: str, k: int, h: float) -> ErrorReport:
    n = len(np.asarray(u_ref))
    rep = ErrorReport(scheme, k, h, n, max_d(u_ref, u_num), sum_d(u_ref, u_num),
                      s_en_d(u_ref, u_num, capacities))
    return normalize(rep)


def fit_order(points: Iterable[Sequence[float]]) -> float:
    """Least-squares slope of log(error) against log(h).

    ``points`` are ``(h, error)`` pairs with h strictly decreasing. Points on
    a spatial-error plateau must be removed by the caller; a nonpositive
    error is rejected.
    """
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points to fit an order")
    hs = np.array([p[0] for p in pts])
    errs = np.array([p[1] for p in pts])
    if np.any(hs <= 0) or np.any(np.diff(hs) >= 0):
        raise ValueError("stepsizes must be positive and strictly decreasing")
    if np.any(errs <= 0) or not np.all(np.isfinite(errs)):
        raise ValueError("errors must be positive and finite; trim plateau points first")
    slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
    return float(slope)


def trim_plateau(points, plateau: float, factor: float = 10.0):
    """Keep only points whose error exceeds ``factor * plateau``."""
    return [(h, e) for h, e in points if e > factor * plateau]

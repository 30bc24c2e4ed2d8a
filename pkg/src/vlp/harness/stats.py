"""Error statistics: dispersion radius, nearest-rank percentiles, PMF/CDF and line fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from vlp.errors import DomainError

PMF_BIN_CM = 0.1


class DegenerateFitError(DomainError):
    """The independent coordinate has zero variance."""


def dispersion_radius(points) -> float:
    """Half the largest pairwise distance among ``points`` (N x 2)."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(p) < 2:
        raise DomainError("dispersion radius needs at least two points")
    # the farthest pair lies on the convex hull
    if len(p) > 64:
        try:
            p = p[ConvexHull(p).vertices]
        except QhullError:
            pass
    return float(pdist(p).max()) / 2.0


def percentile_nearest_rank(values, q: float) -> float:
    """Smallest value with at least ``q`` percent of the data at or below it."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise DomainError("percentile of an empty sample")
    if not 0 < q <= 100:
        raise DomainError("q must lie in (0, 100]")
    rank = max(1, math.ceil(q / 100.0 * v.size))
    return float(v[rank - 1])


def pmf(errors, bin_width: float = PMF_BIN_CM) -> tuple[np.ndarray, np.ndarray]:
    """Probability mass per ``bin_width`` bin; returns (left bin edges, mass)."""
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        return np.zeros(0), np.zeros(0)
    idx = np.floor(e / bin_width + 1e-9).astype(int)
    counts = np.bincount(idx - idx.min())
    return (np.arange(counts.size) + idx.min()) * bin_width, counts / e.size


def cdf(errors) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF evaluated at the sorted samples."""
    e = np.sort(np.asarray(errors, dtype=float).ravel())
    return e, np.arange(1, e.size + 1) / e.size


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    axis: str  # independent coordinate: "x" fits y(x), "y" fits x(y)

    def __str__(self) -> str:
        dep = "y" if self.axis == "x" else "x"
        return f"{dep} = {self.slope:.4f}{self.axis} {'+' if self.intercept >= 0 else '-'} {abs(self.intercept):.4f}"


def fit_line(points, dominant_axis: str = "x") -> LineFit:
    """Ordinary least squares of the other coordinate on ``dominant_axis``."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(p) < 2:
        raise DomainError("line fit needs at least two samples")
    if dominant_axis not in ("x", "y"):
        raise DomainError("dominant_axis must be 'x' or 'y'")
    u, w = (p[:, 0], p[:, 1]) if dominant_axis == "x" else (p[:, 1], p[:, 0])
    du = u - u.mean()
    sxx = float(du @ du)
    if sxx <= 1e-12 * max(1.0, float(u @ u)):
        raise DegenerateFitError(f"no spread along {dominant_axis}")
    slope = float(du @ (w - w.mean())) / sxx
    return LineFit(slope, float(w.mean() - slope * u.mean()), dominant_axis)


def dominant_axis(a: tuple[float, float], b: tuple[float, float]) -> str:
    return "x" if abs(b[0] - a[0]) >= abs(b[1] - a[1]) else "y"


def distance_to_segment(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    L2 = float(ab @ ab)
    t = 0.0 if L2 == 0 else min(1.0, max(0.0, float((p - a) @ ab) / L2))
    return float(np.linalg.norm(p - (a + t * ab)))


@dataclass(frozen=True)
class ErrorSample:
    truth: tuple[float, float]
    estimate: tuple[float, float]
    error_cm: float
    t_solve: float = float("nan")


@dataclass
class ErrorStats:
    samples: list[ErrorSample]
    mean: float
    p90: float
    p95: float
    max: float
    dispersion_radius_cm: float
    fitted_line: LineFit | None = None
    pmf: tuple[np.ndarray, np.ndarray] = field(default=(np.zeros(0), np.zeros(0)), repr=False)
    cdf: tuple[np.ndarray, np.ndarray] = field(default=(np.zeros(0), np.zeros(0)), repr=False)

    def summary(self) -> str:
        lines = [
            f"samples            {len(self.samples)}",
            f"mean error (cm)    {self.mean:.4f}",
            f"p90 error (cm)     {self.p90:.4f}",
            f"p95 error (cm)     {self.p95:.4f}",
            f"max error (cm)     {self.max:.4f}",
            f"dispersion r (cm)  {self.dispersion_radius_cm:.4f}",
        ]
        if self.fitted_line is not None:
            lines.append(f"fitted line        {self.fitted_line}")
        return "\n".join(lines)


def error_distribution(samples: Sequence[ErrorSample], line_axis: str | None = None) -> ErrorStats:
    if not samples:
        raise DomainError("no samples")
    e = np.array([s.error_cm for s in samples])
    est = np.array([s.estimate for s in samples])
    fit = None
    if line_axis is not None and len(samples) >= 2:
        try:
            fit = fit_line(est, line_axis)
        except DegenerateFitError:
            fit = None
    return ErrorStats(
        samples=list(samples),
        mean=float(e.mean()),
        p90=percentile_nearest_rank(e, 90),
        p95=percentile_nearest_rank(e, 95),
        max=float(e.max()),
        dispersion_radius_cm=dispersion_radius(est) if len(est) >= 2 else 0.0,
        fitted_line=fit,
        pmf=pmf(e),
        cdf=cdf(e),
    )

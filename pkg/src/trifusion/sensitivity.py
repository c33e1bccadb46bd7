"""Robustness sensitivity: absolute slope of metric vs perturbation level."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDesignError


@dataclass
class RegressionFit:
    slope: float
    intercept: float
    r2: float
    n: int


def ols_fit(points) -> RegressionFit:
    """Closed-form least squares of y on x with intercept.

    Sums run in f64 to keep large MSE columns stable.
    """
    pts = list(points)
    if len(pts) < 2:
        raise DegenerateDesignError(f"need at least 2 points, got {len(pts)}")
    x = np.array([p[0] for p in pts], dtype=np.float64)
    y = np.array([p[1] for p in pts], dtype=np.float64)
    dx = x - x.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        raise DegenerateDesignError("all x values identical; slope is undefined")
    slope = float(np.dot(dx, y - y.mean()) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(y - y.mean(), y - y.mean()))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RegressionFit(slope=slope, intercept=intercept, r2=r2, n=len(pts))


def sensitivity(fit: RegressionFit) -> float:
    """S = |slope|; lower means more robust."""
    return abs(fit.slope)

"""Linear fit of maximum risk against time and the extrapolated safe class duration."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS = 1e-12


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float | None = None    # None when the series has no variance
    residual_bound: float = 0.0
    t_first: float = 0.0
    risk_first: float = 0.0

    def predict(self, t):
        return self.intercept + self.slope * np.asarray(t, dtype=float)

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "residual_bound": self.residual_bound}


def fit_max_risk(series, start: float = 0.0) -> LinearFit:
    """Ordinary least squares of risk on time over samples with t >= ``start``."""
    s = np.asarray(list(series), dtype=float).reshape(-1, 2)
    s = s[s[:, 0] >= start]
    t, y = s[:, 0], s[:, 1]
    if len(t) < 2 or np.ptp(t) == 0.0:
        raise ValueError("need at least two distinct times")
    tm, ym = t.mean(), y.mean()
    dt, dy = t - tm, y - ym
    slope = float(np.dot(dt, dy) / np.dot(dt, dt))
    intercept = float(ym - slope * tm)
    resid = y - (intercept + slope * t)
    sst = float(np.dot(dy, dy))
    r2 = None if np.ptp(y) == 0.0 else 1.0 - float(np.dot(resid, resid)) / sst
    return LinearFit(slope, intercept, r2, float(np.max(np.abs(resid))), float(t[0]), float(y[0]))


def safe_class_time(fit: LinearFit, threshold: float = 0.5) -> float:
    """Time at which the fitted maximum risk reaches ``threshold``; ``inf`` if never."""
    if fit.risk_first >= threshold or fit.intercept >= threshold:
        return fit.t_first if fit.risk_first >= threshold else 0.0
    if fit.slope <= 0.0:
        return math.inf
    return (threshold - fit.intercept) / fit.slope


def fit_deviation(fit: LinearFit, holdout) -> float:
    """Largest relative gap between the fit and a held-out series."""
    s = np.asarray(list(holdout), dtype=float).reshape(-1, 2)
    if len(s) == 0:
        raise ValueError("holdout must not be empty")
    pred = fit.predict(s[:, 0])
    return float(np.max(np.abs(pred - s[:, 1]) / np.maximum(s[:, 1], EPS)))


def class_time_report(series, threshold: float = 0.5, start: float = 0.0, holdout=None) -> dict:
    try:
        fit = fit_max_risk(series, start)
    except ValueError as exc:
        return {"error": str(exc)}
    t_star = safe_class_time(fit, threshold)
    out = fit.to_dict()
    out["threshold"] = threshold
    out["t_star"] = None if math.isinf(t_star) else t_star
    out["unbounded"] = math.isinf(t_star)
    if holdout:
        out["deviation"] = fit_deviation(fit, holdout)
    return out

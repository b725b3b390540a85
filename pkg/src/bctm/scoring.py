"""Distribution-recovery performance measures: MAD against a known truth,
pinball quantile score, CRPS via quantile integration, and empirical
coverage of pointwise credible intervals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["EvaluationGrid", "mad", "quantile_score", "crps", "coverage"]


@dataclass
class EvaluationGrid:
    """(y, x) evaluation tuples with true cdf values attached when the
    generator is known."""

    y: np.ndarray
    x: dict[str, np.ndarray]
    true_cdf: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.x = {k: np.asarray(v) for k, v in self.x.items()}
        n = len(self.y)
        for name, col in self.x.items():
            if len(col) != n:
                raise ValueError(f"grid column {name!r} length mismatch")
        if self.true_cdf is not None:
            self.true_cdf = np.asarray(self.true_cdf, dtype=float)
            if self.true_cdf.shape != (n,):
                raise ValueError("true_cdf must align with the grid")
            if np.any((self.true_cdf < 0) | (self.true_cdf > 1)):
                raise ValueError("true cdf values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.y)


def mad(true_cdf, est_cdf) -> float:
    """Mean absolute deviation between true and estimated probabilities."""
    true_cdf = np.asarray(true_cdf, dtype=float)
    est_cdf = np.asarray(est_cdf, dtype=float)
    if true_cdf.shape != est_cdf.shape:
        raise ValueError(f"length mismatch: {true_cdf.shape} vs {est_cdf.shape}")
    return float(np.mean(np.abs(true_cdf - est_cdf)))


def quantile_score(q, y, alpha: float):
    """Pinball loss 2 (1{y < q} - alpha)(q - y); nonnegative, zero at y = q."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    q = np.asarray(q, dtype=float)
    y = np.asarray(y, dtype=float)
    return 2.0 * ((y < q).astype(float) - alpha) * (q - y)


def crps(cdf_inverter, y: float, n_alpha: int = 199) -> float:
    """Continuous ranked probability score as the midpoint-rule integral of
    the quantile score over an equispaced interior alpha grid.

    `cdf_inverter` maps a vector of probabilities to predictive quantiles.
    """
    if n_alpha < 10:
        raise ValueError("n_alpha must be at least 10")
    alphas = (np.arange(n_alpha) + 0.5) / n_alpha
    q = np.asarray(cdf_inverter(alphas), dtype=float)
    scores = 2.0 * ((y < q).astype(float) - alphas) * (q - y)
    return float(scores.mean())


def coverage(truth, lower, upper) -> float:
    """Fraction of points whose truth lies inside [lower, upper]."""
    truth = np.asarray(truth, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not (truth.shape == lower.shape == upper.shape):
        raise ValueError("coverage inputs must share a shape")
    return float(np.mean((lower <= truth) & (truth <= upper)))

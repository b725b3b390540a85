"""Response and covariate containers with censoring/discreteness metadata.

A dataset is a column table of covariates plus one response record per row.
Responses are exactly observed, right-/left-/interval-censored, or discrete
ordinal levels drawn from a shared ordered level list. Internally every
non-exact row is reduced to a probability mass on an interval (lower, upper]
with infinite endpoints where a side is unbounded; the likelihood layer
consumes only that reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["DataSet", "EXACT", "RIGHT", "LEFT", "INTERVAL", "DISCRETE", "STATUS_NAMES"]

EXACT, RIGHT, LEFT, INTERVAL, DISCRETE = range(5)
STATUS_NAMES = {"exact": EXACT, "right": RIGHT, "left": LEFT, "interval": INTERVAL}
_STATUS_LABELS = {v: k for k, v in STATUS_NAMES.items()}
_STATUS_LABELS[DISCRETE] = "discrete"


@dataclass
class DataSet:
    """Rows of responses (with status metadata) and named covariate columns."""

    status: np.ndarray
    y: np.ndarray
    y_low: np.ndarray
    y_high: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)
    levels: np.ndarray | None = None
    level_index: np.ndarray | None = None
    infinite_support: bool = False

    def __post_init__(self):
        self.status = np.asarray(self.status, dtype=int)
        n = self.n
        for name in ("y", "y_low", "y_high"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
            setattr(self, name, arr)
        for name, col in self.covariates.items():
            col = np.asarray(col)
            if col.shape != (n,):
                raise ValueError(f"covariate {name!r} must have shape ({n},)")
            self.covariates[name] = col
        iv = self.status == INTERVAL
        if np.any(iv) and not np.all(self.y_low[iv] < self.y_high[iv]):
            raise ValueError("interval censoring requires y_low < y_high")
        if np.any(self.status == DISCRETE):
            if self.levels is None or self.level_index is None:
                raise ValueError("discrete rows require the ordered level list and per-row level index")
            self.levels = np.asarray(self.levels, dtype=float)
            if np.any(np.diff(self.levels) <= 0):
                raise ValueError("discrete levels must be strictly increasing")
            self.level_index = np.asarray(self.level_index, dtype=int)
            k = self.level_index[self.status == DISCRETE]
            if k.min() < 0 or k.max() >= len(self.levels):
                raise ValueError("level_index out of range")

    @property
    def n(self) -> int:
        return len(self.status)

    # ------------------------------------------------------------------ #
    # constructors

    @classmethod
    def from_exact(cls, y, covariates=None) -> "DataSet":
        y = np.asarray(y, dtype=float)
        n = len(y)
        nan = np.full(n, np.nan)
        return cls(np.full(n, EXACT), y, nan.copy(), nan.copy(), dict(covariates or {}))

    @classmethod
    def from_censored(cls, status, y_low=None, y_high=None, covariates=None) -> "DataSet":
        """Mixed exact/censored rows.

        `status` holds "exact", "right", "left" or "interval" per row. Exact
        rows read their value from y_low (or y_high when y_low is missing);
        right-censored rows read the observed lower bound from y_low,
        left-censored rows the upper bound from y_high, interval rows both.
        """
        codes = np.array([STATUS_NAMES[str(s).lower()] for s in status], dtype=int)
        n = len(codes)
        lo = np.full(n, np.nan) if y_low is None else np.asarray(y_low, dtype=float).copy()
        hi = np.full(n, np.nan) if y_high is None else np.asarray(y_high, dtype=float).copy()
        y = np.full(n, np.nan)
        ex = codes == EXACT
        y[ex] = np.where(np.isfinite(lo[ex]), lo[ex], hi[ex])
        if np.any(~np.isfinite(y[ex])):
            raise ValueError("exact rows need a value in y_low (or y_high)")
        lo[ex] = np.nan
        hi[ex] = np.nan
        if np.any((codes == RIGHT) & ~np.isfinite(lo)):
            raise ValueError("right-censored rows need a finite y_low")
        if np.any((codes == LEFT) & ~np.isfinite(hi)):
            raise ValueError("left-censored rows need a finite y_high")
        return cls(codes, y, lo, hi, dict(covariates or {}))

    @classmethod
    def from_discrete(cls, values, levels, covariates=None, infinite_support=False) -> "DataSet":
        """Ordinal rows; `values` are raw level values matched against `levels`."""
        levels = np.asarray(levels, dtype=float)
        values = np.asarray(values, dtype=float)
        idx = np.searchsorted(levels, values)
        idx = np.clip(idx, 0, len(levels) - 1)
        if not np.allclose(levels[idx], values):
            raise ValueError("every discrete value must be one of the declared levels")
        n = len(values)
        nan = np.full(n, np.nan)
        return cls(
            np.full(n, DISCRETE), nan.copy(), nan.copy(), nan.copy(),
            dict(covariates or {}), levels=levels, level_index=idx,
            infinite_support=infinite_support,
        )

    # ------------------------------------------------------------------ #

    def status_labels(self) -> list[str]:
        return [_STATUS_LABELS[int(s)] for s in self.status]

    def response_span(self) -> tuple[float, float]:
        """Range of all finite response locations (values, bounds, levels)."""
        vals = [self.y[np.isfinite(self.y)], self.y_low[np.isfinite(self.y_low)],
                self.y_high[np.isfinite(self.y_high)]]
        if self.levels is not None:
            vals.append(self.levels)
        allv = np.concatenate([v for v in vals if v.size])
        if allv.size == 0:
            raise ValueError("dataset has no finite response information")
        return float(allv.min()), float(allv.max())

    def bounds(self):
        """(exact_mask, lower, upper): mass-interval reduction of every row.

        Exact rows keep NaN bounds; a discrete level k maps to the interval
        (levels[k-1], levels[k]] with the first level left-unbounded and, for
        a finite sample space, the last level right-unbounded.
        """
        n = self.n
        exact = self.status == EXACT
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        m = self.status == RIGHT
        lo[m] = self.y_low[m]
        m = self.status == LEFT
        hi[m] = self.y_high[m]
        m = self.status == INTERVAL
        lo[m] = self.y_low[m]
        hi[m] = self.y_high[m]
        m = self.status == DISCRETE
        if np.any(m):
            k = self.level_index[m]
            K = len(self.levels)
            low_k = np.where(k > 0, self.levels[np.maximum(k - 1, 0)], -np.inf)
            if self.infinite_support:
                high_k = self.levels[k]
            else:
                high_k = np.where(k < K - 1, self.levels[np.minimum(k, K - 2)], np.inf)
            lo[m] = low_k
            hi[m] = high_k
        lo[exact] = np.nan
        hi[exact] = np.nan
        return exact, lo, hi

    def subset(self, idx) -> "DataSet":
        idx = np.asarray(idx)
        return DataSet(
            self.status[idx], self.y[idx], self.y_low[idx], self.y_high[idx],
            {k: v[idx] for k, v in self.covariates.items()},
            levels=self.levels,
            level_index=None if self.level_index is None else self.level_index[idx],
            infinite_support=self.infinite_support,
        )

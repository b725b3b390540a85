"""B-spline bases, analytic derivatives, and row-wise tensor products.

Everything downstream (transformation functions, penalties, design blocks)
is assembled from the three primitives in this module: open-knot B-spline
evaluation via the Cox-de Boor recursion, the row-wise Kronecker product
that turns a response basis and a covariate basis into a joint interaction
basis, and column centering with stored means for prediction-time reuse.
All outputs are plain float arrays and immutable by convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KnotVector",
    "BasisMatrix",
    "make_knots",
    "eval_basis",
    "row_kronecker",
    "center_columns",
    "apply_centering",
]


@dataclass(frozen=True)
class KnotVector:
    """Open (clamped) knot vector on [lo, hi] with repeated boundary knots."""

    degree: int
    knots: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        p = self.degree
        if not (np.all(knots[: p + 1] == self.lo) and np.all(knots[-(p + 1):] == self.hi)):
            raise ValueError("boundary knots must repeat degree+1 times")
        if self.num_basis < p + 1:
            raise ValueError("knot vector supports fewer basis functions than degree+1")

    @property
    def num_basis(self) -> int:
        return len(self.knots) - self.degree - 1


@dataclass
class BasisMatrix:
    """Dense (n_points x D) basis evaluation, flagged if it holds derivatives."""

    values: np.ndarray
    is_derivative: bool = False
    source: str = ""

    @property
    def shape(self):
        return self.values.shape


def make_knots(lo: float, hi: float, num_basis: int, degree: int = 3) -> KnotVector:
    """Equidistant open knot vector giving exactly `num_basis` basis functions.

    Interior knots are evenly spaced on (lo, hi); the boundaries are repeated
    degree+1 times so the basis is clamped (first/last function equal one at
    the respective boundary).
    """
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if num_basis < degree + 1:
        raise ValueError(f"num_basis must be at least degree+1={degree + 1}, got {num_basis}")
    n_interior = num_basis - degree - 1
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    knots = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
    return KnotVector(degree=degree, knots=knots, lo=lo, hi=hi)


def _find_spans(kv: KnotVector, x: np.ndarray) -> np.ndarray:
    # Span i satisfies knots[i] <= x < knots[i+1]; the right boundary is
    # assigned to the last proper span so the final basis function is 1 there.
    idx = np.searchsorted(kv.knots, x, side="right") - 1
    return np.clip(idx, kv.degree, kv.num_basis - 1)


def _nonzero_basis(kv: KnotVector, x: np.ndarray, degree: int, spans: np.ndarray) -> np.ndarray:
    """Values of the `degree+1` basis functions of `degree` that are nonzero
    on each point's span; column r holds function index spans - degree + r."""
    t = kv.knots
    n = x.shape[0]
    vals = np.zeros((n, degree + 1))
    vals[:, 0] = 1.0
    left = np.zeros((n, degree + 1))
    right = np.zeros((n, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - t[spans + 1 - j]
        right[:, j] = t[spans + j] - x
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = np.where(denom > 0, vals[:, r] / np.where(denom > 0, denom, 1.0), 0.0)
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
    return vals


def eval_basis(kv: KnotVector, points, deriv_order: int = 0) -> BasisMatrix:
    """Evaluate the B-spline basis (or its first derivative) at `points`.

    Points outside [lo, hi] are clamped to the boundary; a warning reports
    how many were clamped. Rows of the deriv_order=0 matrix sum to one
    (partition of unity), rows of the derivative matrix sum to zero.
    """
    if deriv_order not in (0, 1):
        raise ValueError("deriv_order must be 0 or 1")
    x = np.atleast_1d(np.asarray(points, dtype=float))
    n_outside = int(np.count_nonzero((x < kv.lo) | (x > kv.hi)))
    if n_outside:
        warnings.warn(
            f"{n_outside} evaluation point(s) outside [{kv.lo}, {kv.hi}] clamped to the boundary",
            stacklevel=2,
        )
        x = np.clip(x, kv.lo, kv.hi)

    p = kv.degree
    D = kv.num_basis
    t = kv.knots
    n = x.shape[0]
    spans = _find_spans(kv, x)
    out = np.zeros((n, D))
    cols = spans[:, None] + np.arange(-p, 1)[None, :]

    if deriv_order == 0:
        vals = _nonzero_basis(kv, x, p, spans)
        out[np.arange(n)[:, None], cols] = vals
        return BasisMatrix(out, is_derivative=False, source=f"bspline(p={p},D={D})")

    # First derivative from the degree p-1 basis:
    # B'_{i,p} = p * ( B_{i,p-1}/(t_{i+p}-t_i) - B_{i+1,p-1}/(t_{i+p+1}-t_{i+1}) )
    vals_lo = _nonzero_basis(kv, x, p - 1, spans)  # column r -> function spans-(p-1)+r
    ders = np.zeros((n, p + 1))
    for r in range(p + 1):
        i = spans - p + r
        b_i = vals_lo[:, r - 1] if 1 <= r <= p else np.zeros(n)
        b_ip1 = vals_lo[:, r] if r <= p - 1 else np.zeros(n)
        d1 = t[i + p] - t[i]
        d2 = t[i + p + 1] - t[i + 1]
        term1 = np.where(d1 > 0, b_i / np.where(d1 > 0, d1, 1.0), 0.0)
        term2 = np.where(d2 > 0, b_ip1 / np.where(d2 > 0, d2, 1.0), 0.0)
        ders[:, r] = p * (term1 - term2)
    out[np.arange(n)[:, None], cols] = ders
    return BasisMatrix(out, is_derivative=True, source=f"bspline'(p={p},D={D})")


def row_kronecker(A: BasisMatrix, B: BasisMatrix) -> BasisMatrix:
    """Row-wise Kronecker product: row i is kron(A[i], B[i]).

    Column ordering is "A index outer, B index inner", i.e. out[:, d1*D2 + d2]
    = A[:, d1] * B[:, d2], matching the coefficient layout used for tensor
    product terms throughout the package.
    """
    a, b = A.values, B.values
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row count mismatch: {a.shape[0]} vs {b.shape[0]}")
    n, d1 = a.shape
    d2 = b.shape[1]
    out = np.einsum("ni,nj->nij", a, b).reshape(n, d1 * d2)
    return BasisMatrix(
        out,
        is_derivative=A.is_derivative or B.is_derivative,
        source=f"({A.source})x({B.source})",
    )


def center_columns(B: BasisMatrix) -> tuple[BasisMatrix, np.ndarray]:
    """Subtract column means; the means are retained for prediction rows."""
    means = B.values.mean(axis=0)
    return BasisMatrix(B.values - means, B.is_derivative, B.source), means


def apply_centering(B: BasisMatrix, means: np.ndarray) -> BasisMatrix:
    """Center prediction rows with stored training means, not their own."""
    return BasisMatrix(B.values - means, B.is_derivative, B.source)

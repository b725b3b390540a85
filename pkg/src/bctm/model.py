"""Model specification and realized design blocks.

A model is a reference distribution plus a list of terms. Each term pairs a
response basis (intercept / linear / monotone B-spline) with a covariate
basis (constant, linear columns, B-spline, grouped random effect, or a
discrete spatial effect on an adjacency graph) through a row-wise Kronecker
product. Building a term against data realizes the joint block, its
response derivative, the anisotropic penalty pair, the monotonicity
reparameterization structure, and the hyperprior configuration.

Coefficient layout: a model's unconstrained vector is (beta0, beta_1, ...,
beta_J); the intercept beta0 has a flat prior and is not part of any term.
Within a term the raw tensor layout is response-index outer, covariate-index
inner; raw entries with response index >= 2 are exponentiated and
cumulatively summed along the response index to produce strictly increasing
basis coefficients gamma. Each term additionally carries a column-orthonormal
embedding of its sampled coefficients into the raw layout: directions that
are exactly flat in both likelihood and penalty (a constant column
duplicating the global intercept, or the constant function inside a centered
partition-of-unity block) are projected out, since they would otherwise be
ridge-only random-walk coordinates.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.sparse.csgraph import connected_components

from .basis import BasisMatrix, KnotVector, center_columns, eval_basis, make_knots, row_kronecker
from .data import DataSet
from .reference import get_reference

__all__ = [
    "InverseGamma",
    "ScaleDependent",
    "TermSpec",
    "ModelSpec",
    "TermDesign",
    "ModelDesign",
    "RowBlocks",
    "build_term",
    "build_design",
    "build_precision",
    "make_row_blocks",
    "reparameterize",
    "elicit_sd_scale",
    "PRECISION_RIDGE",
    "BETA_CLIP",
]

PRECISION_RIDGE = 1e-6
BETA_CLIP = 30.0
_RESPONSES = ("intercept", "linear", "spline")
_COV_KINDS = ("none", "linear", "spline", "random_effect", "spatial")


# --------------------------------------------------------------------------- #
# hyperpriors


@dataclass(frozen=True)
class InverseGamma:
    """IG(a, b) smoothing-variance prior; the weakly informative default."""

    a: float = 1.0
    b: float = 0.001
    kind: str = field(default="ig", init=False)

    def log_density(self, tau2):
        from scipy.special import gammaln

        a, b = self.a, self.b
        return a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(tau2) - b / tau2


@dataclass(frozen=True)
class ScaleDependent:
    """Weibull(shape 1/2, scale theta) prior with theta elicited from
    P(max |beta| <= c) = 1 - alpha; theta=None means "elicit at build time"."""

    c: float = 3.0
    alpha: float = 0.01
    theta: float | None = None
    kind: str = field(default="sd", init=False)

    def log_density(self, tau2):
        th = self.theta
        if th is None:
            raise ValueError("scale-dependent prior used before its scale was elicited")
        return np.log(0.5) - 0.5 * np.log(th) - 0.5 * np.log(tau2) - np.sqrt(tau2 / th)


def _hyper_to_dict(h):
    d = {"kind": h.kind}
    d.update({k: v for k, v in asdict(h).items() if k != "kind"})
    return d


def _hyper_from_dict(d):
    d = dict(d)
    kind = d.pop("kind", "ig")
    if kind == "ig":
        return InverseGamma(**d)
    if kind == "sd":
        return ScaleDependent(**d)
    raise ValueError(f"unknown hyperprior kind {kind!r}")


# --------------------------------------------------------------------------- #
# specification


@dataclass
class TermSpec:
    """Declarative description of one partial transformation function."""

    response: str = "intercept"
    covariate_kind: str = "none"
    covariates: tuple[str, ...] = ()
    response_dim: int = 10
    covariate_dim: int = 10
    degree: int = 3
    covariate_intercept: bool = False
    center: bool | None = None
    hyperprior: InverseGamma | ScaleDependent = field(default_factory=InverseGamma)
    adjacency: tuple[tuple[str, str], ...] | None = None
    name: str = ""

    def __post_init__(self):
        self.covariates = tuple(self.covariates)
        if self.response not in _RESPONSES:
            raise ValueError(f"unknown response basis {self.response!r}")
        if self.covariate_kind not in _COV_KINDS:
            raise ValueError(f"unknown covariate basis {self.covariate_kind!r}")
        if self.response == "intercept" and self.covariate_kind == "none":
            raise ValueError(
                "a pure intercept term is not allowed; the model carries a global intercept"
            )
        if self.covariate_kind == "none" and self.covariates:
            raise ValueError("covariate_kind='none' takes no covariate names")
        if self.covariate_kind != "none" and not self.covariates:
            raise ValueError(f"covariate_kind={self.covariate_kind!r} needs covariate names")
        if self.covariate_kind in ("spline", "random_effect", "spatial") and len(self.covariates) != 1:
            raise ValueError(f"covariate_kind={self.covariate_kind!r} takes exactly one covariate")
        if self.response == "spline" and self.response_dim < self.degree + 1:
            raise ValueError("response_dim too small for the spline degree")
        if self.adjacency is not None:
            self.adjacency = tuple(tuple(str(v) for v in e) for e in self.adjacency)
        if self.covariate_kind == "spatial" and self.adjacency is None:
            raise ValueError("spatial terms need an adjacency edge list")

    @property
    def monotone(self) -> bool:
        return self.response == "spline"

    def to_dict(self) -> dict:
        d = {
            "response": self.response,
            "covariate_kind": self.covariate_kind,
            "covariates": list(self.covariates),
            "response_dim": self.response_dim,
            "covariate_dim": self.covariate_dim,
            "degree": self.degree,
            "covariate_intercept": self.covariate_intercept,
            "center": self.center,
            "hyperprior": _hyper_to_dict(self.hyperprior),
            "name": self.name,
        }
        if self.adjacency is not None:
            d["adjacency"] = [list(e) for e in self.adjacency]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TermSpec":
        d = dict(d)
        d["covariates"] = tuple(d.get("covariates", ()))
        if "hyperprior" in d:
            d["hyperprior"] = _hyper_from_dict(d["hyperprior"])
        if d.get("adjacency") is not None:
            d["adjacency"] = tuple(tuple(e) for e in d["adjacency"])
        return cls(**d)


@dataclass
class ModelSpec:
    """Reference distribution, term list, and model-level switches."""

    terms: list[TermSpec]
    reference: str = "normal"
    intercept: bool = True
    seed: int | None = None

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a model needs at least one term")
        if all(t.response == "intercept" for t in self.terms):
            raise ValueError("at least one term must depend on the response")
        get_reference(self.reference)

    def to_dict(self) -> dict:
        return {
            "reference": self.reference,
            "intercept": self.intercept,
            "seed": self.seed,
            "terms": [t.to_dict() for t in self.terms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            terms=[TermSpec.from_dict(t) for t in d["terms"]],
            reference=d.get("reference", "normal"),
            intercept=d.get("intercept", True),
            seed=d.get("seed"),
        )


# --------------------------------------------------------------------------- #
# realized designs


@dataclass
class TermDesign:
    """One term realized against training data; immutable after build.

    C and Cp live in the raw tensor layout (width D1*D2); the sampled
    coefficient vector (width D) maps into it through `embed`.
    """

    spec: TermSpec
    label: str
    D1: int
    D2: int
    D: int
    monotone: bool
    kept_raw: np.ndarray | None   # selection embedding (raw indices), or None
    rotation: np.ndarray | None   # rotation embedding (D_raw, D), or None
    exp_mask_raw: np.ndarray      # raw layout: exponentiated on reparameterization
    exp_mask: np.ndarray          # coefficient layout
    C: np.ndarray               # (n, D1*D2) training block, centered when requested
    Cp: np.ndarray              # (n, D1*D2) response derivative of the block
    col_means: np.ndarray | None
    K1: np.ndarray
    K2: np.ndarray
    pen_response: np.ndarray    # embed' (K1 x I) embed, (D, D)
    pen_covariate: np.ndarray   # embed' (I x K2) embed, (D, D)
    rank_K: int
    omega_grid: np.ndarray
    logdet_table: np.ndarray
    hyperprior: InverseGamma | ScaleDependent
    response_kv: KnotVector | None
    covariate_kv: KnotVector | None
    covariate_stats: dict[str, tuple[float, float]]
    levels: np.ndarray | None

    @property
    def D_raw(self) -> int:
        return self.D1 * self.D2

    @property
    def penalized(self) -> bool:
        return self.rank_K > 0

    @property
    def sample_omega(self) -> bool:
        return len(self.omega_grid) > 1

    @property
    def identity_embed(self) -> bool:
        return self.kept_raw is None and self.rotation is None

    # -- coefficient-space maps ------------------------------------------ #

    def to_raw(self, beta_j: np.ndarray) -> np.ndarray:
        beta_j = np.asarray(beta_j, dtype=float)
        if self.rotation is not None:
            return self.rotation @ beta_j
        if self.kept_raw is not None:
            raw = np.zeros(self.D_raw)
            raw[self.kept_raw] = beta_j
            return raw
        return beta_j

    def from_raw_grad(self, g_raw: np.ndarray) -> np.ndarray:
        if self.rotation is not None:
            return self.rotation.T @ g_raw
        if self.kept_raw is not None:
            return g_raw[self.kept_raw]
        return g_raw

    def gamma(self, beta_j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(gamma in raw layout, raw-layout Jacobian diagonal)."""
        return reparameterize(self.to_raw(beta_j), self)

    # -- evaluation on arbitrary rows ------------------------------------ #

    def _response_blocks(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = np.asarray(y, dtype=float)
        n = len(y)
        if self.spec.response == "intercept":
            return np.ones((n, 1)), np.zeros((n, 1))
        if self.spec.response == "linear":
            return np.column_stack([np.ones(n), y]), np.column_stack([np.zeros(n), np.ones(n)])
        a = eval_basis(self.response_kv, y, 0).values
        ap = eval_basis(self.response_kv, y, 1).values
        return a, ap

    def _covariate_block(self, covariates: dict[str, np.ndarray], n: int) -> np.ndarray:
        kind = self.spec.covariate_kind
        if kind == "none":
            return np.ones((n, 1))
        if kind == "linear":
            cols = []
            if self.spec.covariate_intercept:
                cols.append(np.ones(n))
            for name in self.spec.covariates:
                shift, scale = self.covariate_stats[name]
                cols.append((np.asarray(covariates[name], dtype=float) - shift) / scale)
            return np.column_stack(cols)
        if kind == "spline":
            x = np.asarray(covariates[self.spec.covariates[0]], dtype=float)
            return eval_basis(self.covariate_kv, x, 0).values
        # indicator bases (random effect / spatial)
        x = np.asarray(covariates[self.spec.covariates[0]])
        ind = (x.astype(str)[:, None] == self.levels[None, :]).astype(float)
        missing = int(np.count_nonzero(ind.sum(axis=1) == 0))
        if missing:
            warnings.warn(
                f"{missing} row(s) with unseen {self.spec.covariates[0]!r} level get a zero effect",
                stacklevel=3,
            )
        return ind

    def design_at(self, y, covariates) -> tuple[np.ndarray, np.ndarray]:
        """(C, Cp) raw-layout blocks for new rows, using stored transforms and
        training centering means."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        a, ap = self._response_blocks(y)
        b = self._covariate_block(covariates, len(y))
        c = row_kronecker(BasisMatrix(a), BasisMatrix(b)).values
        cp = row_kronecker(BasisMatrix(ap), BasisMatrix(b)).values
        if self.col_means is not None:
            c = c - self.col_means
        return c, cp


def _difference_penalty_response(d1: int) -> np.ndarray:
    """First differences of the exponentiated coefficients: shrinkage of a
    monotone effect towards a straight line."""
    if d1 < 3:
        return np.zeros((d1, d1))
    dt = np.zeros((d1 - 2, d1))
    rows = np.arange(d1 - 2)
    dt[rows, rows + 1] = 1.0
    dt[rows, rows + 2] = -1.0
    return dt.T @ dt


def _difference_penalty_covariate(d2: int) -> np.ndarray:
    """Standard second-difference P-spline penalty."""
    if d2 < 3:
        return np.zeros((d2, d2))
    dmat = np.zeros((d2 - 2, d2))
    rows = np.arange(d2 - 2)
    dmat[rows, rows] = 1.0
    dmat[rows, rows + 1] = -2.0
    dmat[rows, rows + 2] = 1.0
    return dmat.T @ dmat


def _graph_laplacian(levels: np.ndarray, edges) -> np.ndarray:
    index = {lvl: i for i, lvl in enumerate(levels)}
    G = len(levels)
    adj = np.zeros((G, G))
    for a, b in edges:
        if a not in index or b not in index:
            raise ValueError(f"adjacency edge ({a}, {b}) references an unknown region")
        i, j = index[a], index[b]
        if i == j:
            continue
        adj[i, j] = adj[j, i] = 1.0
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp > 1:
        warnings.warn(
            f"spatial adjacency graph has {n_comp} connected components; penalty rank deficiency grows",
            stacklevel=3,
        )
    return np.diag(adj.sum(axis=1)) - adj


def _orthonormal_complement_of_ones(d: int) -> np.ndarray:
    """Orthonormal (d, d-1) basis of the subspace orthogonal to the ones
    vector (deterministic Helmert construction)."""
    W = np.zeros((d, d - 1))
    for k in range(1, d):
        W[:k, k - 1] = 1.0
        W[k, k - 1] = -float(k)
        W[:, k - 1] /= np.sqrt(k * (k + 1.0))
    return W


def _term_embedding(spec: TermSpec, d1: int, d2: int, K2: np.ndarray, centered: bool):
    """(kept_raw indices, rotation matrix) describing how sampled
    coefficients map into the raw tensor layout; (None, None) is identity.

    Monotone terms keep coordinate meaning (the exponentiation is entrywise),
    so they only drop the response-constant coefficient that duplicates the
    global intercept or, for a centered partition-of-unity block, spans a
    pure constant shift. Non-monotone penalized covariate bases are instead
    rotated into the penalty eigenbasis (constant directions removed), which
    makes the smoothing prior exactly diagonal so that a diagonal mass matrix
    can resolve strongly shrunk directions.
    """
    covariate_has_const = spec.covariate_kind == "none" or (
        spec.covariate_kind == "linear" and spec.covariate_intercept
    )
    if spec.monotone or spec.covariate_kind in ("none", "linear"):
        if covariate_has_const:
            drop = 0
        elif spec.monotone and spec.covariate_kind == "spline" and centered:
            drop = d2 // 2
        else:
            return None, None
        return np.array([k for k in range(d1 * d2) if k != drop], dtype=int), None

    if spec.covariate_kind == "spline" and centered:
        # spectral coordinates orthogonal to the constant function
        W = _orthonormal_complement_of_ones(d2)
        _, Q = np.linalg.eigh(W.T @ K2 @ W)
        block = W @ Q
        if spec.response == "linear":
            # the y-on-constant direction stays (identified by the data)
            full = np.column_stack([np.full(d2, 1.0 / np.sqrt(d2)), block])
            rot = np.zeros((2 * d2, d2 - 1 + d2))
            rot[:d2, : d2 - 1] = block
            rot[d2:, d2 - 1:] = full
            return None, rot
        return None, block

    if spec.covariate_kind == "spatial":
        # positive-eigenvalue subspace: the standard sum-to-zero constraint
        # per connected component, in spectral coordinates
        lam, V = np.linalg.eigh(K2)
        keep = lam > 1e-8 * max(lam.max(), 1.0)
        block = V[:, keep]
        if d1 == 1:
            return None, block
        rot = np.zeros((d1 * d2, d1 * int(keep.sum())))
        for r in range(d1):
            rot[r * d2:(r + 1) * d2, r * int(keep.sum()):(r + 1) * int(keep.sum())] = block
        return None, rot

    return None, None


_OMEGA_GRID = np.round(np.arange(1, 20) * 0.05, 2)


def build_term(spec: TermSpec, data: DataSet, response_domain: tuple[float, float]) -> TermDesign:
    """Realize one term on the training rows of `data`."""
    for name in spec.covariates:
        if name not in data.covariates:
            raise KeyError(f"unknown covariate {name!r}")

    # response side
    response_kv = None
    if spec.response == "spline":
        response_kv = make_knots(response_domain[0], response_domain[1], spec.response_dim, spec.degree)
        d1 = spec.response_dim
        K1 = _difference_penalty_response(d1)
    elif spec.response == "linear":
        d1 = 2
        K1 = np.zeros((2, 2))
    else:
        d1 = 1
        K1 = np.zeros((1, 1))

    # covariate side transforms
    covariate_stats: dict[str, tuple[float, float]] = {}
    covariate_kv = None
    levels = None
    if spec.covariate_kind == "linear":
        for name in spec.covariates:
            x = np.asarray(data.covariates[name], dtype=float)
            if spec.monotone:
                # monotone tensor terms need nonnegative covariate entries
                lo, hi = float(x.min()), float(x.max())
                covariate_stats[name] = (lo, hi - lo if hi > lo else 1.0)
            else:
                sd = float(x.std())
                covariate_stats[name] = (float(x.mean()), sd if sd > 0 else 1.0)
        d2 = len(spec.covariates) + int(spec.covariate_intercept)
        K2 = np.zeros((d2, d2))
    elif spec.covariate_kind == "spline":
        x = np.asarray(data.covariates[spec.covariates[0]], dtype=float)
        pad = 0.01 * (x.max() - x.min()) or 0.01
        covariate_kv = make_knots(x.min() - pad, x.max() + pad, spec.covariate_dim, spec.degree)
        d2 = spec.covariate_dim
        K2 = _difference_penalty_covariate(d2)
    elif spec.covariate_kind == "random_effect":
        levels = np.unique(np.asarray(data.covariates[spec.covariates[0]]).astype(str))
        d2 = len(levels)
        K2 = np.eye(d2)
    elif spec.covariate_kind == "spatial":
        seen = set(np.asarray(data.covariates[spec.covariates[0]]).astype(str))
        in_graph = {str(v) for e in spec.adjacency for v in e}
        levels = np.array(sorted(seen | in_graph))
        d2 = len(levels)
        K2 = _graph_laplacian(levels, spec.adjacency)
    else:
        d2 = 1
        K2 = np.zeros((1, 1))

    D_raw = d1 * d2
    center = spec.center
    if center is None:
        center = spec.response == "spline" or spec.covariate_kind == "spline"

    kept_raw, rotation = _term_embedding(spec, d1, d2, K2, center)
    if rotation is not None:
        D = rotation.shape[1]
    elif kept_raw is not None:
        D = len(kept_raw)
    else:
        D = D_raw

    monotone = spec.monotone
    exp_mask_raw = np.zeros(D_raw, dtype=bool)
    if monotone:
        exp_mask_raw[d2:] = True
    if kept_raw is not None:
        exp_mask = exp_mask_raw[kept_raw]
    else:
        exp_mask = np.zeros(D, dtype=bool)  # rotations only occur unexponentiated

    kron1 = np.kron(K1, np.eye(d2))
    kron2 = np.kron(np.eye(d1), K2)
    if rotation is not None:
        pen_response = rotation.T @ kron1 @ rotation
        pen_covariate = rotation.T @ kron2 @ rotation
    elif kept_raw is not None:
        pen_response = kron1[np.ix_(kept_raw, kept_raw)]
        pen_covariate = kron2[np.ix_(kept_raw, kept_raw)]
    else:
        pen_response = kron1
        pen_covariate = kron2

    # anisotropy weight: sampled only when both directions carry a penalty
    pen1 = pen_response.any()
    pen2 = pen_covariate.any()
    if pen1 and pen2:
        omega_grid = _OMEGA_GRID.copy()
    elif pen1:
        omega_grid = np.array([1.0])
    else:
        omega_grid = np.array([0.0])

    omega_mid = float(np.median(omega_grid))
    U_mid = omega_mid * pen_response + (1.0 - omega_mid) * pen_covariate
    eigvals = np.linalg.eigvalsh(U_mid) if U_mid.any() else np.zeros(D)
    rank_K = int(np.count_nonzero(eigvals > 1e-8))

    logdet_table = np.empty(len(omega_grid))
    for i, w in enumerate(omega_grid):
        U = w * pen_response + (1.0 - w) * pen_covariate + PRECISION_RIDGE * np.eye(D)
        _, logdet = np.linalg.slogdet(U)
        logdet_table[i] = logdet

    label = spec.name or _default_label(spec)
    td = TermDesign(
        spec=spec, label=label, D1=d1, D2=d2, D=D, monotone=monotone,
        kept_raw=kept_raw, rotation=rotation,
        exp_mask_raw=exp_mask_raw, exp_mask=exp_mask,
        C=np.empty((0, D_raw)), Cp=np.empty((0, D_raw)), col_means=None,
        K1=K1, K2=K2, pen_response=pen_response, pen_covariate=pen_covariate,
        rank_K=rank_K, omega_grid=omega_grid, logdet_table=logdet_table,
        hyperprior=copy.copy(spec.hyperprior), response_kv=response_kv,
        covariate_kv=covariate_kv, covariate_stats=covariate_stats, levels=levels,
    )

    # training blocks through the same evaluation path used at prediction
    y_train = np.where(np.isfinite(data.y), data.y, 0.5 * (response_domain[0] + response_domain[1]))
    C_raw, Cp = td.design_at(y_train, data.covariates)
    if center:
        centered, means = center_columns(BasisMatrix(C_raw))
        td.C = centered.values
        td.col_means = means
    else:
        td.C = C_raw
    td.Cp = Cp
    return td


def _default_label(spec: TermSpec) -> str:
    resp = {"intercept": "1", "linear": "lin(y)", "spline": "s(y)"}[spec.response]
    if spec.covariate_kind == "none":
        cov = ""
    elif spec.covariate_kind == "linear":
        cov = "+".join(spec.covariates)
        if spec.covariate_intercept:
            cov = "1+" + cov
    elif spec.covariate_kind == "spline":
        cov = f"s({spec.covariates[0]})"
    elif spec.covariate_kind == "random_effect":
        cov = f"re({spec.covariates[0]})"
    else:
        cov = f"mrf({spec.covariates[0]})"
    return f"{resp}*{cov}" if cov else resp


# --------------------------------------------------------------------------- #
# per-term operations


def build_precision(td: TermDesign, tau2: float, omega: float) -> np.ndarray:
    """Augmented prior precision (1/tau2)[w K1xI + (1-w) IxK2] + ridge, in the
    term's sampled coefficient space."""
    if tau2 <= 0:
        raise ValueError("tau2 must be positive")
    U = omega * td.pen_response + (1.0 - omega) * td.pen_covariate
    return U / tau2 + PRECISION_RIDGE * np.eye(td.D)


def reparameterize(beta_raw: np.ndarray, td: TermDesign) -> tuple[np.ndarray, np.ndarray]:
    """Map raw-layout unconstrained coefficients to basis coefficients gamma.

    Masked entries are exponentiated (clipped at BETA_CLIP first) and all
    entries are cumulatively summed along the response index, which makes the
    increments of gamma along that index strictly positive. Non-monotone
    terms pass through unchanged. Returns (gamma, jacobian diagonal), both in
    the raw layout.
    """
    beta_raw = np.asarray(beta_raw, dtype=float)
    if not td.monotone:
        return beta_raw.copy(), np.ones_like(beta_raw)
    expd = np.exp(np.minimum(beta_raw, BETA_CLIP))
    btilde = np.where(td.exp_mask_raw, expd, beta_raw)
    gamma = btilde.reshape(td.D1, td.D2).cumsum(axis=0).ravel()
    c_diag = np.where(td.exp_mask_raw, expd, 1.0)
    return gamma, c_diag


def _clip_count(beta_raw: np.ndarray, td: TermDesign) -> int:
    if not td.monotone:
        return 0
    return int(np.count_nonzero(np.asarray(beta_raw)[td.exp_mask_raw] > BETA_CLIP))


def elicit_sd_scale(
    c: float,
    alpha: float,
    td: TermDesign,
    n_sim: int = 20000,
    rng: np.random.Generator | None = None,
    tol: float = 0.005,
    max_steps: int = 60,
) -> float:
    """Bisection on log theta so that P(max |beta_d| <= c) = 1 - alpha.

    Monte Carlo criterion: tau2 ~ Weibull(1/2, theta), beta | tau2 Gaussian
    with covariance tau2 times the pseudo-inverse of the unscaled penalty at
    the term's central anisotropy weight; the max runs over the exponentiated
    positions of monotone terms (all penalized positions otherwise). Common
    random numbers keep the criterion monotone in theta so the bisection is
    deterministic.
    """
    if c <= 0 or not 0 < alpha < 1:
        raise ValueError("need c > 0 and 0 < alpha < 1")
    rng = rng or np.random.default_rng(0)
    w_mid = float(np.median(td.omega_grid))
    U = w_mid * td.pen_response + (1.0 - w_mid) * td.pen_covariate
    if not U.any():
        raise ValueError("scale elicitation needs a penalized term")
    lam, V = np.linalg.eigh(U)
    kept = lam > 1e-8 * lam.max()
    lam, V = lam[kept], V[:, kept]
    target_cols = td.exp_mask if td.monotone else np.ones(td.D, dtype=bool)

    Z = rng.standard_normal((n_sim, int(kept.sum())))
    W = rng.weibull(0.5, n_sim)
    unit = (V / np.sqrt(lam)) @ Z.T          # beta at tau2 = 1
    m = np.abs(unit[target_cols, :]).max(axis=0)
    ok = (m > 0) & (W > 0)
    if not np.isfinite(c):
        warnings.warn("criterion bound is infinite; returning the upper bisection bound")
        return float(np.exp(40.0))
    # criterion holds iff theta <= c^2 / (W * m^2)
    thresholds = c**2 / (W[ok] * m[ok] ** 2)

    def prob(log_theta):
        return float(np.mean(np.exp(log_theta) <= thresholds))

    lo, hi = -40.0, 40.0
    if prob(lo) < 1 - alpha:
        warnings.warn("criterion unattainable even at the smallest scale; returning lower bound")
        return float(np.exp(lo))
    if prob(hi) > 1 - alpha:
        warnings.warn("criterion satisfied even at the largest scale; returning upper bound")
        return float(np.exp(hi))
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        p = prob(mid)
        if abs(p - (1 - alpha)) <= tol:
            return float(np.exp(mid))
        if p > 1 - alpha:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"scale elicitation did not converge in {max_steps} bisection steps")


# --------------------------------------------------------------------------- #
# whole-model design


@dataclass
class RowBlocks:
    """Stacked raw-layout design matrices of one dataset's rows, split by
    likelihood role: exact rows carry (C, Cp) at the observed value,
    probability-mass rows carry designs at their finite interval endpoints."""

    n: int
    exact_idx: np.ndarray
    prob_idx: np.ndarray
    C_exact: np.ndarray
    Cp_exact: np.ndarray
    has_low: np.ndarray
    has_high: np.ndarray
    C_low: np.ndarray
    C_high: np.ndarray


@dataclass
class ModelDesign:
    """All terms realized against one dataset, plus stacked likelihood blocks."""

    spec: ModelSpec
    data: DataSet
    reference: object
    terms: list[TermDesign]
    offsets: np.ndarray          # coefficient-space term starts
    raw_offsets: np.ndarray      # raw-layout term starts
    P: int                       # total sampled coefficients (intercept excluded)
    P_raw: int                   # total raw-layout width
    response_domain: tuple[float, float]
    blocks: RowBlocks | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_beta(self) -> int:
        """Length of the full unconstrained vector (intercept included)."""
        return self.P + int(self.spec.intercept)

    def term_slice(self, j: int) -> slice:
        start = int(self.offsets[j])
        return slice(start, start + self.terms[j].D)

    def raw_slice(self, j: int) -> slice:
        start = int(self.raw_offsets[j])
        return slice(start, start + self.terms[j].D_raw)

    def split(self, beta: np.ndarray) -> tuple[float, np.ndarray]:
        if self.spec.intercept:
            return float(beta[0]), beta[1:]
        return 0.0, beta

    def _maps(self):
        """Cached global index maps for the coefficient <-> raw layouts:
        one scatter for all selection/identity terms plus a list of rotated
        blocks."""
        maps = self._cache.get("maps")
        if maps is None:
            raw_idx, coef_idx, rotated = [], [], []
            for j, td in enumerate(self.terms):
                sl, rsl = self.term_slice(j), self.raw_slice(j)
                if td.rotation is not None:
                    rotated.append((sl, rsl, td.rotation))
                else:
                    local = td.kept_raw if td.kept_raw is not None else np.arange(td.D_raw)
                    raw_idx.append(local + rsl.start)
                    coef_idx.append(np.arange(sl.start, sl.stop))
            raw_idx = np.concatenate(raw_idx).astype(int) if raw_idx else np.empty(0, int)
            coef_idx = np.concatenate(coef_idx).astype(int) if coef_idx else np.empty(0, int)
            exp_raw = np.concatenate([td.exp_mask_raw for td in self.terms]) \
                if self.terms else np.empty(0, bool)
            mono = [
                (self.raw_slice(j), td.D1, td.D2)
                for j, td in enumerate(self.terms) if td.monotone
            ]
            maps = (raw_idx, coef_idx, rotated, exp_raw, mono)
            self._cache["maps"] = maps
        return maps

    def gamma(self, beta: np.ndarray) -> tuple[float, np.ndarray, np.ndarray, int]:
        """(beta0, raw-layout gamma, raw-layout jacobian diagonal, clip count)."""
        beta0, rest = self.split(np.asarray(beta, dtype=float))
        raw_idx, coef_idx, rotated, exp_raw, mono = self._maps()
        raw = np.zeros(self.P_raw)
        raw[raw_idx] = rest[coef_idx]
        for sl, rsl, rot in rotated:
            raw[rsl] = rot @ rest[sl]
        if not mono:
            return beta0, raw, np.ones(self.P_raw), 0
        clips = int(np.count_nonzero(raw[exp_raw] > BETA_CLIP))
        expd = np.exp(np.minimum(raw, BETA_CLIP))
        gamma = np.where(exp_raw, expd, raw)
        c_diag = np.where(exp_raw, expd, 1.0)
        for rsl, d1, d2 in mono:
            gamma[rsl] = gamma[rsl].reshape(d1, d2).cumsum(axis=0).ravel()
        return beta0, gamma, c_diag, clips

    def gamma_grad_to_beta(self, gamma_grad: np.ndarray, c_diag: np.ndarray, g0: float) -> np.ndarray:
        """Chain rule from a raw-layout gradient in gamma to the sampled
        coefficient vector: embed-transpose of (c_diag * Sigma' g)."""
        raw_idx, coef_idx, rotated, _, mono = self._maps()
        for rsl, d1, d2 in mono:
            block = gamma_grad[rsl].reshape(d1, d2)
            gamma_grad[rsl] = block[::-1].cumsum(axis=0)[::-1].ravel()
        gamma_grad = c_diag * gamma_grad
        g = np.empty(self.P)
        g[coef_idx] = gamma_grad[raw_idx]
        for sl, rsl, rot in rotated:
            g[sl] = rot.T @ gamma_grad[rsl]
        if self.spec.intercept:
            return np.concatenate([[g0], g])
        return g

    def design_rows(self, y, covariates) -> tuple[np.ndarray, np.ndarray]:
        """Stacked raw-layout (C, Cp) across terms for arbitrary (y, x) rows."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        C = np.empty((len(y), self.P_raw))
        Cp = np.empty((len(y), self.P_raw))
        for j, td in enumerate(self.terms):
            rsl = self.raw_slice(j)
            C[:, rsl], Cp[:, rsl] = td.design_at(y, covariates)
        return C, Cp

    def coefficient_labels(self) -> list[str]:
        labels = ["beta0"] if self.spec.intercept else []
        for td in self.terms:
            labels.extend(f"b[{td.label}][{k}]" for k in range(td.D))
        return labels

    def precision_blocks(self, tau2: np.ndarray, omega: np.ndarray) -> list[np.ndarray]:
        return [build_precision(td, tau2[j], omega[j]) for j, td in enumerate(self.terms)]

    def fisher_gram(self) -> np.ndarray:
        """Per-coefficient squared column norms of the reparameterization-
        transformed training design (unit Jacobian reference point): a cheap
        curvature proxy that, added to the prior precision diagonal, yields a
        sampler metric tracking the smoothing-variance scales."""
        gram = self._cache.get("fisher_gram")
        if gram is None:
            b = self.blocks
            stack = np.vstack([b.C_exact, b.C_low, b.C_high])
            CS = stack.copy()
            for j, td in enumerate(self.terms):
                if td.monotone:
                    rsl = self.raw_slice(j)
                    blockc = CS[:, rsl].reshape(-1, td.D1, td.D2)
                    CS[:, rsl] = np.flip(np.cumsum(np.flip(blockc, 1), 1), 1).reshape(
                        CS.shape[0], td.D_raw)
            gram = np.empty(self.P)
            for j, td in enumerate(self.terms):
                sl, rsl = self.term_slice(j), self.raw_slice(j)
                if td.rotation is not None:
                    gram[sl] = ((CS[:, rsl] @ td.rotation) ** 2).sum(axis=0)
                elif td.kept_raw is not None:
                    gram[sl] = (CS[:, rsl][:, td.kept_raw] ** 2).sum(axis=0)
                else:
                    gram[sl] = (CS[:, rsl] ** 2).sum(axis=0)
            self._cache["fisher_gram"] = gram
        return gram

    def assemble_precision(self, tau2: np.ndarray, omega: np.ndarray) -> np.ndarray:
        """Block-diagonal (P, P) prior precision of the sampled coefficients."""
        K = np.zeros((self.P, self.P))
        for j, td in enumerate(self.terms):
            sl = self.term_slice(j)
            K[sl, sl] = build_precision(td, tau2[j], omega[j])
        return K

    def prior_quad_and_grad(self, beta, K_full: np.ndarray):
        """(beta' K beta, gradient wrt the full vector) for assembled K."""
        beta0, rest = self.split(np.asarray(beta, dtype=float))
        Kb = K_full @ rest
        quad = float(rest @ Kb)
        if self.spec.intercept:
            return quad, np.concatenate([[0.0], Kb])
        return quad, Kb


def make_row_blocks(md: ModelDesign, data: DataSet) -> RowBlocks:
    """Stacked likelihood matrices of `data`'s rows under a built design
    (training transforms reapplied), usable for held-out evaluation."""
    exact_mask, low, high = data.bounds()
    exact_idx = np.flatnonzero(exact_mask)
    prob_idx = np.flatnonzero(~exact_mask)
    P = md.P_raw
    cov = data.covariates
    blocks = RowBlocks(
        n=data.n, exact_idx=exact_idx, prob_idx=prob_idx,
        C_exact=np.empty((0, P)), Cp_exact=np.empty((0, P)),
        has_low=np.empty(0, bool), has_high=np.empty(0, bool),
        C_low=np.empty((0, P)), C_high=np.empty((0, P)),
    )
    if len(exact_idx):
        sub = {k: v[exact_idx] for k, v in cov.items()}
        blocks.C_exact, blocks.Cp_exact = md.design_rows(data.y[exact_idx], sub)
    if len(prob_idx):
        sub = {k: v[prob_idx] for k, v in cov.items()}
        lo_b = low[prob_idx]
        hi_b = high[prob_idx]
        blocks.has_low = np.isfinite(lo_b)
        blocks.has_high = np.isfinite(hi_b)
        mid = 0.5 * (md.response_domain[0] + md.response_domain[1])
        C_low, _ = md.design_rows(np.where(blocks.has_low, lo_b, mid), sub)
        C_high, _ = md.design_rows(np.where(blocks.has_high, hi_b, mid), sub)
        C_low[~blocks.has_low] = 0.0
        C_high[~blocks.has_high] = 0.0
        blocks.C_low, blocks.C_high = C_low, C_high
    return blocks


def build_design(model: ModelSpec, data: DataSet, elicit_rng: np.random.Generator | None = None) -> ModelDesign:
    """Realize a full model: term designs plus stacked likelihood matrices."""
    lo, hi = data.response_span()
    pad = 0.01 * (hi - lo) or 0.01
    domain = (lo - pad, hi + pad)

    terms = [build_term(t, data, domain) for t in model.terms]
    seen = {}
    for td in terms:
        if td.label in seen:
            seen[td.label] += 1
            td.label = f"{td.label}#{seen[td.label]}"
        else:
            seen[td.label] = 1

    offsets = np.cumsum([0] + [td.D for td in terms[:-1]])
    raw_offsets = np.cumsum([0] + [td.D_raw for td in terms[:-1]])
    P = int(sum(td.D for td in terms))
    P_raw = int(sum(td.D_raw for td in terms))

    elicit_rng = elicit_rng or np.random.default_rng(
        model.seed if model.seed is not None else 0
    )
    for td in terms:
        hp = td.hyperprior
        if isinstance(hp, ScaleDependent) and hp.theta is None:
            if td.penalized:
                theta = elicit_sd_scale(hp.c, hp.alpha, td, rng=elicit_rng)
                td.hyperprior = ScaleDependent(c=hp.c, alpha=hp.alpha, theta=theta)
            else:
                td.hyperprior = InverseGamma()

    md = ModelDesign(
        spec=model, data=data, reference=get_reference(model.reference), terms=terms,
        offsets=offsets, raw_offsets=raw_offsets, P=P, P_raw=P_raw,
        response_domain=domain,
    )
    md.blocks = make_row_blocks(md, data)
    return md

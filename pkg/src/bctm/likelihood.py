"""Transformation evaluation, likelihoods, log posterior, and its gradient.

Exactly observed rows contribute log f_Z(h(y|x)) + log h'(y|x); every other
row (censored or discrete) is a probability mass F_Z(h(upper)) -
F_Z(h(lower)) with an infinite endpoint where a side is unbounded, evaluated
through one stable log-diff-exp path. The gradient in the unconstrained
coefficients is analytic throughout: d h / d beta = (Sigma C)^T c where C is
the diagonal Jacobian of the monotonicity reparameterization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelDesign

__all__ = [
    "ParameterState",
    "DiagCounters",
    "transform",
    "loglik_exact",
    "loglik_censored",
    "loglik_discrete",
    "pointwise_loglik",
    "log_posterior",
    "grad_beta",
    "loglik_and_grad_beta",
    "HPRIME_FLOOR",
    "LOGP_FLOOR",
]

HPRIME_FLOOR = 1e-300
LOGP_FLOOR = np.log(1e-300)


@dataclass
class ParameterState:
    """(beta, tau2, omega); the intercept beta0 leads the beta vector."""

    beta: np.ndarray
    tau2: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.tau2 = np.atleast_1d(np.asarray(self.tau2, dtype=float))
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if np.any(self.tau2 <= 0):
            raise ValueError("tau2 must be strictly positive")


@dataclass
class DiagCounters:
    """Counts of numerical guards that fired during evaluation."""

    hprime_floored: int = 0
    interval_floored: int = 0
    beta_clipped: int = 0

    def as_dict(self) -> dict:
        return {
            "hprime_floored": self.hprime_floored,
            "interval_floored": self.interval_floored,
            "beta_clipped": self.beta_clipped,
        }


# --------------------------------------------------------------------------- #
# transformation values


def transform(state: ParameterState, md: ModelDesign, y=None, covariates=None):
    """(h, h') on arbitrary rows; defaults to the training rows of the design.

    h' is identically zero for shift-only models and nonnegative whenever
    every response-dependent term is monotone.
    """
    if y is None:
        y = md.data.y
        covariates = md.data.covariates
    beta0, gamma, _, _ = md.gamma(state.beta)
    C, Cp = md.design_rows(y, covariates)
    return beta0 + C @ gamma, Cp @ gamma


# --------------------------------------------------------------------------- #
# per-family likelihood pieces


def loglik_exact(h, h_prime, dist, diag: DiagCounters | None = None):
    """Per-row log f_Z(h) + log h' with the derivative floored at 1e-300."""
    h_prime = np.asarray(h_prime, dtype=float)
    floored = h_prime < HPRIME_FLOOR
    if diag is not None:
        diag.hprime_floored += int(np.count_nonzero(floored))
    return dist.log_pdf(h) + np.log(np.maximum(h_prime, HPRIME_FLOOR))


def _log_interval_mass(dist, h_low, h_high, has_low, has_high, diag=None):
    """log( F_Z(h_high) - F_Z(h_low) ) with infinite endpoints where a side
    is unbounded; switches between cdf and survivor differences so the result
    stays accurate in either tail."""
    n = len(h_low)
    out = np.empty(n)

    only_high = has_high & ~has_low
    only_low = has_low & ~has_high
    both = has_low & has_high
    if np.any(only_high):
        out[only_high] = dist.log_cdf(h_high[only_high])
    if np.any(only_low):
        out[only_low] = dist.log_sf(h_low[only_low])
    if np.any(both):
        hl = h_low[both]
        hh = h_high[both]
        la, lb = dist.log_cdf(hh), dist.log_cdf(hl)
        sa, sb = dist.log_sf(hl), dist.log_sf(hh)
        with np.errstate(invalid="ignore", divide="ignore"):
            diff_cdf = la + np.log1p(-np.exp(np.minimum(lb - la, 0.0)))
            diff_sf = sa + np.log1p(-np.exp(np.minimum(sb - sa, 0.0)))
        val = np.where(la < np.log(0.5), diff_cdf, diff_sf)
        bad = ~np.isfinite(val) | (hh < hl)
        if diag is not None:
            diag.interval_floored += int(np.count_nonzero(bad))
        out[both] = np.where(bad, LOGP_FLOOR, val)
    return out


def loglik_censored(state: ParameterState, md: ModelDesign, dist=None, diag=None, blocks=None):
    """Log-likelihood of all probability-mass rows (censored and discrete),
    in the order of blocks.prob_idx."""
    dist = dist or md.reference
    blocks = blocks or md.blocks
    beta0, gamma, _, _ = md.gamma(state.beta)
    h_low = beta0 + blocks.C_low @ gamma
    h_high = beta0 + blocks.C_high @ gamma
    return _log_interval_mass(dist, h_low, h_high, blocks.has_low, blocks.has_high, diag)


def loglik_discrete(state: ParameterState, md: ModelDesign, dist=None, diag=None, blocks=None):
    """Alias for the mass path: discrete levels reduce to cut-point bounds."""
    return loglik_censored(state, md, dist, diag, blocks)


def _mass_parts(beta, md, diag=None, blocks=None):
    """Shared intermediates for value and gradient."""
    dist = md.reference
    blocks = blocks or md.blocks
    beta0, gamma, c_diag, clips = md.gamma(beta)
    if diag is not None:
        diag.beta_clipped += clips
    out = {"blocks": blocks}
    out["beta0"], out["gamma"], out["c_diag"] = beta0, gamma, c_diag

    if len(blocks.exact_idx):
        h = beta0 + blocks.C_exact @ gamma
        hp = blocks.Cp_exact @ gamma
        out["h"], out["hp"] = h, hp
        out["ll_exact"] = loglik_exact(h, hp, dist, diag)
    else:
        out["ll_exact"] = np.empty(0)

    if len(blocks.prob_idx):
        h_low = beta0 + blocks.C_low @ gamma
        h_high = beta0 + blocks.C_high @ gamma
        out["h_low"], out["h_high"] = h_low, h_high
        out["ll_mass"] = _log_interval_mass(dist, h_low, h_high, blocks.has_low, blocks.has_high, diag)
    else:
        out["ll_mass"] = np.empty(0)
    return out


def pointwise_loglik(beta, md: ModelDesign, diag: DiagCounters | None = None, blocks=None) -> np.ndarray:
    """Per-row log-likelihood in original row order (WAIC feed).

    `blocks` defaults to the training rows; pass make_row_blocks(md, new_data)
    to score held-out rows under the trained design.
    """
    blocks = blocks or md.blocks
    parts = _mass_parts(np.asarray(beta, dtype=float), md, diag, blocks)
    out = np.empty(blocks.n)
    out[blocks.exact_idx] = parts["ll_exact"]
    out[blocks.prob_idx] = parts["ll_mass"]
    return out


# --------------------------------------------------------------------------- #
# posterior and gradient


def _log_tau2_prior(md: ModelDesign, tau2: np.ndarray) -> float:
    total = 0.0
    for j, td in enumerate(md.terms):
        if td.penalized:
            total += float(td.hyperprior.log_density(tau2[j]))
    return total


def _log_omega_prior(md: ModelDesign) -> float:
    return -float(sum(np.log(len(td.omega_grid)) for td in md.terms))


def log_posterior(state: ParameterState, md: ModelDesign, diag: DiagCounters | None = None) -> float:
    """Sum of row log-likelihoods, the Gaussian prior quadratic form, and the
    hyperprior densities; the intercept has a flat prior. Additive constants
    (including the Gaussian prior normalization) are dropped."""
    ll = float(pointwise_loglik(state.beta, md, diag).sum())
    K_full = md.assemble_precision(state.tau2, state.omega)
    quad, _ = md.prior_quad_and_grad(state.beta, K_full)
    return ll - 0.5 * quad + _log_tau2_prior(md, state.tau2) + _log_omega_prior(md)


def _data_grad(parts, md: ModelDesign, diag=None) -> np.ndarray:
    dist = md.reference
    blocks = parts["blocks"]
    gamma_grad = np.zeros(md.P_raw)
    g0 = 0.0

    if len(blocks.exact_idx):
        h, hp = parts["h"], parts["hp"]
        w1 = dist.dlog_pdf(h)
        # rows with a vanishing derivative drop out of the h' gradient term
        ok = hp >= HPRIME_FLOOR
        w2 = np.where(ok, 1.0 / np.maximum(hp, HPRIME_FLOOR), 0.0)
        gamma_grad += blocks.C_exact.T @ w1 + blocks.Cp_exact.T @ w2
        g0 += float(w1.sum())

    if len(blocks.prob_idx):
        ll = parts["ll_mass"]
        h_low, h_high = parts["h_low"], parts["h_high"]
        with np.errstate(over="ignore"):
            r_high = np.where(blocks.has_high, np.exp(dist.log_pdf(h_high) - ll), 0.0)
            r_low = np.where(blocks.has_low, -np.exp(dist.log_pdf(h_low) - ll), 0.0)
        gamma_grad += blocks.C_high.T @ r_high + blocks.C_low.T @ r_low
        g0 += float(r_high.sum() + r_low.sum())

    return md.gamma_grad_to_beta(gamma_grad, parts["c_diag"], g0)


def grad_beta(state: ParameterState, md: ModelDesign, diag: DiagCounters | None = None) -> np.ndarray:
    """Analytic gradient of the log posterior in the unconstrained vector."""
    beta = np.asarray(state.beta, dtype=float)
    parts = _mass_parts(beta, md, diag)
    grad = _data_grad(parts, md, diag)
    K_full = md.assemble_precision(state.tau2, state.omega)
    _, prior_grad = md.prior_quad_and_grad(beta, K_full)
    return grad - prior_grad


def loglik_and_grad_beta(beta, md: ModelDesign, K_full, diag: DiagCounters | None = None):
    """(conditional log posterior of beta, gradient) for the sampler.

    The value drops every term constant in beta; K_full is the current
    assembled augmented precision matrix.
    """
    beta = np.asarray(beta, dtype=float)
    parts = _mass_parts(beta, md, diag)
    ll = float(parts["ll_exact"].sum() + parts["ll_mass"].sum())
    quad, prior_grad = md.prior_quad_and_grad(beta, K_full)
    grad = _data_grad(parts, md, diag) - prior_grad
    return ll - 0.5 * quad, grad

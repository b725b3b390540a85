"""Bayesian conditional transformation models.

Direct estimation of conditional distribution functions F(y|x) =
F_Z(h(y|x)) through monotone tensor-product spline transformations, fitted
with a NUTS-within-Gibbs sampler, with censored and discrete-response
support, WAIC/DIC model selection, proper scoring rules, and a synthetic
simulation harness.
"""

from .basis import KnotVector, BasisMatrix, make_knots, eval_basis, row_kronecker, center_columns
from .data import DataSet
from .reference import StandardNormal, StandardLogistic, MinimumExtremeValue, get_reference
from .model import (
    InverseGamma,
    ScaleDependent,
    TermSpec,
    ModelSpec,
    TermDesign,
    ModelDesign,
    build_term,
    build_design,
    build_precision,
    reparameterize,
    elicit_sd_scale,
)
from .likelihood import (
    ParameterState,
    transform,
    loglik_exact,
    loglik_censored,
    loglik_discrete,
    pointwise_loglik,
    log_posterior,
    grad_beta,
)
from .sampler import SamplerConfig, PosteriorDraws, run_mcmc, run_chains
from .inference import (
    ConditionalDistributionEstimate,
    ModelScore,
    posterior_cdf,
    posterior_quantile,
    waic,
)
from .scoring import mad, quantile_score, crps, coverage
from . import simharness

__all__ = [
    "KnotVector", "BasisMatrix", "make_knots", "eval_basis", "row_kronecker", "center_columns",
    "DataSet",
    "StandardNormal", "StandardLogistic", "MinimumExtremeValue", "get_reference",
    "InverseGamma", "ScaleDependent", "TermSpec", "ModelSpec", "TermDesign", "ModelDesign",
    "build_term", "build_design", "build_precision", "reparameterize", "elicit_sd_scale",
    "ParameterState", "transform", "loglik_exact", "loglik_censored", "loglik_discrete",
    "pointwise_loglik", "log_posterior", "grad_beta",
    "SamplerConfig", "PosteriorDraws", "run_mcmc", "run_chains",
    "ConditionalDistributionEstimate", "ModelScore", "posterior_cdf", "posterior_quantile", "waic",
    "mad", "quantile_score", "crps", "coverage",
    "simharness",
]

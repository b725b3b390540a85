"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from bctm import DataSet, ModelSpec, ParameterState, TermSpec, build_design, log_posterior


def make_gaussian_data(n=60, seed=0, n_cov=1):
    rng = np.random.default_rng(seed)
    cov = {f"x{k + 1}": rng.uniform(-1.0, 2.0, n) for k in range(n_cov)}
    y = rng.normal(0.0, 1.5, n) + sum(cov.values()) * 0.3
    return DataSet.from_exact(y, cov)


def random_state(md, rng, scale=0.7):
    tau2 = np.exp(rng.normal(0.0, 0.3, len(md.terms)))
    omega = np.array([float(rng.choice(td.omega_grid)) for td in md.terms])
    return ParameterState(rng.normal(0.0, scale, md.n_beta), tau2, omega)


def fd_safe_state(md, rng, scale=0.7, min_slope=1e-3, tries=100):
    """Random state kept away from the floor kinks, where the central
    finite-difference oracle itself is invalid (the analytic gradient treats
    floored rows as locally constant, matching the eps -> 0 limit)."""
    from bctm.likelihood import DiagCounters, pointwise_loglik

    for _ in range(tries):
        state = random_state(md, rng, scale)
        _, gamma, _, _ = md.gamma(state.beta)
        blocks = md.blocks
        if len(blocks.exact_idx):
            hp = blocks.Cp_exact @ gamma
            if np.abs(hp).min() < min_slope:
                continue
        diag = DiagCounters()
        pointwise_loglik(state.beta, md, diag=diag)
        if diag.interval_floored:
            continue
        return state
    raise RuntimeError("no finite-difference-safe state found")


def fd_gradient(state, md, eps=1e-5):
    """Central finite differences of the log posterior in beta."""
    base = state.beta
    out = np.empty(md.n_beta)
    for k in range(md.n_beta):
        bp = base.copy()
        bm = base.copy()
        bp[k] += eps
        bm[k] -= eps
        fp = log_posterior(ParameterState(bp, state.tau2, state.omega), md)
        fm = log_posterior(ParameterState(bm, state.tau2, state.omega), md)
        out[k] = (fp - fm) / (2.0 * eps)
    return out


@pytest.fixture(scope="session")
def spline_design():
    """Monotone response spline plus a linear shift, built once."""
    data = make_gaussian_data(n=50, seed=3)
    model = ModelSpec(terms=[
        TermSpec(response="spline", response_dim=8),
        TermSpec(response="intercept", covariate_kind="linear", covariates=("x1",)),
    ])
    return build_design(model, data)

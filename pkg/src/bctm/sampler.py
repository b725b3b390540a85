"""Three-step MCMC: NUTS for the coefficients, Gibbs or Metropolis-Hastings
for the smoothing variances, and a discrete Gibbs step for the anisotropy
weights.

The NUTS kernel uses multinomial state selection inside doubling trees, a
generalized U-turn criterion on accumulated momentum, a diagonal metric
built from the current prior precision plus a design-curvature proxy (so it
tracks the smoothing-variance scales every iteration), and dual averaging of
the step size toward a target acceptance statistic. Monotonicity never enters the sampler:
it is carried entirely by the coefficient reparameterization, so the chain
lives in an unconstrained space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import DataSet
from .likelihood import DiagCounters, loglik_and_grad_beta
from .model import InverseGamma, ModelDesign, ScaleDependent, build_design

__all__ = [
    "SamplerConfig",
    "PosteriorDraws",
    "DivergenceAbort",
    "nuts_update",
    "gibbs_tau2_ig",
    "mh_tau2_sd",
    "gibbs_omega",
    "run_mcmc",
    "run_chains",
    "effective_sample_size",
]


class DivergenceAbort(RuntimeError):
    """More than half of the post-warmup transitions diverged."""


@dataclass
class SamplerConfig:
    iterations: int = 4000
    warmup: int = 2000
    burn_in: int = 2000
    target_accept: float = 0.90
    max_tree_depth: int = 10
    divergence_threshold: float = 1000.0
    seed: int | None = None
    chains: int = 1

    def __post_init__(self):
        if not (self.burn_in <= self.warmup <= self.iterations):
            raise ValueError("need burn_in <= warmup <= iterations")

    @classmethod
    def fast(cls, **kw) -> "SamplerConfig":
        """CI profile: 1000 iterations with 500 warmup/burn-in."""
        kw.setdefault("iterations", 1000)
        kw.setdefault("warmup", 500)
        kw.setdefault("burn_in", 500)
        return cls(**kw)


@dataclass
class PosteriorDraws:
    """Retained states plus adaptation diagnostics."""

    beta: np.ndarray          # (S, n_beta)
    tau2: np.ndarray          # (S, J)
    omega: np.ndarray         # (S, J)
    diagnostics: dict
    design: ModelDesign | None = None
    config: SamplerConfig | None = None
    _gamma_cache: tuple | None = field(default=None, repr=False)

    @property
    def S(self) -> int:
        return self.beta.shape[0]

    def gamma_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(beta0 draws, raw-layout gamma draws (S, P_raw)) per retained state."""
        if self._gamma_cache is None:
            md = self.design
            off = int(md.spec.intercept)
            beta0 = self.beta[:, 0] if off else np.zeros(self.S)
            rest = self.beta[:, off:]
            gamma = np.empty((self.S, md.P_raw))
            for j, td in enumerate(md.terms):
                block = rest[:, md.term_slice(j)]
                if td.rotation is not None:
                    raw = block @ td.rotation.T
                elif td.kept_raw is not None:
                    raw = np.zeros((self.S, td.D_raw))
                    raw[:, td.kept_raw] = block
                else:
                    raw = block
                if td.monotone:
                    bt = np.where(td.exp_mask_raw, np.exp(np.minimum(raw, 30.0)), raw)
                    raw = bt.reshape(-1, td.D1, td.D2).cumsum(axis=1).reshape(raw.shape)
                gamma[:, md.raw_slice(j)] = raw
            self._gamma_cache = (beta0, gamma)
        return self._gamma_cache


# --------------------------------------------------------------------------- #
# step-size and mass adaptation


class _DualAveraging:
    """Nesterov dual averaging of log step size (Hoffman-Gelman constants)."""

    def __init__(self, eps0: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps0)
        self.log_eps = math.log(eps0)
        self.log_eps_bar = math.log(eps0)
        self.h_bar = 0.0
        self.t = 0
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa

    def update(self, accept_stat: float) -> float:
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def _find_initial_step_size(q, lp, grad, inv_mass, logp_grad, rng) -> float:
    """Double/halve until the one-step acceptance crosses 1/2."""
    eps = 1.0
    mass = 1.0 / inv_mass
    p = rng.standard_normal(len(q)) * np.sqrt(mass)
    h0 = -lp + 0.5 * float(p * inv_mass @ p)

    def one_step(eps):
        p_half = p + 0.5 * eps * grad
        q1 = q + eps * inv_mass * p_half
        lp1, g1 = logp_grad(q1)
        if not np.isfinite(lp1):
            return -np.inf
        p1 = p_half + 0.5 * eps * g1
        return -(-lp1 + 0.5 * float(p1 * inv_mass @ p1)) + h0

    log_ratio = one_step(eps)
    direction = 1.0 if log_ratio > math.log(0.5) else -1.0
    for _ in range(60):
        eps *= 2.0 ** direction
        log_ratio = one_step(eps)
        if direction > 0 and log_ratio <= math.log(0.5):
            break
        if direction < 0 and log_ratio >= math.log(0.5):
            break
        if not 1e-7 < eps < 1e3:
            break
    return float(np.clip(eps, 1e-7, 1e3))


# --------------------------------------------------------------------------- #
# NUTS transition


@dataclass
class _Tree:
    q_minus: np.ndarray
    p_minus: np.ndarray
    g_minus: np.ndarray
    q_plus: np.ndarray
    p_plus: np.ndarray
    g_plus: np.ndarray
    q_prop: np.ndarray
    lp_prop: float
    g_prop: np.ndarray
    log_sum_w: float
    rho: np.ndarray
    valid: bool
    divergent: bool
    alpha_sum: float
    n_alpha: int
    n_leapfrog: int


def _leapfrog(q, p, grad, eps, inv_mass, logp_grad):
    p_half = p + 0.5 * eps * grad
    q1 = q + eps * inv_mass * p_half
    lp1, g1 = logp_grad(q1)
    p1 = p_half + 0.5 * eps * g1
    return q1, p1, lp1, g1


def _no_uturn(rho, p_minus, p_plus, inv_mass) -> bool:
    return (float(rho @ (inv_mass * p_minus)) > 0.0) and (float(rho @ (inv_mass * p_plus)) > 0.0)


def _build_tree(q, p, grad, direction, depth, eps, inv_mass, h0, threshold, logp_grad, rng) -> _Tree:
    if depth == 0:
        q1, p1, lp1, g1 = _leapfrog(q, p, grad, direction * eps, inv_mass, logp_grad)
        if np.all(np.isfinite(q1)) and np.isfinite(lp1) and np.all(np.isfinite(g1)):
            h1 = -lp1 + 0.5 * float(p1 * inv_mass @ p1)
        else:
            h1 = np.inf
        log_w = h0 - h1 if np.isfinite(h1) else -np.inf
        divergent = (not np.isfinite(h1)) or (h1 - h0 > threshold)
        alpha = math.exp(min(0.0, log_w)) if np.isfinite(log_w) else 0.0
        return _Tree(q1, p1, g1, q1, p1, g1, q1, lp1, g1, log_w, p1.copy(),
                     valid=not divergent, divergent=divergent,
                     alpha_sum=alpha, n_alpha=1, n_leapfrog=1)

    first = _build_tree(q, p, grad, direction, depth - 1, eps, inv_mass, h0, threshold, logp_grad, rng)
    if not first.valid:
        return first
    if direction > 0:
        second = _build_tree(first.q_plus, first.p_plus, first.g_plus, direction,
                             depth - 1, eps, inv_mass, h0, threshold, logp_grad, rng)
        q_minus, p_minus, g_minus = first.q_minus, first.p_minus, first.g_minus
        q_plus, p_plus, g_plus = second.q_plus, second.p_plus, second.g_plus
    else:
        second = _build_tree(first.q_minus, first.p_minus, first.g_minus, direction,
                             depth - 1, eps, inv_mass, h0, threshold, logp_grad, rng)
        q_minus, p_minus, g_minus = second.q_minus, second.p_minus, second.g_minus
        q_plus, p_plus, g_plus = first.q_plus, first.p_plus, first.g_plus

    log_sum_w = np.logaddexp(first.log_sum_w, second.log_sum_w)
    # multinomial selection between the two halves
    if second.valid and math.log(rng.uniform()) < second.log_sum_w - log_sum_w:
        prop = (second.q_prop, second.lp_prop, second.g_prop)
    else:
        prop = (first.q_prop, first.lp_prop, first.g_prop)
    rho = first.rho + second.rho
    valid = first.valid and second.valid and _no_uturn(rho, p_minus, p_plus, inv_mass)
    return _Tree(q_minus, p_minus, g_minus, q_plus, p_plus, g_plus, *prop,
                 log_sum_w=log_sum_w, rho=rho, valid=valid,
                 divergent=first.divergent or second.divergent,
                 alpha_sum=first.alpha_sum + second.alpha_sum,
                 n_alpha=first.n_alpha + second.n_alpha,
                 n_leapfrog=first.n_leapfrog + second.n_leapfrog)


def nuts_update(q, lp, grad, eps, inv_mass, logp_grad, rng,
                max_tree_depth=10, divergence_threshold=1000.0):
    """One No-U-Turn trajectory from (q, lp, grad).

    Returns (q', lp', grad', stats) where stats holds the dual-averaging
    acceptance statistic, the realized tree depth, the leapfrog count, and a
    divergence flag. max_tree_depth=0 degenerates to a single leapfrog
    proposal.
    """
    dim = len(q)
    mass = 1.0 / inv_mass
    p0 = rng.standard_normal(dim) * np.sqrt(mass)
    h0 = -lp + 0.5 * float(p0 * inv_mass @ p0)

    q_minus = q_plus = q
    p_minus = p_plus = p0
    g_minus = g_plus = grad
    q_prop, lp_prop, g_prop = q, lp, grad
    log_sum_w = 0.0
    rho = p0.copy()
    alpha_sum, n_alpha, n_leapfrog = 0.0, 0, 0
    divergent = False
    depth = 0

    while True:
        direction = 1 if rng.uniform() < 0.5 else -1
        if direction > 0:
            sub = _build_tree(q_plus, p_plus, g_plus, 1, depth, eps, inv_mass, h0,
                              divergence_threshold, logp_grad, rng)
            q_plus, p_plus, g_plus = sub.q_plus, sub.p_plus, sub.g_plus
        else:
            sub = _build_tree(q_minus, p_minus, g_minus, -1, depth, eps, inv_mass, h0,
                              divergence_threshold, logp_grad, rng)
            q_minus, p_minus, g_minus = sub.q_minus, sub.p_minus, sub.g_minus

        alpha_sum += sub.alpha_sum
        n_alpha += sub.n_alpha
        n_leapfrog += sub.n_leapfrog
        divergent = divergent or sub.divergent
        if not sub.valid:
            break
        # biased progressive selection favours the new half of the trajectory
        if math.log(rng.uniform()) < sub.log_sum_w - log_sum_w:
            q_prop, lp_prop, g_prop = sub.q_prop, sub.lp_prop, sub.g_prop
        log_sum_w = np.logaddexp(log_sum_w, sub.log_sum_w)
        rho = rho + sub.rho
        if not _no_uturn(rho, p_minus, p_plus, inv_mass):
            break
        depth += 1
        if depth > max_tree_depth:
            break

    stats = {
        "accept_stat": alpha_sum / max(1, n_alpha),
        "depth": depth,
        "n_leapfrog": n_leapfrog,
        "divergent": divergent,
    }
    return q_prop, lp_prop, g_prop, stats


# --------------------------------------------------------------------------- #
# hyperparameter steps


def gibbs_tau2_ig(beta_j, td, omega_j, hyper: InverseGamma, rng) -> float:
    """Exact draw from IG(a + rk/2, b + quadratic form / 2)."""
    U = omega_j * td.pen_response + (1.0 - omega_j) * td.pen_covariate
    shape = hyper.a + 0.5 * td.rank_K
    rate = hyper.b + 0.5 * float(beta_j @ U @ beta_j)
    return float(1.0 / rng.gamma(shape, 1.0 / rate))


def mh_tau2_sd(beta_j, td, theta, tau2, omega_j, rng, step=0.5):
    """Random-walk Metropolis on log tau2 targeting the scale-dependent
    (Weibull shape 1/2) full conditional. Returns (draw, accepted)."""
    U = omega_j * td.pen_response + (1.0 - omega_j) * td.pen_covariate
    quad = float(beta_j @ U @ beta_j)
    rk = td.rank_K

    def log_target(log_t2):
        # underflow/overflow guarded: exp saturates instead of raising
        val = (0.5 - 0.5 * rk) * log_t2 - math.sqrt(math.exp(min(log_t2, 700.0)) / theta)
        if quad > 0.0:
            val -= 0.5 * quad * math.exp(min(-log_t2, 700.0))
        return val

    t = math.log(max(tau2, 1e-290))
    t_new = t + step * rng.standard_normal()
    if math.log(rng.uniform()) < log_target(t_new) - log_target(t):
        return math.exp(min(max(t_new, -667.0), 700.0)), True
    return tau2, False


def gibbs_omega(beta_j, td, tau2_j, rng) -> float:
    """Categorical draw of the anisotropy weight from its discrete full
    conditional; the precomputed generalized log-determinant table carries
    everything that varies with the weight."""
    grid = td.omega_grid
    if len(grid) == 1:
        return float(grid[0])
    q_resp = float(beta_j @ td.pen_response @ beta_j)
    q_cov = float(beta_j @ td.pen_covariate @ beta_j)
    logw = 0.5 * td.logdet_table - 0.5 * (grid * q_resp + (1.0 - grid) * q_cov) / tau2_j
    logw -= logsumexp(logw)
    return float(rng.choice(grid, p=np.exp(logw)))


# --------------------------------------------------------------------------- #
# full runs


def _initial_beta(md: ModelDesign) -> np.ndarray:
    """Starting point with an increasing, data-scaled transformation: linear
    response terms start with unit slope on their pure-y column; monotone
    spline terms start with equal log-increments mapping the response domain
    onto roughly [-2, 2] on the reference scale."""
    beta = np.zeros(md.n_beta)
    off = int(md.spec.intercept)
    for j, td in enumerate(md.terms):
        sl = md.term_slice(j)
        if td.spec.response == "linear" and not td.identity_embed:
            # embedding removed the constant: the y-on-constant column leads
            # the second response block, at coefficient index D - D2
            beta[off + sl.start + td.D - td.D2] = 1.0
        elif td.monotone:
            beta[off + sl.start: off + sl.stop][td.exp_mask] = math.log(4.0 / (td.D1 - 1))
    return beta


def run_mcmc(model, data: DataSet | None = None, cfg: SamplerConfig | None = None) -> PosteriorDraws:
    """Fit a model by alternating the three sampler steps.

    `model` is a ModelSpec (built here against `data`) or a prebuilt
    ModelDesign. Covariate preprocessing (standardization or unit-interval
    rescaling) lives inside the design and is undone implicitly because all
    downstream evaluation flows through the stored design. Deterministic
    given the seed. Raises DivergenceAbort when more than half of the
    post-warmup transitions diverge.
    """
    cfg = cfg or SamplerConfig()
    if isinstance(model, ModelDesign):
        md = model
    else:
        seed = cfg.seed if cfg.seed is not None else model.seed
        md = build_design(model, data, np.random.default_rng(seed))
    seed = cfg.seed if cfg.seed is not None else md.spec.seed
    rng = np.random.default_rng(seed)
    diag = DiagCounters()

    J = len(md.terms)
    beta = _initial_beta(md)
    tau2 = np.ones(J)
    omega = np.array([float(np.median(td.omega_grid)) for td in md.terms])

    dim = md.n_beta
    sd_steps = np.full(J, 0.5)
    sd_accepts = np.zeros(J)
    sd_proposals = np.zeros(J)

    # diagonal metric: prior precision plus design-curvature proxy, a
    # function of (tau2, omega) only so the beta-kernel stays exact while the
    # metric follows the smoothing-variance scales
    gram = md.fisher_gram()
    n_rows = md.blocks.n

    def metric_inv_mass(K_full):
        prec = np.empty(dim)
        off = int(md.spec.intercept)
        if off:
            prec[0] = n_rows
        prec[off:] = np.diag(K_full) + gram
        return 1.0 / np.maximum(prec, 1e-8)

    K_full = md.assemble_precision(tau2, omega)
    inv_mass = metric_inv_mass(K_full)

    def make_target(K):
        return lambda q: loglik_and_grad_beta(q, md, K, diag)

    target = make_target(K_full)
    lp, grad = target(beta)
    eps = _find_initial_step_size(beta, lp, grad, inv_mass, target, rng)
    averager = _DualAveraging(eps, cfg.target_accept)

    S = cfg.iterations - cfg.burn_in
    beta_draws = np.empty((S, dim))
    tau2_draws = np.empty((S, J))
    omega_draws = np.empty((S, J))
    accept_trace = np.empty(cfg.iterations)
    depth_trace = np.empty(cfg.iterations, dtype=int)
    step_trace = np.empty(cfg.iterations)
    divergent_trace = np.zeros(cfg.iterations, dtype=bool)
    post_div = 0

    for it in range(cfg.iterations):
        warm = it < cfg.warmup
        beta, lp, grad, stats = nuts_update(
            beta, lp, grad, eps, inv_mass, target, rng,
            max_tree_depth=cfg.max_tree_depth,
            divergence_threshold=cfg.divergence_threshold,
        )
        accept_trace[it] = stats["accept_stat"]
        depth_trace[it] = stats["depth"]
        divergent_trace[it] = stats["divergent"]
        step_trace[it] = eps

        if warm:
            eps = averager.update(stats["accept_stat"])
            if it + 1 == cfg.warmup:
                eps = averager.final()
        else:
            if stats["divergent"]:
                post_div += 1
            done = it - cfg.warmup + 1
            if done >= 100 and post_div > 0.5 * done:
                raise DivergenceAbort(
                    f"{post_div}/{done} post-warmup transitions divergent; "
                    "the model or step size is misconfigured"
                )

        # Steps 2 and 3: smoothing variances and anisotropy weights
        updated = False
        off = int(md.spec.intercept)
        for j, td in enumerate(md.terms):
            if not td.penalized:
                continue
            sl = md.term_slice(j)
            bj = beta[off + sl.start: off + sl.stop]
            hp = td.hyperprior
            if isinstance(hp, ScaleDependent):
                tau2[j], accepted = mh_tau2_sd(bj, td, hp.theta, tau2[j], omega[j], rng, sd_steps[j])
                sd_proposals[j] += 1
                sd_accepts[j] += accepted
                if warm:
                    sd_steps[j] = float(np.clip(
                        math.exp(math.log(sd_steps[j]) + (accepted - 0.44) / math.sqrt(it + 1.0)),
                        1e-3, 50.0))
            else:
                tau2[j] = gibbs_tau2_ig(bj, td, omega[j], hp, rng)
            if td.sample_omega:
                omega[j] = gibbs_omega(bj, td, tau2[j], rng)
            updated = True
        if updated:
            K_full = md.assemble_precision(tau2, omega)
            inv_mass = metric_inv_mass(K_full)
            target = make_target(K_full)
            lp, grad = target(beta)

        if it >= cfg.burn_in:
            s = it - cfg.burn_in
            beta_draws[s] = beta
            tau2_draws[s] = tau2
            omega_draws[s] = omega

    post = slice(cfg.warmup, cfg.iterations)
    n_post = cfg.iterations - cfg.warmup
    ess = np.array([effective_sample_size(beta_draws[:, k]) for k in range(dim)])
    diagnostics = {
        "seed": seed,
        "step_size": float(eps),
        "step_size_trace": step_trace,
        "accept_trace": accept_trace,
        "mean_accept_post_warmup": float(accept_trace[post].mean()) if n_post else float("nan"),
        "tree_depths": depth_trace,
        "divergent": divergent_trace,
        "divergences_post_warmup": int(divergent_trace[post].sum()),
        "divergence_fraction": float(divergent_trace[post].mean()) if n_post else 0.0,
        "ess": ess,
        "min_ess": float(ess.min()),
        "sd_mh_acceptance": {
            md.terms[j].label: float(sd_accepts[j] / sd_proposals[j])
            for j in range(J) if sd_proposals[j] > 0
        },
        "counters": diag.as_dict(),
        "coefficients": md.coefficient_labels(),
        "term_labels": [td.label for td in md.terms],
    }
    return PosteriorDraws(beta_draws, tau2_draws, omega_draws, diagnostics, md, cfg)


def run_chains(model, data: DataSet, cfg: SamplerConfig) -> list[PosteriorDraws]:
    """Independent chains with sub-seeds spawned from cfg.seed; the design is
    built once and shared read-only."""
    base = cfg.seed if cfg.seed is not None else 0
    child_seeds = np.random.SeedSequence(base).generate_state(cfg.chains)
    md = build_design(model, data, np.random.default_rng(base))
    out = []
    for c in range(cfg.chains):
        chain_cfg = SamplerConfig(
            iterations=cfg.iterations, warmup=cfg.warmup, burn_in=cfg.burn_in,
            target_accept=cfg.target_accept, max_tree_depth=cfg.max_tree_depth,
            divergence_threshold=cfg.divergence_threshold,
            seed=int(child_seeds[c]), chains=1,
        )
        out.append(run_mcmc(md, cfg=chain_cfg))
    return out


def effective_sample_size(x: np.ndarray) -> float:
    """ESS from the initial monotone positive sequence of autocorrelations."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.allclose(x, x[0]):
        return float(n)
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f))[:n].real / n
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    # Geyer pair sums Gamma_m = rho_{2m} + rho_{2m+1}: keep the leading
    # positive run, force it nonincreasing, tau = 2 * sum(Gamma) - 1
    m_max = n // 2
    pair = rho[0: 2 * m_max: 2] + rho[1: 2 * m_max: 2]
    pos = pair > 0
    if not pos[0]:
        return float(n)
    first_neg = len(pair) if pos.all() else int(np.argmin(pos))
    kept = np.minimum.accumulate(pair[:first_neg])
    tau = 2.0 * kept.sum() - 1.0
    return float(min(n / max(tau, 1e-12), n))

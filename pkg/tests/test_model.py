"""Term construction, penalties, monotone reparameterization, priors."""

import numpy as np
import pytest
from scipy import integrate, stats

from bctm import (
    InverseGamma,
    ModelSpec,
    ScaleDependent,
    TermSpec,
    build_design,
    build_precision,
    elicit_sd_scale,
    reparameterize,
    transform,
)
from bctm.model import PRECISION_RIDGE, build_term

from conftest import make_gaussian_data, random_state


def _design(terms, n=50, seed=0, n_cov=1, reference="normal", **model_kw):
    data = make_gaussian_data(n=n, seed=seed, n_cov=n_cov)
    return build_design(ModelSpec(terms=terms, reference=reference, **model_kw), data)


class TestTermSpecValidation:
    def test_pure_intercept_rejected(self):
        with pytest.raises(ValueError, match="global intercept"):
            TermSpec(response="intercept", covariate_kind="none")

    def test_monotone_iff_spline_response(self):
        assert TermSpec(response="spline").monotone
        assert not TermSpec(response="linear").monotone

    def test_covariate_names_required(self):
        with pytest.raises(ValueError, match="covariate names"):
            TermSpec(response="intercept", covariate_kind="linear")

    def test_spatial_needs_adjacency(self):
        with pytest.raises(ValueError, match="adjacency"):
            TermSpec(response="intercept", covariate_kind="spatial", covariates=("s",))

    def test_unknown_covariate_at_build(self):
        data = make_gaussian_data(20)
        term = TermSpec(response="intercept", covariate_kind="linear", covariates=("missing",))
        with pytest.raises(KeyError, match="missing"):
            build_term(term, data, (-1.0, 1.0))

    def test_model_needs_response_dependence(self):
        with pytest.raises(ValueError, match="depend on the response"):
            ModelSpec(terms=[TermSpec(response="intercept", covariate_kind="linear",
                                      covariates=("x1",))])


class TestPenalties:
    def test_response_penalty_is_first_difference_on_exponentiated_block(self):
        md = _design([TermSpec(response="spline", response_dim=6)])
        td = md.terms[0]
        dt = np.zeros((4, 6))
        for r in range(4):
            dt[r, r + 1] = 1.0
            dt[r, r + 2] = -1.0
        np.testing.assert_allclose(td.K1, dt.T @ dt)
        assert td.rank_K == 4

    def test_linear_covariates_unpenalized(self):
        md = _design([TermSpec(response="linear", covariate_kind="linear",
                               covariates=("x1",), covariate_intercept=True)])
        td = md.terms[0]
        assert not td.penalized
        assert not td.pen_covariate.any()

    def test_random_effect_identity_penalty(self):
        data = make_gaussian_data(30, seed=1)
        data.covariates["g"] = np.array(["a", "b", "c", "d"] * 7 + ["a", "b"])
        md = build_design(ModelSpec(terms=[
            TermSpec(response="linear"),
            TermSpec(response="intercept", covariate_kind="random_effect", covariates=("g",)),
        ]), data)
        td = md.terms[1]
        np.testing.assert_allclose(td.K2, np.eye(4))
        assert td.rank_K == 4

    def test_spatial_graph_laplacian(self):
        data = make_gaussian_data(30, seed=1)
        data.covariates["s"] = np.array(["r1", "r2", "r3"] * 10)
        adjacency = (("r1", "r2"), ("r2", "r3"))
        md = build_design(ModelSpec(terms=[
            TermSpec(response="linear"),
            TermSpec(response="intercept", covariate_kind="spatial", covariates=("s",),
                     adjacency=adjacency),
        ]), data)
        td = md.terms[1]
        lap = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
        np.testing.assert_allclose(td.K2, lap)
        # sampled in the positive-eigenvalue (sum-to-zero) subspace
        assert td.D == 2
        np.testing.assert_allclose(td.pen_covariate, np.diag(np.linalg.eigvalsh(lap)[1:]),
                                   atol=1e-12)

    def test_disconnected_graph_warns(self):
        data = make_gaussian_data(30, seed=1)
        data.covariates["s"] = np.array(["r1", "r2", "r3", "r4", "r5"] * 6)
        adjacency = (("r1", "r2"), ("r3", "r4"), ("r4", "r5"))
        with pytest.warns(UserWarning, match="connected components"):
            build_design(ModelSpec(terms=[
                TermSpec(response="linear"),
                TermSpec(response="intercept", covariate_kind="spatial", covariates=("s",),
                         adjacency=adjacency),
            ]), data)


class TestReparameterize:
    def test_cumulative_sums_of_exponentials(self):
        md = _design([TermSpec(response="spline", response_dim=3, degree=2)])
        td = md.terms[0]
        gamma, c_diag = reparameterize(np.zeros(3), td)
        np.testing.assert_allclose(gamma, [0.0, 1.0, 2.0])
        np.testing.assert_allclose(c_diag, [1.0, 1.0, 1.0])

    def test_tensor_layout_interleaving(self):
        data = make_gaussian_data(40, seed=2)
        data.covariates["g"] = np.array(["a", "b"] * 20)
        md = build_design(ModelSpec(terms=[TermSpec(
            response="spline", response_dim=2, degree=1,
            covariate_kind="random_effect", covariates=("g",),
        )]), data)
        td = md.terms[0]
        b = np.array([0.3, -0.4, 0.2, 1.1])
        gamma, c_diag = reparameterize(b, td)
        np.testing.assert_allclose(
            gamma, [0.3, -0.4, 0.3 + np.exp(0.2), -0.4 + np.exp(1.1)])
        np.testing.assert_allclose(c_diag, [1, 1, np.exp(0.2), np.exp(1.1)])

    def test_increments_strictly_positive_for_any_finite_beta(self):
        md = _design([TermSpec(response="spline", response_dim=7)])
        td = md.terms[0]
        rng = np.random.default_rng(0)
        for _ in range(50):
            gamma, _ = reparameterize(rng.normal(0, 5, 7), td)
            assert np.all(np.diff(gamma) > 0)

    def test_overflow_clip(self):
        md = _design([TermSpec(response="spline", response_dim=3, degree=2)])
        gamma, c_diag = reparameterize(np.array([0.0, 100.0, 0.0]), md.terms[0])
        assert np.isfinite(gamma).all()
        assert c_diag[1] == pytest.approx(np.exp(30.0))

    def test_non_monotone_passthrough(self):
        md = _design([TermSpec(response="linear", covariate_kind="linear",
                               covariates=("x1",))])
        b = np.array([0.5, -1.0])
        gamma, c_diag = reparameterize(b, md.terms[0])
        np.testing.assert_array_equal(gamma, b)
        np.testing.assert_array_equal(c_diag, 1.0)


class TestTheoremMonotonicity:
    """h(y|x) nondecreasing in y for every reparameterized state."""

    def _templates(self):
        data = make_gaussian_data(n=60, seed=7, n_cov=2)
        data.covariates["g"] = np.array(["a", "b", "c"] * 20)
        specs = [
            [TermSpec(response="spline", response_dim=8)],
            [TermSpec(response="spline", response_dim=6, covariate_kind="linear",
                      covariates=("x1",), covariate_intercept=True)],
            [TermSpec(response="spline", response_dim=5, covariate_kind="spline",
                      covariates=("x2",), covariate_dim=6)],
            [TermSpec(response="spline", response_dim=4, covariate_kind="random_effect",
                      covariates=("g",))],
        ]
        for terms in specs:
            yield build_design(ModelSpec(terms=terms), data), data

    def test_no_violations_across_templates(self):
        rng = np.random.default_rng(11)
        y_grid = None
        for md, data in self._templates():
            y_grid = np.linspace(*md.response_domain, 50)
            for _ in range(50):
                state = random_state(md, rng, scale=1.5)
                idx = rng.integers(0, data.n, 20)
                for i in idx[:5]:
                    cov = {k: np.full(50, v[i]) for k, v in data.covariates.items()}
                    h, hp = transform(state, md, y_grid, cov)
                    assert np.all(np.diff(h) >= -1e-12)
                    assert np.all(hp >= -1e-12)


class TestNullSpaceShrinkage:
    def test_constant_unconstrained_block_gives_affine_gamma_and_zero_penalty(self):
        md = _design([TermSpec(response="spline", response_dim=8)])
        td = md.terms[0]
        beta = np.full(td.D, 0.4)  # equal log-increments
        gamma, _ = reparameterize(td.to_raw(beta), td)
        np.testing.assert_allclose(np.diff(gamma, 2), 0.0, atol=1e-12)
        quad = beta @ td.pen_response @ beta
        assert quad == pytest.approx(0.0, abs=1e-12)


class TestBuildPrecision:
    def test_weight_extremes_collapse_to_single_penalty(self):
        data = make_gaussian_data(50, seed=4)
        md = build_design(ModelSpec(terms=[TermSpec(
            response="spline", response_dim=6, covariate_kind="spline",
            covariates=("x1",), covariate_dim=5)]), data)
        td = md.terms[0]
        K_resp = build_precision(td, 2.0, 1.0)
        np.testing.assert_allclose(K_resp, td.pen_response / 2.0 + PRECISION_RIDGE * np.eye(td.D))
        K_cov = build_precision(td, 0.5, 0.0)
        np.testing.assert_allclose(K_cov, td.pen_covariate / 0.5 + PRECISION_RIDGE * np.eye(td.D))

    def test_symmetry_and_eigenvalue_floor(self):
        data = make_gaussian_data(50, seed=4)
        md = build_design(ModelSpec(terms=[TermSpec(
            response="spline", response_dim=7, covariate_kind="spline",
            covariates=("x1",), covariate_dim=6)]), data)
        td = md.terms[0]
        rng = np.random.default_rng(5)
        for _ in range(10):
            K = build_precision(td, float(np.exp(rng.normal())), float(rng.uniform()))
            np.testing.assert_allclose(K, K.T, atol=1e-12)
            assert np.linalg.eigvalsh(K).min() >= 9e-7
            b = rng.normal(size=td.D)
            assert b @ K @ b >= 1e-6 * b @ b * (1 - 1e-9)

    def test_nonpositive_tau2_rejected(self, spline_design):
        with pytest.raises(ValueError, match="tau2"):
            build_precision(spline_design.terms[0], 0.0, 1.0)


class TestPriorChangeOfVariables:
    """Transforming unconstrained draws must reproduce the closed-form prior
    of the basis coefficients implied by the change of variables."""

    def _closed_form_log_density(self, g):
        # beta_1 = g1, beta_k = log(g_k - g_{k-1}); |d beta/d gamma| = prod 1/(g_k - g_{k-1})
        diffs = np.diff(g)
        if np.any(diffs <= 0):
            return -np.inf
        b = np.concatenate([[g[0]], np.log(diffs)])
        return stats.norm.logpdf(b).sum() - np.log(diffs).sum()

    def test_identity_between_densities_on_samples(self):
        md = _design([TermSpec(response="spline", response_dim=3, degree=2)])
        td = md.terms[0]
        rng = np.random.default_rng(8)
        for _ in range(500):
            b = rng.normal(size=3)
            gamma, _ = reparameterize(b, td)
            direct = stats.norm.logpdf(b).sum() - b[1] - b[2]  # minus log|d gamma/d beta|
            assert self._closed_form_log_density(gamma) == pytest.approx(direct, abs=1e-10)

    def test_histogram_chi2_against_quadrature_marginal(self):
        # gamma_2 = beta_1 + exp(beta_2) with beta iid N(0,1): the closed-form
        # joint marginalizes to a normal-lognormal convolution
        md = _design([TermSpec(response="spline", response_dim=3, degree=2)])
        td = md.terms[0]
        rng = np.random.default_rng(9)
        n = 100_000
        B = rng.normal(size=(n, 3))
        g2 = B[:, 0] + np.exp(B[:, 1])

        def marginal(v):
            val, _ = integrate.quad(
                lambda u: stats.norm.pdf(v - u) * stats.lognorm.pdf(u, 1.0), 0, np.inf,
                limit=200)
            return val

        edges = np.concatenate([[-np.inf], np.linspace(-1.5, 5.0, 14), [np.inf]])
        counts, _ = np.histogram(g2, edges)
        probs = []
        for lo, hi in zip(edges[:-2], edges[1:-1]):
            lo_f = -9.0 if not np.isfinite(lo) else lo
            val, _ = integrate.quad(marginal, lo_f, hi, limit=300)
            probs.append(val)
        # the heavy lognormal upper tail is taken as the complement
        probs.append(1.0 - sum(probs))
        probs = np.asarray(probs)
        chi2 = float(((counts - n * probs) ** 2 / (n * probs)).sum())
        p_value = stats.chi2.sf(chi2, len(probs) - 1)
        assert p_value > 0.001

    def test_monotone_draws_only(self):
        md = _design([TermSpec(response="spline", response_dim=3, degree=2)])
        td = md.terms[0]
        rng = np.random.default_rng(10)
        B = rng.normal(size=(2000, 3))
        for b in B[:200]:
            gamma, _ = reparameterize(b, td)
            assert gamma[0] < gamma[1] < gamma[2]


class TestElicitSdScale:
    def _term(self, seed=0):
        md = _design([TermSpec(response="spline", response_dim=10)], n=80, seed=seed)
        return md.terms[0]

    def test_criterion_probability_decreases_in_theta(self):
        td = self._term()
        rng = np.random.default_rng(0)
        lam, V = np.linalg.eigh(0.5 * td.pen_response + 0.5 * td.pen_covariate)
        kept = lam > 1e-8 * lam.max()
        Z = rng.standard_normal((4000, int(kept.sum())))
        W = rng.weibull(0.5, 4000)
        unit = (V[:, kept] / np.sqrt(lam[kept])) @ Z.T
        m = np.abs(unit[td.exp_mask, :]).max(axis=0)
        probs = [np.mean(np.sqrt(th * W) * m <= 3.0) for th in (0.01, 0.1, 1.0, 10.0)]
        assert all(a >= b for a, b in zip(probs, probs[1:]))

    def test_self_consistency_across_seeds(self):
        td = self._term()
        t1 = elicit_sd_scale(3.0, 0.01, td, n_sim=40_000, rng=np.random.default_rng(1))
        t2 = elicit_sd_scale(3.0, 0.01, td, n_sim=40_000, rng=np.random.default_rng(2))
        assert abs(np.log(t1) - np.log(t2)) < 0.25

    def test_degenerate_infinite_bound_warns(self):
        td = self._term()
        with pytest.warns(UserWarning, match="upper"):
            theta = elicit_sd_scale(np.inf, 0.01, td)
        assert theta == pytest.approx(np.exp(40.0))

    def test_elicited_scale_satisfies_criterion(self):
        # independent re-simulation at the elicitation's own anisotropy weight
        # (the grid median); the bisection tolerance is +/-0.005 on the
        # criterion probability
        td = self._term()
        theta = elicit_sd_scale(3.0, 0.01, td, n_sim=200_000, rng=np.random.default_rng(3))
        rng = np.random.default_rng(99)
        w_mid = float(np.median(td.omega_grid))
        lam, V = np.linalg.eigh(w_mid * td.pen_response + (1 - w_mid) * td.pen_covariate)
        kept = lam > 1e-8 * lam.max()
        Z = rng.standard_normal((200_000, int(kept.sum())))
        tau2 = theta * rng.weibull(0.5, 200_000)
        unit = (V[:, kept] / np.sqrt(lam[kept])) @ Z.T
        m = np.abs(unit[td.exp_mask, :]).max(axis=0)
        p = float(np.mean(np.sqrt(tau2) * m <= 3.0))
        assert p == pytest.approx(0.99, abs=0.01)

    def test_build_design_resolves_sd_scales(self):
        data = make_gaussian_data(60, seed=5)
        md = build_design(ModelSpec(terms=[
            TermSpec(response="spline", response_dim=8, hyperprior=ScaleDependent()),
        ]), data)
        assert isinstance(md.terms[0].hyperprior, ScaleDependent)
        assert md.terms[0].hyperprior.theta is not None


class TestSerializationAndPreprocessing:
    def test_model_json_round_trip(self):
        model = ModelSpec(
            reference="mev",
            seed=11,
            terms=[
                TermSpec(response="spline", response_dim=12,
                         hyperprior=ScaleDependent(c=2.0, alpha=0.05)),
                TermSpec(response="intercept", covariate_kind="spatial", covariates=("s",),
                         adjacency=(("a", "b"),), hyperprior=InverseGamma(2.0, 0.01)),
            ],
        )
        clone = ModelSpec.from_dict(model.to_dict())
        assert clone.to_dict() == model.to_dict()
        assert clone.terms[0].hyperprior == model.terms[0].hyperprior

    def test_standardization_policy(self):
        data = make_gaussian_data(50, seed=6)
        md = build_design(ModelSpec(terms=[
            TermSpec(response="spline", response_dim=5, covariate_kind="linear",
                     covariates=("x1",), covariate_intercept=True),
            TermSpec(response="intercept", covariate_kind="linear", covariates=("x1",)),
        ]), data)
        x = data.covariates["x1"]
        mono_shift, mono_scale = md.terms[0].covariate_stats["x1"]
        assert mono_shift == pytest.approx(x.min())
        assert mono_scale == pytest.approx(x.max() - x.min())
        lin_shift, lin_scale = md.terms[1].covariate_stats["x1"]
        assert lin_shift == pytest.approx(x.mean())
        assert lin_scale == pytest.approx(x.std())

    def test_prediction_rows_reuse_training_centering(self, spline_design):
        md = spline_design
        td = md.terms[0]
        C_train, _ = td.design_at(md.data.y, md.data.covariates)
        np.testing.assert_allclose(C_train, td.C, atol=1e-12)
        assert abs(C_train.mean()) < 1e-12  # centered against training means

    def test_centered_term_values_average_to_zero_in_sample(self, spline_design):
        md = spline_design
        state = random_state(md, np.random.default_rng(1))
        _, gamma, _, _ = md.gamma(state.beta)
        rsl = md.raw_slice(0)
        vals = md.terms[0].C @ gamma[rsl]
        assert abs(vals.mean()) < 1e-10

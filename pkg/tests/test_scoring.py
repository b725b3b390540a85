"""Proper scoring rules and distribution-recovery measures."""

import numpy as np
import pytest
from scipy.special import ndtri

from bctm.scoring import coverage, crps, mad, quantile_score


class TestMad:
    def test_identical_vectors_zero(self):
        v = np.linspace(0, 1, 11)
        assert mad(v, v) == 0.0

    def test_constant_offset(self):
        true = np.full(20, 0.4)
        assert mad(true, true + 0.1) == pytest.approx(0.1)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length"):
            mad(np.zeros(3), np.zeros(4))

    def test_metric_properties_on_unit_interval(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b, c = rng.uniform(0, 1, (3, 15))
            assert mad(a, b) == pytest.approx(mad(b, a))
            assert mad(a, c) <= mad(a, b) + mad(b, c) + 1e-12
            assert mad(a, b) >= 0


class TestQuantileScore:
    def test_zero_at_the_quantile(self):
        assert quantile_score(1.3, 1.3, 0.2) == 0.0

    def test_median_gives_absolute_error(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=50)
        y = rng.normal(size=50)
        np.testing.assert_allclose(quantile_score(q, y, 0.5), np.abs(q - y), atol=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for alpha in (0.05, 0.3, 0.9):
            scores = quantile_score(rng.normal(size=200), rng.normal(size=200), alpha)
            assert np.all(scores >= 0)

    def test_properness_by_monte_carlo(self):
        """The expected score over N(0,1) draws is minimized at the true
        quantile."""
        rng = np.random.default_rng(3)
        y = rng.standard_normal(100_000)
        for alpha in (0.05, 0.5, 0.95):
            q_star = ndtri(alpha)
            at_star = quantile_score(q_star, y, alpha).mean()
            for shift in (-0.2, 0.2):
                assert at_star < quantile_score(q_star + shift, y, alpha).mean()

    def test_invalid_alpha_rejected(self):
        with pytest.raises(ValueError, match="alpha"):
            quantile_score(0.0, 0.0, 1.0)


class TestCrps:
    def test_point_mass_at_observation_scores_zero(self):
        assert crps(lambda a: np.full_like(np.asarray(a), 1.7), 1.7) == 0.0

    def test_gaussian_closed_form_at_the_mean(self):
        # CRPS(N(0,1), 0) = (sqrt(2) - 1) / sqrt(pi)
        val = crps(ndtri, 0.0, n_alpha=500)
        expected = (np.sqrt(2.0) - 1.0) / np.sqrt(np.pi)
        assert val == pytest.approx(expected, abs=0.002)

    def test_scale_equivariance(self):
        c = 3.5
        base = crps(ndtri, 0.4, n_alpha=400)
        scaled = crps(lambda a: c * ndtri(a), c * 0.4, n_alpha=400)
        assert scaled == pytest.approx(c * base, rel=1e-9)

    def test_properness_true_generator_beats_shifted(self):
        rng = np.random.default_rng(4)
        y = rng.standard_normal(4000)
        true_mean = float(np.mean([crps(ndtri, yi, n_alpha=99) for yi in y[:800]]))
        shifted_mean = float(np.mean([crps(lambda a: ndtri(a) + 1.0, yi, n_alpha=99)
                                      for yi in y[:800]]))
        assert true_mean < shifted_mean

    def test_too_few_levels_rejected(self):
        with pytest.raises(ValueError, match="n_alpha"):
            crps(ndtri, 0.0, n_alpha=5)


class TestCoverage:
    def test_always_inside(self):
        truth = np.linspace(0, 1, 9)
        assert coverage(truth, truth - 1, truth + 1) == 1.0

    def test_degenerate_intervals(self):
        truth = np.ones(5)
        assert coverage(truth, truth, truth) == 1.0
        assert coverage(truth, truth + 0.1, truth + 0.2) == 0.0

    def test_fractional(self):
        truth = np.array([0.0, 1.0, 2.0, 3.0])
        lower = np.array([-1.0, 2.0, 1.0, 2.5])
        upper = np.array([1.0, 3.0, 3.0, 2.8])
        assert coverage(truth, lower, upper) == pytest.approx(0.5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            coverage(np.zeros(3), np.zeros(2), np.zeros(3))


class TestEvaluationGrid:
    def test_valid_construction_and_length(self):
        from bctm.scoring import EvaluationGrid

        g = EvaluationGrid(y=np.array([0.0, 1.0]), x={"x1": np.array([0.2, 0.4])},
                           true_cdf=np.array([0.3, 0.9]))
        assert len(g) == 2

    def test_true_cdf_bounds_enforced(self):
        from bctm.scoring import EvaluationGrid

        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            EvaluationGrid(y=np.zeros(2), x={"x1": np.zeros(2)},
                           true_cdf=np.array([0.5, 1.2]))

    def test_column_alignment_enforced(self):
        from bctm.scoring import EvaluationGrid

        with pytest.raises(ValueError, match="length"):
            EvaluationGrid(y=np.zeros(3), x={"x1": np.zeros(2)})

"""B-spline knot construction, evaluation, derivatives, and tensor products."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from bctm.basis import (
    BasisMatrix,
    apply_centering,
    center_columns,
    eval_basis,
    make_knots,
    row_kronecker,
)


class TestMakeKnots:
    def test_minimal_cubic_basis_has_no_interior_knots(self):
        kv = make_knots(0.0, 1.0, 4, 3)
        np.testing.assert_array_equal(kv.knots, [0, 0, 0, 0, 1, 1, 1, 1])
        assert kv.num_basis == 4

    def test_interior_knots_are_equidistant(self):
        kv = make_knots(0.0, 1.0, 10, 3)
        interior = kv.knots[4:-4]
        np.testing.assert_allclose(interior, np.arange(1, 7) / 7.0, atol=1e-15)
        assert kv.num_basis == 10

    def test_num_basis_below_order_rejected(self):
        with pytest.raises(ValueError, match="degree"):
            make_knots(0.0, 1.0, 3, 3)

    def test_reversed_interval_rejected(self):
        with pytest.raises(ValueError, match="lo < hi"):
            make_knots(1.0, 0.0, 5, 3)

    @given(st.integers(min_value=4, max_value=25))
    def test_requested_dimension_always_realized(self, num_basis):
        kv = make_knots(-2.0, 3.0, num_basis, 3)
        assert kv.num_basis == num_basis


class TestEvalBasis:
    def test_left_boundary_row(self):
        kv = make_knots(0.0, 1.0, 4, 3)
        row = eval_basis(kv, [0.0]).values[0]
        np.testing.assert_allclose(row, [1, 0, 0, 0], atol=1e-15)

    def test_bernstein_values_at_half(self):
        # four cubic B-splines on a single span are the Bernstein basis
        kv = make_knots(0.0, 1.0, 4, 3)
        row = eval_basis(kv, [0.5]).values[0]
        np.testing.assert_allclose(row, [0.125, 0.375, 0.375, 0.125], atol=1e-15)

    def test_right_boundary_row(self):
        kv = make_knots(0.0, 1.0, 7, 3)
        row = eval_basis(kv, [1.0]).values[0]
        np.testing.assert_allclose(row, [0, 0, 0, 0, 0, 0, 1], atol=1e-15)

    def test_partition_of_unity_and_derivative_null_sum(self):
        kv = make_knots(-1.0, 4.0, 12, 3)
        pts = np.random.default_rng(0).uniform(-1, 4, 200)
        B = eval_basis(kv, pts)
        Bp = eval_basis(kv, pts, 1)
        np.testing.assert_allclose(B.values.sum(axis=1), 1.0, atol=1e-10)
        np.testing.assert_allclose(Bp.values.sum(axis=1), 0.0, atol=1e-10)
        assert np.all(B.values >= 0)
        assert not B.is_derivative and Bp.is_derivative

    def test_derivative_matches_finite_differences(self):
        kv = make_knots(0.0, 2.0, 9, 3)
        pts = np.random.default_rng(1).uniform(0.01, 1.99, 100)
        step = 1e-6
        analytic = eval_basis(kv, pts, 1).values
        fd = (eval_basis(kv, pts + step).values - eval_basis(kv, pts - step).values) / (2 * step)
        scale = np.maximum(np.abs(analytic), 1.0)
        assert np.max(np.abs(analytic - fd) / scale) < 1e-4

    def test_values_and_derivatives_match_scipy(self):
        kv = make_knots(-0.5, 1.5, 11, 3)
        pts = np.linspace(-0.5, 1.49, 73)
        ours = eval_basis(kv, pts).values
        ours_d = eval_basis(kv, pts, 1).values
        for d in range(kv.num_basis):
            coef = np.zeros(kv.num_basis)
            coef[d] = 1.0
            ref = BSpline(kv.knots, coef, 3)
            np.testing.assert_allclose(ours[:, d], ref(pts), atol=1e-12)
            np.testing.assert_allclose(ours_d[:, d], ref.derivative()(pts), atol=1e-10)

    def test_out_of_domain_points_clamped_with_warning(self):
        kv = make_knots(0.0, 1.0, 5, 3)
        with pytest.warns(UserWarning, match="clamped"):
            B = eval_basis(kv, [-0.3, 0.5, 2.0])
        np.testing.assert_allclose(B.values[0], eval_basis(kv, [0.0]).values[0])
        np.testing.assert_allclose(B.values[2], eval_basis(kv, [1.0]).values[0])

    def test_second_derivative_order_rejected(self):
        kv = make_knots(0.0, 1.0, 5, 3)
        with pytest.raises(ValueError):
            eval_basis(kv, [0.5], deriv_order=2)


class TestRowKronecker:
    def test_singleton_second_factor_reduces_to_first(self):
        A = BasisMatrix(np.array([[1.0, 2.0], [3.0, 4.0]]))
        B = BasisMatrix(np.array([[2.0], [0.5]]))
        out = row_kronecker(A, B).values
        np.testing.assert_allclose(out, [[2, 4], [1.5, 2]])

    def test_kronecker_definition_row(self):
        A = BasisMatrix(np.array([[1.0, 2.0]]))
        B = BasisMatrix(np.array([[3.0, 4.0]]))
        np.testing.assert_allclose(row_kronecker(A, B).values, [[3, 4, 6, 8]])

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="row count"):
            row_kronecker(BasisMatrix(np.ones((2, 2))), BasisMatrix(np.ones((3, 1))))

    def test_derivative_flag_propagates(self):
        A = BasisMatrix(np.ones((2, 2)), is_derivative=True)
        B = BasisMatrix(np.ones((2, 3)))
        assert row_kronecker(A, B).is_derivative

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=5), st.integers(min_value=1, max_value=5),
           st.integers(min_value=0, max_value=10**6))
    def test_matches_bilinear_form(self, d1, d2, seed):
        # (a kron b) . vec(G) == a' G b for row-major vec in our column order
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(3, d1))
        b = rng.normal(size=(3, d2))
        G = rng.normal(size=(d1, d2))
        out = row_kronecker(BasisMatrix(a), BasisMatrix(b)).values @ G.ravel()
        expected = np.einsum("ni,ij,nj->n", a, G, b)
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestCenterColumns:
    def test_constant_column_becomes_zero(self):
        B = BasisMatrix(np.ones((3, 1)))
        centered, means = center_columns(B)
        np.testing.assert_allclose(centered.values, 0.0)
        np.testing.assert_allclose(means, [1.0])

    def test_already_centered_unchanged(self):
        vals = np.array([[1.0], [-1.0]])
        centered, means = center_columns(BasisMatrix(vals))
        np.testing.assert_allclose(centered.values, vals)
        np.testing.assert_allclose(means, [0.0])

    def test_column_means_exactly_zero(self):
        rng = np.random.default_rng(2)
        vals = rng.normal(size=(40, 6)) + 3.0
        centered, _ = center_columns(BasisMatrix(vals))
        np.testing.assert_allclose(centered.values.mean(axis=0), 0.0, atol=40 * 1e-12)

    def test_prediction_rows_use_stored_training_means(self):
        rng = np.random.default_rng(3)
        train = BasisMatrix(rng.normal(size=(30, 4)))
        _, means = center_columns(train)
        new = BasisMatrix(rng.normal(size=(5, 4)) + 10.0)
        shifted = apply_centering(new, means)
        np.testing.assert_allclose(shifted.values, new.values - means)
        assert not np.allclose(shifted.values.mean(axis=0), 0.0)

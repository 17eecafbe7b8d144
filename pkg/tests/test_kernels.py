import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isingfed.kernels import (
    BinaryDataset,
    ParameterMatrix,
    conditional_prob,
    local_field,
    per_sample_grad,
    pseudo_nll,
    pseudo_nll_grad,
)

from conftest import finite_diff_grad, random_dataset, random_theta


class TestParameterMatrix:
    def test_symmetrizes_on_construction(self, rng):
        m = rng.normal(size=(4, 4))
        theta = ParameterMatrix(m)
        assert np.array_equal(theta.values, theta.values.T)
        assert np.allclose(theta.values, 0.5 * (m + m.T))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            ParameterMatrix(np.zeros((2, 3)))

    def test_rejects_non_finite(self):
        m = np.zeros((2, 2))
        m[0, 1] = np.inf
        with pytest.raises(ValueError):
            ParameterMatrix(m)


class TestBinaryDataset:
    def test_rejects_zero_entries(self):
        with pytest.raises(ValueError):
            BinaryDataset(np.array([[1, 0]]))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            BinaryDataset(np.zeros((0, 3)))

    def test_stores_int8(self, rng):
        data = random_dataset(rng, 5, 3)
        assert data.values.dtype == np.int8
        assert data.n == 5 and data.p == 3


class TestLocalField:
    def test_zero_matrix(self):
        assert local_field(ParameterMatrix.zeros(3), [1, -1, 1], 1) == 0.0

    def test_two_feature_hand_value(self):
        theta = ParameterMatrix(np.array([[0.1, 0.3], [0.3, 0.0]]))
        assert local_field(theta, [1, -1], 0) == pytest.approx(-0.4, abs=1e-15)

    def test_single_feature(self):
        theta = ParameterMatrix(np.array([[0.5]]))
        assert local_field(theta, [1], 0) == pytest.approx(1.0, abs=1e-15)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            local_field(ParameterMatrix.zeros(2), [1, 1], 2)


class TestConditionalProb:
    def test_half_at_zero(self, rng):
        theta = ParameterMatrix.zeros(4)
        x = random_dataset(rng, 1, 4).values[0]
        for j in range(4):
            assert conditional_prob(theta, x, j) == 0.5

    def test_single_feature_value(self):
        theta = ParameterMatrix(np.array([[0.5]]))
        assert conditional_prob(theta, [1], 0) == pytest.approx(
            math.e / (math.e + 1.0), abs=1e-12
        )

    def test_flip_complements(self, rng):
        theta = random_theta(rng, 5)
        x = random_dataset(rng, 1, 5).values[0]
        for j in range(5):
            flipped = x.copy()
            flipped[j] = -flipped[j]
            total = conditional_prob(theta, x, j) + conditional_prob(theta, flipped, j)
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_stable_at_large_fields(self):
        theta = ParameterMatrix(np.array([[300.0]]))
        assert conditional_prob(theta, [1], 0) == pytest.approx(1.0)
        assert conditional_prob(theta, [-1], 0) == pytest.approx(0.0, abs=1e-200)


class TestPseudoNll:
    def test_zero_matrix_is_p_log2(self, rng):
        data = random_dataset(rng, 7, 50)
        assert pseudo_nll(ParameterMatrix.zeros(50), data) == pytest.approx(
            50 * math.log(2), abs=1e-12
        )

    def test_zero_matrix_p1(self, rng):
        data = random_dataset(rng, 3, 1)
        assert pseudo_nll(ParameterMatrix.zeros(1), data) == pytest.approx(math.log(2))

    def test_two_term_hand_sum(self):
        theta = ParameterMatrix(np.array([[0.0, 0.2], [0.2, 0.0]]))
        data = BinaryDataset(np.array([[1, 1]]))
        # both coordinates see Q = 0.4; loss = 2 * softplus(-0.4)
        expected = 2.0 * math.log1p(math.exp(-0.4))
        assert pseudo_nll(theta, data) == pytest.approx(expected, abs=1e-14)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            pseudo_nll(ParameterMatrix.zeros(3), random_dataset(rng, 2, 4))

    def test_finite_on_random_inputs(self, rng):
        v = pseudo_nll(random_theta(rng, 8), random_dataset(rng, 30, 8))
        assert math.isfinite(v)


class TestPerSampleGrad:
    def test_zero_matrix_fixture(self):
        w = per_sample_grad(ParameterMatrix.zeros(2), [1, -1])
        assert np.allclose(w, [[-1.0, 2.0], [2.0, 1.0]], atol=1e-15)

    def test_all_plus_ones(self):
        w = per_sample_grad(ParameterMatrix.zeros(3), [1, 1, 1])
        expected = np.full((3, 3), -2.0)
        np.fill_diagonal(expected, -1.0)
        assert np.allclose(w, expected, atol=1e-15)

    def test_matches_finite_differences(self, rng):
        theta = random_theta(rng, 6)
        x = random_dataset(rng, 1, 6)
        w = per_sample_grad(theta, x.values[0])
        fd = finite_diff_grad(theta, x)
        np.testing.assert_allclose(w, fd, rtol=1e-6, atol=1e-8)

    def test_exactly_symmetric(self, rng):
        w = per_sample_grad(random_theta(rng, 7), random_dataset(rng, 1, 7).values[0])
        assert np.array_equal(w, w.T)


class TestPseudoNllGrad:
    def test_single_sample_equals_per_sample(self, rng):
        theta = random_theta(rng, 5)
        data = random_dataset(rng, 1, 5)
        np.testing.assert_array_equal(
            pseudo_nll_grad(theta, data), per_sample_grad(theta, data.values[0])
        )

    def test_duplication_invariance(self, rng):
        theta = random_theta(rng, 4)
        data = random_dataset(rng, 6, 4)
        doubled = BinaryDataset(np.vstack([data.values, data.values]))
        np.testing.assert_allclose(
            pseudo_nll_grad(theta, data), pseudo_nll_grad(theta, doubled), atol=1e-14
        )

    def test_matches_finite_differences(self, rng):
        theta = random_theta(rng, 8)
        data = random_dataset(rng, 20, 8)
        fd = finite_diff_grad(theta, data)
        np.testing.assert_allclose(pseudo_nll_grad(theta, data), fd, rtol=1e-6, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    p=st.integers(2, 10),
    n=st.integers(1, 50),
)
def test_gradient_consistency_property(seed, p, n):
    rng = np.random.default_rng(seed)
    theta = random_theta(rng, p)
    data = random_dataset(rng, n, p)
    fd = finite_diff_grad(theta, data)
    grad = pseudo_nll_grad(theta, data)
    np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-8)
    assert np.array_equal(grad, grad.T)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isingfed.spectral import (
    SpectralOp,
    apply_spectral,
    factorize_rank_d,
    operator_norm,
    procrustes_distance,
)

from conftest import random_theta


def _symmetric(rng, p, scale=1.0):
    m = rng.normal(scale=scale, size=(p, p))
    return 0.5 * (m + m.T)


class TestApplySpectral:
    def test_soft_on_diagonal(self):
        out = apply_spectral(np.diag([3.0, 1.0, 0.5]), SpectralOp.soft(1.0))
        assert np.allclose(out, np.diag([2.0, 0.0, 0.0]), atol=1e-12)

    def test_hard_drops_sigma_equal_tau(self):
        out = apply_spectral(np.diag([3.0, 1.0, 0.5]), SpectralOp.hard(1.0))
        assert np.allclose(out, np.diag([3.0, 0.0, 0.0]), atol=1e-12)

    def test_psd_clamps_negative(self):
        out = apply_spectral(np.diag([2.0, -1.0]), SpectralOp.psd())
        assert np.allclose(out, np.diag([2.0, 0.0]), atol=1e-12)

    def test_topd_keeps_largest_magnitudes(self):
        out = apply_spectral(np.diag([1.0, -5.0, 2.0]), SpectralOp.top_d(2))
        assert np.allclose(out, np.diag([0.0, -5.0, 2.0]), atol=1e-12)

    def test_soft_shrinks_negative_eigenvalues_toward_zero(self):
        out = apply_spectral(np.diag([-3.0, 0.2]), SpectralOp.soft(1.0))
        assert np.allclose(out, np.diag([-2.0, 0.0]), atol=1e-12)

    @pytest.mark.parametrize(
        "op", [SpectralOp.hard(0.3), SpectralOp.top_d(3), SpectralOp.psd()]
    )
    def test_idempotent_ops(self, rng, op):
        m = _symmetric(rng, 6)
        once = apply_spectral(m, op)
        twice = apply_spectral(once, op)
        assert np.max(np.abs(once - twice)) < 1e-12

    def test_soft_not_idempotent(self):
        once = apply_spectral(np.diag([3.0]), SpectralOp.soft(1.0))
        twice = apply_spectral(once, SpectralOp.soft(1.0))
        assert once[0, 0] == pytest.approx(2.0)
        assert twice[0, 0] == pytest.approx(1.0)

    def test_preserves_symmetry(self, rng):
        m = _symmetric(rng, 7)
        for op in (SpectralOp.soft(0.2), SpectralOp.hard(0.2), SpectralOp.top_d(2), SpectralOp.psd()):
            out = apply_spectral(m, op)
            assert np.max(np.abs(out - out.T)) < 1e-12


class TestFactorizeRankD:
    def test_positive_diagonal(self):
        pair, signs = factorize_rank_d(np.diag([4.0, 1.0, 0.0]), 1)
        assert np.allclose(np.abs(pair.u[:, 0]), [2.0, 0.0, 0.0], atol=1e-12)
        assert np.array_equal(pair.u, pair.v)
        assert signs.tolist() == [1.0]

    def test_negative_eigenvalue_sign_flip(self):
        pair, signs = factorize_rank_d(np.array([[-4.0]]), 1)
        assert pair.u[0, 0] == pytest.approx(2.0)
        assert pair.v[0, 0] == pytest.approx(-2.0)
        assert signs.tolist() == [-1.0]
        assert pair.product()[0, 0] == pytest.approx(-4.0)

    def test_best_rank_d_approximation(self, rng):
        m = _symmetric(rng, 8)
        pair, _ = factorize_rank_d(m, 3)
        w, v = np.linalg.eigh(m)
        order = np.argsort(-np.abs(w))[:3]
        best = (v[:, order] * w[order]) @ v[:, order].T
        assert np.linalg.norm(pair.product() - best) < 1e-10

    def test_balanced_factors(self, rng):
        pair, _ = factorize_rank_d(_symmetric(rng, 9), 4)
        assert np.max(np.abs(pair.u.T @ pair.u - pair.v.T @ pair.v)) < 1e-10

    def test_rejects_asymmetric(self, rng):
        with pytest.raises(ValueError):
            factorize_rank_d(rng.normal(size=(5, 5)), 2)


class TestProcrustesDistance:
    def test_zero_for_identical(self, rng):
        z = rng.normal(size=(12, 3))
        assert procrustes_distance(z, z) < 1e-12

    def test_zero_for_column_sign_flip(self, rng):
        z = rng.normal(size=(10, 2))
        assert procrustes_distance(z, -z) < 1e-12

    def test_zero_under_orthogonal_rotation(self, rng):
        z = rng.normal(size=(14, 3))
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        assert procrustes_distance(z, z @ q) < 1e-12

    def test_matches_angle_grid_oracle(self, rng):
        z1 = rng.normal(size=(8, 2))
        z2 = rng.normal(size=(8, 2))
        m = z2.T @ z1
        angles = np.arange(0.0, 2 * np.pi, 1e-4)
        base = float(np.sum(z1 * z1) + np.sum(z2 * z2))
        # rotations: O = [[c, -s], [s, c]]; reflections: O = [[c, s], [s, -c]]
        rot = np.cos(angles) * (m[0, 0] + m[1, 1]) + np.sin(angles) * (m[1, 0] - m[0, 1])
        ref = np.cos(angles) * (m[0, 0] - m[1, 1]) + np.sin(angles) * (m[1, 0] + m[0, 1])
        oracle = base - 2.0 * max(rot.max(), ref.max())
        assert procrustes_distance(z1, z2) == pytest.approx(oracle, abs=1e-6)

    def test_symmetry(self, rng):
        z1 = rng.normal(size=(9, 3))
        z2 = rng.normal(size=(9, 3))
        a = procrustes_distance(z1, z2)
        b = procrustes_distance(z2, z1)
        assert a == pytest.approx(b, abs=1e-10)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            procrustes_distance(rng.normal(size=(4, 2)), rng.normal(size=(4, 3)))


class TestOperatorNorm:
    def test_identity(self):
        assert operator_norm(np.eye(5)) == pytest.approx(1.0)

    def test_diagonal(self):
        assert operator_norm(np.diag([3.0, -7.0])) == pytest.approx(7.0)

    def test_matches_power_iteration(self, rng):
        m = rng.normal(size=(6, 6))
        v = rng.normal(size=6)
        for _ in range(2000):
            v = m.T @ (m @ v)
            v /= np.linalg.norm(v)
        oracle = float(np.linalg.norm(m @ v))
        assert operator_norm(m) == pytest.approx(oracle, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(2, 8), d=st.integers(1, 4))
def test_factor_pair_stacking_property(seed, p, d):
    rng = np.random.default_rng(seed)
    d = min(d, p)
    pair, _ = factorize_rank_d(random_theta(rng, p).values, d)
    stacked = pair.stacked()
    assert stacked.shape == (2 * p, d)
    assert np.array_equal(stacked[:p], pair.u)
    assert np.array_equal(stacked[p:], pair.v)
    assert procrustes_distance(stacked, stacked) < 1e-12

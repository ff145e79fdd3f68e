import numpy as np
import pytest

from telerisk.errors import BadWeights, SeriesTooShort, ZeroVarianceSignal
from telerisk.wavelet import (
    AGGREGATION_RULES,
    aggregate,
    d4_filters,
    filter_width,
    haar_filters,
    modwt_forward,
    modwt_inverse,
    select_depth,
    variance_contributions,
)

SQRT2 = np.sqrt(2.0)


class TestFilters:
    def test_d4_closed_forms(self):
        fp = d4_filters()
        s3 = np.sqrt(3.0)
        expected = np.array([1 - s3, -3 + s3, 3 + s3, -1 - s3]) / (4 * SQRT2)
        np.testing.assert_allclose(fp.wavelet, expected, rtol=0, atol=1e-15)
        assert fp.wavelet[0] == pytest.approx(-0.12940952, abs=1e-8)
        assert fp.wavelet[3] == pytest.approx(-0.48296291, abs=1e-8)

    @pytest.mark.parametrize("fp", [d4_filters(), haar_filters()])
    def test_filter_identities(self, fp):
        h = np.array(fp.wavelet)
        g = np.array(fp.scaling)
        L = len(h)
        assert abs(h.sum()) < 1e-12
        assert abs(np.sum(h * h) - 1.0) < 1e-12
        assert abs(np.sum(h * g)) < 1e-12
        for ell in range(L):
            assert g[ell] == pytest.approx((-1) ** (ell + 1) * h[L - 1 - ell], abs=1e-15)

    def test_scaling_sums_to_sqrt2(self):
        # sum of the four closed forms: ((1+s3)+(3+s3)+(3-s3)+(1-s3))/(4*sqrt2) = sqrt2
        g = np.array(d4_filters().scaling)
        assert g.sum() == pytest.approx(SQRT2, abs=1e-12)

    def test_width_formula(self):
        assert filter_width(1) == 4
        assert filter_width(6) == 190
        assert filter_width(3, base_width=2) == 8


class TestForward:
    def test_constant_series(self):
        x = np.full(64, 3.7)
        d = modwt_forward(x, 3)
        assert np.max(np.abs(d.wavelet_coeffs)) < 1e-12
        np.testing.assert_allclose(d.scaling_coeffs, 3.7, atol=1e-12)

    def test_unit_impulse_level1(self):
        x = np.zeros(16)
        x[0] = 1.0
        d = modwt_forward(x, 1)
        w1 = d.wavelet_coeffs[0]
        h_tilde = np.array(d4_filters().wavelet) / SQRT2
        nonzero = np.nonzero(np.abs(w1) > 1e-15)[0]
        assert list(nonzero) == [0, 1, 2, 3]
        np.testing.assert_allclose(w1[:4], h_tilde, atol=1e-15)

    def test_energy_identity_random(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=512)
        d = modwt_forward(x, 6)
        lhs = np.sum(x ** 2)
        rhs = np.sum(d.wavelet_coeffs ** 2) + np.sum(d.scaling_coeffs ** 2)
        assert abs(lhs - rhs) / lhs < 1e-9

    def test_energy_telescopes_per_stage(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=300)
        prev = np.sum(x ** 2)
        v = x
        for j in range(1, 5):
            d = modwt_forward(x, j)
            w_j = np.sum(d.wavelet_coeffs[j - 1] ** 2)
            v_j = np.sum(d.scaling_coeffs ** 2)
            assert abs(w_j + v_j - prev) / prev < 1e-9
            prev = v_j

    def test_too_short_raises(self):
        with pytest.raises(SeriesTooShort):
            modwt_forward(np.zeros(100), 6)  # needs 190

    def test_shift_equivariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=256)
        k = 37
        d0 = modwt_forward(x, 4)
        d1 = modwt_forward(np.roll(x, k), 4)
        for j in range(4):
            np.testing.assert_allclose(
                d1.wavelet_coeffs[j], np.roll(d0.wavelet_coeffs[j], k), atol=1e-12)
        np.testing.assert_allclose(
            d1.scaling_coeffs, np.roll(d0.scaling_coeffs, k), atol=1e-12)


class TestInverse:
    @pytest.mark.parametrize("t,j", [(100, 3), (190, 6), (257, 4), (2048, 6)])
    def test_roundtrip(self, t, j):
        rng = np.random.default_rng(t + j)
        x = rng.normal(size=t)
        xr = modwt_inverse(modwt_forward(x, j))
        assert np.max(np.abs(xr - x)) <= 1e-9 * np.max(np.abs(x))

    def test_all_zero(self):
        d = modwt_forward(np.zeros(32), 2)
        assert np.max(np.abs(modwt_inverse(d))) == 0.0

    def test_smooth_plus_details_reconstructs(self):
        # additive multiresolution: per-level details and the smooth sum to x;
        # the smooth's energy is bounded by the scaling energy (redundant
        # transform: single-subband synthesis is norm-contracting)
        rng = np.random.default_rng(11)
        x = rng.normal(size=400)
        d = modwt_forward(x, 3)
        v_energy = np.sum(d.scaling_coeffs ** 2)
        parts = []
        for j in range(3):
            dj = modwt_forward(x, 3)
            dj.wavelet_coeffs = np.zeros_like(dj.wavelet_coeffs)
            dj.wavelet_coeffs[j] = d.wavelet_coeffs[j]
            dj.scaling_coeffs = np.zeros_like(dj.scaling_coeffs)
            parts.append(modwt_inverse(dj))
        ds = modwt_forward(x, 3)
        ds.wavelet_coeffs = np.zeros_like(ds.wavelet_coeffs)
        smooth = modwt_inverse(ds)
        np.testing.assert_allclose(sum(parts) + smooth, x, atol=1e-10)
        assert np.sum(smooth ** 2) <= v_energy * (1 + 1e-9)

    def test_haar_roundtrip(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=128)
        d = modwt_forward(x, 3, filters=haar_filters())
        xr = modwt_inverse(d)
        assert np.max(np.abs(xr - x)) <= 1e-9 * np.max(np.abs(x))


class TestVarianceContributions:
    def test_fine_scale_signal_dominated_by_level1(self):
        # synthesize a signal carried almost entirely by the finest level;
        # adjacent-scale bandpass overlap leaks a little into level 2
        t = 256
        d = modwt_forward(np.zeros(t), 4)
        rng = np.random.default_rng(9)
        d.wavelet_coeffs[0] = rng.normal(size=t)
        x = modwt_inverse(d)
        rho = variance_contributions(x, modwt_forward(x, 4))
        assert rho[0] > 0.8
        assert rho[0] + rho[1] > 0.95
        assert np.all(rho[2:] < 0.02)

    def test_constant_raises(self):
        x = np.full(64, 2.0)
        d = modwt_forward(x, 2)
        with pytest.raises(ZeroVarianceSignal):
            variance_contributions(x, d)

    def test_shares_are_nonnegative_and_account_for_variance(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=500)
        d = modwt_forward(x, 5)
        rho = variance_contributions(x, d)
        assert np.all(rho >= 0)
        scaling_share = np.sum(d.scaling_coeffs ** 2) / x.size / np.var(x)
        total = rho.sum() + scaling_share
        expected = np.mean(x ** 2) / np.var(x)
        assert total == pytest.approx(expected, rel=1e-9)


class TestSelectDepth:
    def test_first_drop(self):
        assert select_depth([0.5, 0.3, 0.15, 0.01, 0.005], 0.2) == 3

    def test_slow_decay_falls_back_to_cap(self):
        rho = [0.5 * 0.9 ** j for j in range(12)]
        assert select_depth(rho, 0.0, cap=10) == 10

    def test_cap_defaults_to_table_length(self):
        assert select_depth([0.5, 0.45, 0.4], 0.0) == 3


class TestAggregate:
    def _decomp_two_levels(self, w1, w2):
        t = len(w1)
        d = modwt_forward(np.zeros(t), 2)
        d.wavelet_coeffs[0] = np.asarray(w1, dtype=float)
        d.wavelet_coeffs[1] = np.asarray(w2, dtype=float)
        return d

    def test_rule_arithmetic(self):
        d = self._decomp_two_levels([-0.3] * 32, [0.2] * 32)
        assert aggregate(d, "signed_max_abs", levels=[1, 2]).values[0] == pytest.approx(-0.3)
        assert aggregate(d, "max_abs", levels=[1, 2]).values[0] == pytest.approx(0.3)
        assert aggregate(d, "average_abs", levels=[1, 2]).values[0] == pytest.approx(0.25)

    def test_tie_prefers_lowest_level(self):
        d = self._decomp_two_levels([-0.1] * 32, [0.1] * 32)
        out = aggregate(d, "signed_max_abs", levels=[1, 2])
        assert np.all(out.values == -0.1)

    def test_single_level_matches_coefficients(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=64)
        d = modwt_forward(x, 3)
        out = aggregate(d, "single_level", levels=[1, 2, 3], level=2)
        np.testing.assert_array_equal(out.values, d.wavelet_coeffs[1])

    def test_weighted(self):
        d = self._decomp_two_levels([-0.4] * 32, [0.2] * 32)
        out = aggregate(d, "weighted_abs", levels=[1, 2], weights=[0.25, 0.75])
        assert out.values[0] == pytest.approx(0.25 * 0.4 + 0.75 * 0.2)

    def test_bad_weights(self):
        d = self._decomp_two_levels([0.1] * 32, [0.1] * 32)
        with pytest.raises(BadWeights):
            aggregate(d, "weighted_abs", levels=[1, 2], weights=[0.5, 0.6])

    def test_signed_max_abs_magnitude_invariant(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=300)
        d = modwt_forward(x, 4)
        out = aggregate(d, "signed_max_abs")
        np.testing.assert_allclose(
            np.abs(out.values), np.max(np.abs(d.wavelet_coeffs), axis=0), atol=0)

    def test_unsigned_rules_nonnegative(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=300)
        d = modwt_forward(x, 3)
        for rule in ("max_abs", "average_abs"):
            assert np.all(aggregate(d, rule).values >= 0)

    def test_rules_registry(self):
        assert set(AGGREGATION_RULES) == {
            "signed_max_abs", "max_abs", "average_abs", "weighted_abs", "single_level"}

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nuqcs.compander import GaussianSource, design_quantizer, qpdf
from nuqcs.plevels import INF
from nuqcs.wnorm import (
    DC,
    DPC,
    PROP4_CONSTANT,
    QC,
    WeightedConstraint,
    check_consistency,
    dpc_constraint,
    dpc_table,
    dpc_weights,
    epsilon_dc,
    epsilon_p,
    error_ratio_diagnostic,
    gaussian_lpw_expectation,
    hra_weighting_dynamic,
    lpw_expectation_bounds,
    nu_p,
    transition_threshold,
    weighted_lp_norm,
    weighting_dynamic,
)

UNIT = GaussianSource(1.0)

vectors = hnp.arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e3, 1e3))


class TestWeightedNorm:
    def test_examples(self):
        assert weighted_lp_norm([1, -1], [1, 1], 2) == pytest.approx(math.sqrt(2), rel=1e-15)
        assert weighted_lp_norm([1, 2], [2, 1], INF) == 2.0
        assert weighted_lp_norm([1, 1, 1], [1, 2, 3], 3) == pytest.approx(36 ** (1 / 3), rel=1e-15)
        assert weighted_lp_norm([0, 0], [1, 1], 5) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            weighted_lp_norm([1, 2], [1, 2, 3], 2)

    def test_rejects_small_p(self):
        with pytest.raises(ValueError):
            weighted_lp_norm([1.0], [1.0], 0.5)

    def test_no_overflow_at_large_p(self):
        assert weighted_lp_norm([1e10, 1e10], [1, 1], 40) == pytest.approx(1e10 * 2 ** (1 / 40))

    @given(vectors, st.sampled_from([1, 2, 3, 7, INF]))
    def test_unit_weights_match_plain_norm(self, v, p):
        # mpmath avoids the underflow of squaring tiny entries
        if p == INF:
            expected = float(max(abs(x) for x in v))
        else:
            expected = float(mp.fsum(abs(mp.mpf(x)) ** p for x in v) ** (mp.mpf(1) / p))
        assert weighted_lp_norm(v, np.ones_like(v), p) == pytest.approx(expected, rel=1e-12, abs=0)

    @given(st.integers(1, 10), st.sampled_from([2, 3, 5, INF]), st.floats(-50, 50), st.integers(0, 2 ** 31))
    def test_homogeneity_and_triangle(self, m, p, gamma, seed):
        rng = np.random.default_rng(seed)
        u, v = rng.standard_normal((2, m))
        w = rng.uniform(0.1, 3.0, m)
        assert weighted_lp_norm(gamma * u, w, p) == pytest.approx(abs(gamma) * weighted_lp_norm(u, w, p), rel=1e-12)
        assert weighted_lp_norm(u + v, w, p) <= weighted_lp_norm(u, w, p) + weighted_lp_norm(v, w, p) + 1e-12

    def test_large_p_tends_to_max(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            m = int(rng.integers(1, 33))
            v = rng.standard_normal(m)
            w = rng.uniform(0.5, 2.0, m)
            assert weighted_lp_norm(v, w, 64) == pytest.approx(weighted_lp_norm(v, w, INF), rel=0.02)


class TestWeights:
    def test_p2_is_ones(self):
        assert np.array_equal(dpc_weights([0.1, -3.0, 2.0], 2, UNIT), np.ones(3))

    def test_pinf_uses_qpdf(self):
        lev = np.array([-1.0, 0.2, 3.0])
        assert np.array_equal(dpc_weights(lev, INF, UNIT), qpdf(lev, UNIT))

    def test_p4_square_root(self):
        g = float(qpdf(0.7, UNIT))
        assert dpc_weights([0.7], 4, UNIT)[0] == pytest.approx(math.sqrt(g), rel=1e-15)

    def test_rejects_small_p(self):
        with pytest.raises(ValueError):
            dpc_weights([0.0], 1.5, UNIT)


class TestRadius:
    def test_p2_is_panter_dite_radius(self):
        for M, B, s in ((1, 1, 1.0), (1024, 4, 1.0), (77, 6, 2.5)):
            src = GaussianSource(s)
            assert epsilon_p(M, B, 2, src) == pytest.approx(epsilon_dc(M, B, src), rel=1e-14)
            assert epsilon_dc(M, B, src) ** 2 == pytest.approx(M * math.sqrt(3) * math.pi / 2 * s * s * 4.0 ** -B)

    def test_pinf(self):
        assert epsilon_p(1024, 4, INF, UNIT) == 0.03125

    def test_closed_form_independent_arithmetic(self):
        expected = (mp.mpf(1024) * mp.mpf(2) ** -12 / (5 * 16) * 2 * mp.pi * mp.mpf(3) ** 1.5) ** (mp.mpf(1) / 4)
        assert epsilon_p(1024, 3, 4, UNIT) == pytest.approx(float(expected), rel=1e-14)
        assert epsilon_p(1024, 3, 4, UNIT) == pytest.approx(0.5652, abs=1e-4)

    def test_large_p_finite(self):
        assert math.isfinite(epsilon_p(2 ** 20, 16, 200, UNIT))

    def test_monte_carlo_dpc_ratio(self):
        q = design_quantizer(4, UNIT)
        table = dpc_table(4, q)
        ratios = []
        rng = np.random.default_rng(11)
        for _ in range(20):
            z = rng.standard_normal(4096)
            c = dpc_constraint(q.bin_index(z), table)
            ratios.append(c.residual(z) / c.radius)
        assert 0.9 <= float(np.mean(ratios)) <= 1.1

    def test_transition_threshold(self):
        assert transition_threshold(8, UNIT) == pytest.approx(math.sqrt(6 * 0.5 * math.log(2) * 8), rel=1e-15)
        with pytest.raises(ValueError):
            transition_threshold(8, UNIT, beta=1.0)


class TestConstraint:
    def test_validation(self):
        with pytest.raises(ValueError):
            WeightedConstraint(2, np.array([1.0, 0.0]), 1.0, np.zeros(2))
        with pytest.raises(ValueError):
            WeightedConstraint(2, np.ones(2), -1.0, np.zeros(2))
        with pytest.raises(ValueError):
            WeightedConstraint(2, np.ones(3), 1.0, np.zeros(2))
        with pytest.raises(ValueError):
            WeightedConstraint(2, np.ones(2), math.inf, np.zeros(2))

    def test_p2_constraint_has_unit_weights(self):
        q = design_quantizer(3, UNIT)
        c = dpc_constraint(np.array([1, 4, 8]), dpc_table(2, q))
        assert np.array_equal(c.weights, np.ones(3))
        assert np.array_equal(c.center, q.levels[[0, 3, 7]])

    def test_weights_stay_positive_in_far_tail(self):
        q = design_quantizer(3, GaussianSource(1e-3))
        c = dpc_constraint(np.array([1, 8]), dpc_table(INF, q))
        assert np.all(c.weights > 0)


class TestConsistency:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.q = design_quantizer(4, UNIT)
        self.Phi = rng.standard_normal((200, 40))
        x = np.zeros(40)
        x[[3, 17, 29]] = rng.standard_normal(3)
        self.x = x / np.linalg.norm(x)
        self.y = self.q.quantize(self.Phi @ self.x)[1]

    def test_true_signal_is_qc(self):
        res = check_consistency(self.x, self.Phi, self.y, QC, self.q)
        assert res.ok
        assert res.residual <= self.q.alpha / 2 + 1e-15

    def test_zero_estimate_dc_residual(self):
        res = check_consistency(np.zeros(40), self.Phi, self.y, DC, self.q)
        assert res.residual == pytest.approx(np.linalg.norm(self.y), rel=1e-15)
        assert res.radius == epsilon_dc(200, 4, UNIT)

    def test_d2c_is_dc(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = self.x + 0.05 * rng.standard_normal(40)
            a = check_consistency(x, self.Phi, self.y, DC, self.q)
            b = check_consistency(x, self.Phi, self.y, DPC, self.q, dpc_table(2, self.q))
            assert a.ok == b.ok
            assert a.residual == pytest.approx(b.residual, rel=1e-14)
            assert a.radius == pytest.approx(b.radius, rel=1e-14)

    def test_qc_detects_bin_change(self):
        x = self.x * 1.5
        assert not check_consistency(x, self.Phi, self.y, QC, self.q).ok

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            check_consistency(self.x, self.Phi, self.y[:-1], QC, self.q)

    def test_dpc_needs_table(self):
        with pytest.raises(ValueError):
            check_consistency(self.x, self.Phi, self.y, DPC, self.q)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            check_consistency(self.x, self.Phi, self.y, "XC", self.q)


class TestInfinityIsQC:
    """With w = G'(midpoint) and radius alpha/2 the p = inf ball approximates the observed bins."""

    B = 6

    def _interior(self, q):
        T = transition_threshold(self.B, UNIT)
        t = q.thresholds
        return np.flatnonzero((t[:-1] >= -T) & (t[1:] <= T)) + 1

    def test_hra_point_density(self):
        q = design_quantizer(self.B, UNIT)
        ks = self._interior(q)
        t = q.thresholds
        mids = 0.5 * (t[ks - 1] + t[ks])
        ratio = qpdf(mids, UNIT) * (t[ks] - t[ks - 1]) / q.alpha
        assert np.all(np.abs(ratio - 1) <= 0.05)

    def test_ball_matches_bins(self):
        q = design_quantizer(self.B, UNIT)
        table = dpc_table(INF, q)
        ks = self._interior(q)
        rng = np.random.default_rng(2)
        t = q.thresholds
        lo, hi = t[ks - 1], t[ks]
        c = dpc_constraint(ks, table)
        assert c.radius == q.alpha / 2
        inside = lo + rng.uniform(0, 1, len(ks)) * (hi - lo)
        assert c.contains(inside, slack=0.05)
        # every single coordinate pushed 10% of a bin outside breaks the ball
        for i in range(len(ks)):
            z = inside.copy()
            z[i] = hi[i] + 0.1 * (hi[i] - lo[i])
            assert not c.contains(z, slack=0.05)


class TestGaussianExpectation:
    def test_nu_p_against_mpmath(self):
        for p in (1, 2, 3, 4, 7, 15):
            moment = mp.quad(lambda t: abs(t) ** p * mp.npdf(t), [-mp.inf, 0, mp.inf])
            assert nu_p(p) == pytest.approx(float(moment ** (mp.mpf(1) / p)), rel=1e-13)
        assert nu_p(2) == pytest.approx(1.0, rel=1e-15)
        assert nu_p(4) == pytest.approx(3 ** 0.25, rel=1e-15)
        assert nu_p(4) == pytest.approx(1.31607, abs=1e-5)

    def test_unit_weights(self):
        assert gaussian_lpw_expectation(np.ones(100), 2) == pytest.approx(10.0, rel=1e-15)
        assert gaussian_lpw_expectation(np.ones(81), 4) == pytest.approx(3 ** 0.25 * 3, rel=1e-14)

    def test_rejects_infinite_p(self):
        with pytest.raises(ValueError):
            gaussian_lpw_expectation(np.ones(3), INF)

    def test_weighting_dynamic(self):
        assert weighting_dynamic(np.ones(10), 4) == pytest.approx(1.0)
        w = np.array([1.0, 2.0])
        assert weighting_dynamic(w, 2) == pytest.approx((2 / math.sqrt(2.5)) ** 2)
        assert hra_weighting_dynamic(2) == 1.0
        assert hra_weighting_dynamic(5) == pytest.approx(2 ** 0.2)

    @pytest.mark.parametrize("p", range(2, 9))
    def test_monte_carlo_sandwich(self, p):
        M = 1024
        q = design_quantizer(4, UNIT)
        table = dpc_table(p, q)
        rng = np.random.default_rng(100 + p)
        z = rng.standard_normal(M)
        w = dpc_weights(table.levels_for_bins(q.bin_index(z)), p, UNIT)
        lower, upper = lpw_expectation_bounds(w, p)
        norms = []
        for _ in range(10):
            xi = rng.standard_normal((1000, M))
            norms.append(np.sum(np.abs(w * xi) ** p, axis=1) ** (1 / p))
        norms = np.concatenate(norms)
        mean = float(norms.mean())
        se = float(norms.std(ddof=1) / math.sqrt(norms.size))
        assert lower - 3 * se <= mean <= upper + 3 * se
        assert lower <= upper


class TestErrorRatio:
    def test_decreasing_in_p(self):
        r = [error_ratio_diagnostic(2 ** 14, 4, p, UNIT).ratio for p in range(2, 11)]
        assert all(b < a for a, b in zip(r, r[1:]))

    @pytest.mark.parametrize("p", [2, 4, 8])
    def test_halves_per_bit(self, p):
        r = [error_ratio_diagnostic(2 ** 14, B, p, UNIT).ratio for B in (3, 4, 5, 6)]
        for a, b in zip(r, r[1:]):
            assert 0.45 <= b / a <= 0.55

    def test_p2_direct(self):
        M = 2 ** 12
        d = error_ratio_diagnostic(M, 4, 2, UNIT)
        assert d.ratio == pytest.approx(epsilon_dc(M, 4, UNIT) / (nu_p(2) * math.sqrt(M)), rel=0.01)

    def test_report_fields(self):
        d = error_ratio_diagnostic(2 ** 10, 5, 6, UNIT)
        assert d.bound == pytest.approx(PROP4_CONSTANT * 2.0 ** -5 * 7 ** (-1 / 12) / math.sqrt(7))
        assert PROP4_CONSTANT == pytest.approx(9 / 8 * math.sqrt(math.e * math.pi / 3))
        assert set(d.to_dict()) == {"M", "B", "p", "eps", "mu", "ratio", "asymptotic", "bound"}

    def test_asymptote_tracks_ratio(self):
        for p in (2, 4, 8):
            d = error_ratio_diagnostic(2 ** 14, 6, p, UNIT)
            assert d.ratio == pytest.approx(d.asymptotic, rel=0.05)

"""
Unit tests for the Volterra kernel and the residue process.
"""

import math

import numpy as np
import pytest

from fbm_polymer.environment import r_h
from fbm_polymer.errors import DomainError
from fbm_polymer.residue import (
    YCovQuery,
    decomposition_variance_check,
    isometry_integral,
    isometry_report,
    kernel_constant,
    kernel_value,
    lipschitz_ratio_scan,
    volterra_kernel,
    y_cov,
    y_cov_monte_carlo,
    y_gram,
    y_increment_moment,
)


class TestKernel:
    """Test K_H in closed form and by quadrature."""

    def test_brownian_kernel(self):
        """Test K = 1 at H=0.5."""
        assert kernel_constant(0.5) == 1.0
        assert volterra_kernel(2.0, 0.7, 0.5).value == 1.0
        assert kernel_value(2.0, 0.7, 0.5) == 1.0

    @pytest.mark.parametrize("h", [0.3, 0.75])
    @pytest.mark.parametrize("t,s", [(1.0, 0.25), (2.0, 1.5), (3.0, 0.1)])
    def test_quadrature_matches_closed_form(self, h, t, s):
        """Test volterra_kernel against kernel_value."""
        evaluation = volterra_kernel(t, s, h)
        assert evaluation.value == pytest.approx(kernel_value(t, s, h), rel=1e-7)
        assert evaluation.quadrature_error < 1e-6

    def test_outside_support(self):
        """Test a zero closed form outside 0 < s < t."""
        assert kernel_value(1.0, 1.5, 0.75) == 0.0
        assert kernel_value(1.0, 0.0, 0.3) == 0.0

    def test_quadrature_domain(self):
        """Test that s >= t raises DomainError."""
        with pytest.raises(DomainError):
            volterra_kernel(1.0, 1.0, 0.75)


class TestIsometry:
    """Test int K(t, r) K(s, r) dr = R_H(t, s)."""

    @pytest.mark.parametrize("h", [0.3, 0.75])
    def test_pairs(self, h):
        """Test a few (t, s) pairs within 1e-5 relative error."""
        for t, s in [(1.0, 1.0), (2.0, 0.5), (0.75, 1.5)]:
            target = r_h(t, s, h)
            assert isometry_integral(t, s, h) == pytest.approx(target, rel=1e-5)

    def test_brownian(self):
        """Test min(t, s) at H=0.5."""
        assert isometry_integral(2.0, 0.5, 0.5) == 0.5

    @pytest.mark.slow
    @pytest.mark.parametrize("h", [0.3, 0.75])
    def test_full_grid(self, h):
        """Test the 6x6 grid of times 0.5..3."""
        report = isometry_report([0.5, 1.0, 1.5, 2.0, 2.5, 3.0], h)
        assert report.satisfied


class TestResidueCovariance:
    """Test the covariance of the residue process."""

    def test_smooth_variance_closed_form(self):
        """Test E Y(n+k)^2 = 2 sqrt(n) / sqrt((n+k) k) at H=0.75."""
        query = YCovQuery(n=4, k=1, u=5.0, v=5.0)
        assert y_cov(query, 0.75) == pytest.approx(4.0 / math.sqrt(5.0), rel=1e-7)

    def test_symmetric(self, hurst):
        """Test Cov(Y(u), Y(v)) = Cov(Y(v), Y(u))."""
        forward = y_cov(YCovQuery(n=3, k=2, u=5.2, v=5.9), hurst)
        backward = y_cov(YCovQuery(n=3, k=2, u=5.9, v=5.2), hurst)
        assert forward == backward

    def test_gram_positive_semidefinite(self, hurst):
        """Test a PSD Gram on four window points."""
        gram = y_gram(4, 2, [6.0, 6.3, 6.6, 7.0], hurst)
        assert np.allclose(gram, gram.T)
        assert np.linalg.eigvalsh(gram).min() >= -1e-10 * np.abs(gram).max()

    def test_increment_moment_matches_covariances(self, hurst):
        """Test E(Y(u) - Y(v))^2 = Var Y(u) + Var Y(v) - 2 Cov."""
        u, v = 5.1, 5.8
        moment, _ = y_increment_moment(YCovQuery(n=3, k=2, u=u, v=v), hurst)
        expected = (
            y_cov(YCovQuery(n=3, k=2, u=u, v=u), hurst)
            + y_cov(YCovQuery(n=3, k=2, u=v, v=v), hurst)
            - 2 * y_cov(YCovQuery(n=3, k=2, u=u, v=v), hurst)
        )
        assert moment == pytest.approx(expected, rel=1e-6, abs=1e-12)

    def test_monte_carlo_oracle(self, stream):
        """Test the quadrature covariance against the discretized integral within 5 SE."""
        query = YCovQuery(n=8, k=2, u=10.2, v=10.7)
        record = y_cov_monte_carlo(query, 0.3, 20_000, stream)
        assert abs(record.value - y_cov(query, 0.3)) <= 5 * record.std_error

    def test_window_enforced(self):
        """Test that times outside [n+k, n+k+1] are rejected."""
        with pytest.raises(ValueError):
            YCovQuery(n=4, k=1, u=4.5, v=5.0)


class TestLipschitzScan:
    """Test the ratio scan."""

    def test_smooth_variance_ratio(self):
        """Test ratio2 = 2n / (n + k) at u = n + k for H=0.75."""
        scan = lipschitz_ratio_scan([4], 0.75, k_grid=[1], offsets=((0.0, 0.25),))
        assert len(scan.rows) == 1
        assert scan.rows[0].ratio2 == pytest.approx(1.6, rel=1e-7)

    def test_finite_maxima(self, hurst):
        """Test finite ratios on a small grid."""
        scan = lipschitz_ratio_scan([2, 4], hurst, k_grid=[1, 2])
        assert math.isfinite(scan.max_ratio1) and scan.max_ratio1 > 0
        assert math.isfinite(scan.max_ratio2) and scan.max_ratio2 > 0
        assert sorted(scan.max_by_n) == [2, 4]
        assert scan.refinement_change >= 0

    def test_coincident_points_skip_ratio1(self):
        """Test that u = v leaves ratio1 undefined."""
        scan = lipschitz_ratio_scan([2], 0.3, k_grid=[1], offsets=((0.5, 0.5),))
        assert scan.rows[0].ratio1 is None

    def test_refinement_stable_on_fixed_k(self):
        """Test that doubling n moves the smooth-regime maxima by at most 5%."""
        scan = lipschitz_ratio_scan([16, 32, 64], 0.75, k_grid=[1, 2])
        running1, running2 = scan.max_by_n[16]
        for n in (32, 64):
            ratio1, ratio2 = scan.max_by_n[n]
            assert ratio1 <= 1.05 * running1
            assert ratio2 <= 1.05 * running2
            running1, running2 = max(running1, ratio1), max(running2, ratio2)
        assert scan.refinement_change < 0.05

    @pytest.mark.slow
    def test_refinement_change_full_scan(self):
        """Test a relative change below 5% from n=16 to n=32 at H=0.75."""
        scan = lipschitz_ratio_scan([4, 8, 16, 32], 0.75)
        assert sorted(scan.max_by_n) == [4, 8, 16, 32]
        assert scan.refinement_change < 0.05


class TestDecomposition:
    """Test the residue/innovation variance split."""

    @pytest.mark.parametrize("h", [0.3, 0.5, 0.75])
    @pytest.mark.parametrize("l,t1,t2", [(2, 2.0, 3.0), (3, 3.25, 3.75), (5, 5.0, 5.5)])
    def test_split_adds_up(self, h, l, t1, t2):
        """Test lhs = residue + innovation within 1e-5."""
        report = decomposition_variance_check(l, t1, t2, h)
        assert report.satisfied
        assert report.details["lhs"] == pytest.approx((t2 - t1) ** (2 * h))

    def test_brownian_has_no_residue(self):
        """Test a zero residue at H=0.5."""
        report = decomposition_variance_check(2, 2.0, 2.5, 0.5)
        assert report.details["residue"] == 0.0
        assert report.details["innovation"] == 0.5

    def test_smooth_residue_positive(self):
        """Test a strictly positive residue at H=0.75."""
        report = decomposition_variance_check(3, 3.0, 4.0, 0.75)
        assert report.details["residue"] > 0.0

    @pytest.mark.parametrize("l,t1,t2", [(1, 1.0, 2.0), (2, 1.5, 2.5), (2, 2.5, 3.5), (2, 2.5, 2.5)])
    def test_bad_times(self, l, t1, t2):
        """Test that out-of-range times raise DomainError."""
        with pytest.raises(DomainError):
            decomposition_variance_check(l, t1, t2, 0.75)

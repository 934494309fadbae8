"""
Unit tests for the closed-form bounds and the first-return constructions.
"""

import math

import pytest

from fbm_polymer.bounds import (
    count_first_returns,
    emax_report,
    emax_two_gaussians,
    first_return_class,
    first_return_class_size,
    first_return_count,
    first_return_sign_paths,
    gaussian_max_bound,
    gaussian_max_report,
    lower_bound_envelope,
    lower_bound_experiment,
    lower_bound_horizon,
    poisson_tail_bound,
    poisson_tail_exact,
    poisson_tail_report,
    stirling_pm,
    stirling_report,
    truncation_gap_bound,
    u_hat_linear_bound,
    variance_envelope_report,
    variance_upper,
)
from fbm_polymer.errors import DomainError, EnumerationLimitError, GridError
from fbm_polymer.estimators import estimate_U


class TestPoissonTail:
    """Test the Chernoff-type Poisson tail bound."""

    def test_values(self):
        """Test lambda=1, n=2 against the exact tail."""
        assert poisson_tail_bound(1.0, 2) == pytest.approx(0.6796, abs=1e-4)
        assert poisson_tail_exact(1.0, 2) == pytest.approx(0.2642, abs=1e-4)

    @pytest.mark.parametrize("lam,n", [(0.5, 1), (2.0, 5), (7.5, 12), (30.0, 60)])
    def test_bound_dominates(self, lam, n):
        """Test that the bound holds on a grid of (lambda, n)."""
        report = poisson_tail_report(lam, n)
        assert report.satisfied
        assert report.margin >= 0

    def test_needs_n_above_lambda(self):
        """Test that n <= lambda raises DomainError."""
        with pytest.raises(DomainError):
            poisson_tail_bound(3.0, 3)


class TestVarianceBounds:
    """Test the variance envelope and the linear free-energy bound."""

    def test_rough_envelope(self):
        """Test (N+1)^(1-2H) t^2H at H=0.3, N=3, t=2."""
        assert variance_upper(2.0, 3, 0.3) == pytest.approx(2.639, abs=1e-3)

    def test_smooth_envelope(self):
        """Test that H > 1/2 ignores the jump count."""
        assert variance_upper(2.0, 7, 0.75) == pytest.approx(2**1.5)

    def test_envelope_holds_on_sampled_paths(self, stream, hurst):
        """Test that no sampled path exceeds the envelope."""
        report = variance_envelope_report(3.0, 2.0, hurst, 1, 200, stream)
        assert report.satisfied

    @pytest.mark.slow
    def test_envelope_holds_on_many_paths(self, stream, hurst):
        """Test the envelope over 10^4 sampled paths per regime."""
        report = variance_envelope_report(3.0, 2.0, hurst, 1, 10_000, stream)
        assert report.satisfied

    def test_linear_bound_value(self):
        """Test (rho T + 1) / 2 at T=10, kappa=1."""
        assert u_hat_linear_bound(10.0, 1.0, 0.3) == pytest.approx(2017.64, abs=0.01)

    def test_linear_bound_smooth_rejected(self):
        """Test that H > 1/2 raises DomainError."""
        with pytest.raises(DomainError):
            u_hat_linear_bound(10.0, 1.0, 0.75)

    def test_truncation_gap_decays(self):
        """Test that the smooth-regime gap bound decays past t=4."""
        assert truncation_gap_bound(4.0, 1.0, 0.75) == pytest.approx(2.0)
        assert truncation_gap_bound(6.0, 1.0, 0.75) < truncation_gap_bound(4.0, 1.0, 0.75)

    def test_truncation_gap_rough_positive(self):
        """Test a positive finite gap bound for H <= 1/2."""
        value = truncation_gap_bound(2.0, 1.0, 0.3)
        assert 0.0 < value < math.inf


class TestFirstReturns:
    """Test first-return counting and the skeleton class."""

    @pytest.mark.parametrize("m,expected", [(1, 2), (2, 2), (3, 4)])
    def test_counts(self, m, expected):
        """Test C(2m, m) / (2m - 1)."""
        assert first_return_count(m) == expected

    @pytest.mark.parametrize("m", range(1, 7))
    def test_count_matches_brute_force(self, m):
        """Test the closed form against enumeration of all sign sequences."""
        assert count_first_returns(m) == first_return_count(m)
        assert len(first_return_sign_paths(m)) == first_return_count(m)

    def test_class_size(self):
        """Test |D| for small (m, d)."""
        assert first_return_class_size(2, 1) == 2
        assert first_return_class_size(1, 2) == 24

    def test_class_enumeration(self):
        """Test that D is enumerated without duplicates and returns to the origin."""
        skeletons = first_return_class(1, 2)
        assert len(skeletons) == len(set(skeletons)) == 24
        for moves in skeletons:
            assert sorted(moves) == [1, 2, 3, 4]

    def test_class_limit(self):
        """Test that a huge class raises EnumerationLimitError."""
        with pytest.raises(EnumerationLimitError):
            first_return_class(10, 2)


class TestGaussianMaxima:
    """Test the Gaussian maximum identities and bounds."""

    def test_emax_values(self):
        """Test sigma / sqrt(pi) for sigma = 1 and 2."""
        assert emax_two_gaussians(1.0) == pytest.approx(0.564190, abs=1e-6)
        assert emax_two_gaussians(2.0) == pytest.approx(1.128379, abs=1e-6)

    def test_emax_monte_carlo(self, stream):
        """Test the Monte Carlo pair maximum within 5 SE."""
        report = emax_report(1.5, 100_000, stream)
        details = report.details
        assert abs(details["estimate"] - details["target"]) <= 5 * details["std_error"]

    def test_gaussian_max_bound(self, stream):
        """Test that the mean maximum of 10 Gaussians stays below the bound."""
        assert gaussian_max_bound(1.0, 1) == 0.0
        assert gaussian_max_report(1.0, 10, 2000, stream).satisfied


class TestStirling:
    """Test the Poisson point mass against its Stirling lower bound."""

    @pytest.mark.parametrize(
        "m,exact,lower",
        [(1, 0.2707, 0.1038), (4, 0.1396, 0.0519)],
    )
    def test_values(self, m, exact, lower):
        """Test p_m and 1 / (2e sqrt(pi m d)) in d=1."""
        value, bound = stirling_pm(m, 1, 1.0)
        assert value == pytest.approx(exact, abs=1e-4)
        assert bound == pytest.approx(lower, abs=1e-4)

    @pytest.mark.parametrize("m", range(1, 9))
    @pytest.mark.parametrize("d", [1, 2])
    def test_bound_holds(self, m, d):
        """Test p_m >= the Stirling bound."""
        assert stirling_report(m, d, 1.0).satisfied


class TestLowerBound:
    """Test the first-return lower-bound experiment."""

    def test_horizon(self):
        """Test T = 2md / kappa."""
        assert lower_bound_horizon(2, 1, 1.0) == 4.0

    def test_zero_field_value(self, stream):
        """Test (1/T)(log p_m + log|D| - 2md log 2d) for the zero field."""
        record = lower_bound_experiment(1, 0.5, 1.0, 1, 3, stream, zero_field=True)
        exact, _ = stirling_pm(1, 1, 1.0)
        expected = (math.log(exact) + math.log(first_return_class_size(1, 1)) - 2 * math.log(2)) / 2.0
        assert record.value == pytest.approx(expected, abs=1e-12)
        assert record.value == pytest.approx(-1.0, abs=1e-12)
        assert record.std_error == pytest.approx(0.0, abs=1e-12)

    def test_random_field_above_zero_field(self, stream):
        """Test that averaging over fields does not fall below the zero-field value."""
        record = lower_bound_experiment(1, 0.5, 1.0, 1, 40, stream)
        assert record.value >= -1.0 - 3 * record.std_error

    def test_planar_zero_field(self, stream):
        """Test the zero-field value in d=2."""
        record = lower_bound_experiment(1, 0.75, 1.0, 2, 2, stream, zero_field=True)
        exact, _ = stirling_pm(1, 2, 1.0)
        expected = (math.log(exact) + math.log(24) - 4 * math.log(4)) / 4.0
        assert record.value == pytest.approx(expected, abs=1e-12)

    def test_state_limit(self, stream):
        """Test that an oversized state space raises EnumerationLimitError."""
        with pytest.raises(EnumerationLimitError):
            lower_bound_experiment(5, 0.5, 1.0, 3, 1, stream)

    def test_envelope_finite(self, hurst):
        """Test a finite analytic envelope in each regime."""
        assert math.isfinite(lower_bound_envelope(2, hurst, 1.0, 1))

    def test_off_grid_horizon_rejected(self, stream):
        """Test that T = 2md / kappa off the time grid raises GridError."""
        with pytest.raises(GridError):
            lower_bound_experiment(1, 0.5, 0.5, 1, 2, stream, grid_step=0.3)

    @pytest.mark.slow
    def test_increases_with_m(self, stream):
        """Test that the bound does not decrease over m = 1..4 on common fields."""
        records = [lower_bound_experiment(m, 0.5, 1.0, 1, 128, stream) for m in range(1, 5)]
        for lower, upper in zip(records, records[1:]):
            slack = 2 * math.hypot(lower.std_error, upper.std_error)
            assert upper.value >= lower.value - slack
        assert records[-1].value > records[0].value

    @pytest.mark.slow
    def test_below_truncated_free_energy(self, stream, brownian_params):
        """Test estimate + 2 SE <= U_hat(T) / T at m=2, T=4."""
        record = lower_bound_experiment(2, 0.5, 1.0, 1, 64, stream.child("lower-bound"))
        u_hat = estimate_U(4.0, brownian_params, 64, stream.child("u-hat"))
        horizon = lower_bound_horizon(2, 1, 1.0)
        assert record.value + 2 * record.std_error <= u_hat.value / horizon

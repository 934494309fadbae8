"""
Unit tests for the continuous-time random walk.

These tests verify path sampling, per-site segments, the jump cap and the
exhaustive enumeration of the grid walk.
"""

import math

import numpy as np
import pytest

from fbm_polymer.errors import DomainError, EnumerationLimitError, GridError
from fbm_polymer.walk import (
    TruncationSpec,
    WalkPath,
    check_enumeration,
    enumerate_grid_paths,
    jump_cap,
    jump_probability,
    move_vector,
    path_from_json_line,
    path_from_skeleton,
    path_to_json_line,
    sample_path,
    segments,
)


class TestMoves:
    """Test the grid move encoding."""

    @pytest.mark.parametrize(
        "move,expected",
        [(0, (0, 0)), (1, (1, 0)), (2, (-1, 0)), (3, (0, 1)), (4, (0, -1))],
    )
    def test_move_vectors(self, move, expected):
        """Test the displacement of each move in d=2."""
        assert move_vector(move, 2) == expected


class TestWalkPath:
    """Test the WalkPath model."""

    def test_valid_path(self):
        """Test a two-jump path and its breakpoints."""
        path = WalkPath(horizon=2.0, jump_times=(0.5, 1.5), sites=((0,), (1,), (0,)))
        assert path.jump_count == 2
        assert path.dimension == 1
        assert path.breakpoints() == [0.0, 0.5, 1.5, 2.0]

    def test_non_unit_step_rejected(self):
        """Test that a jump of length two is rejected."""
        with pytest.raises(ValueError):
            WalkPath(horizon=1.0, jump_times=(0.5,), sites=((0,), (2,)))

    def test_jump_times_must_increase(self):
        """Test that jump times outside (0, horizon) or unordered are rejected."""
        with pytest.raises(ValueError):
            WalkPath(horizon=1.0, jump_times=(0.6, 0.4), sites=((0,), (1,), (0,)))
        with pytest.raises(ValueError):
            WalkPath(horizon=1.0, jump_times=(1.0,), sites=((0,), (1,)))

    def test_must_start_at_origin(self):
        """Test that a path starting away from 0 is rejected."""
        with pytest.raises(ValueError):
            WalkPath(horizon=1.0, sites=((1,),))


class TestSamplePath:
    """Test continuous-time path sampling."""

    def test_deterministic_per_stream(self, stream):
        """Test that a stream key fixes the path."""
        assert sample_path(1.0, 3.0, 2, stream) == sample_path(1.0, 3.0, 2, stream)

    def test_mean_jump_count(self, stream):
        """Test that the jump count averages kappa t within 5 SE."""
        counts = np.array([sample_path(2.0, 1.5, 1, key).jump_count for key in stream.replicas(2000)])
        std_error = counts.std(ddof=1) / math.sqrt(counts.size)
        assert abs(counts.mean() - 3.0) <= 5 * std_error

    def test_no_jump_frequency(self, stream):
        """Test P(no jump by t=2) = exp(-2) at kappa=1 within 5 SE."""
        stays = np.array([sample_path(1.0, 2.0, 1, key).jump_count == 0 for key in stream.replicas(4000)])
        expected = math.exp(-2.0)
        std_error = math.sqrt(expected * (1.0 - expected) / stays.size)
        assert abs(stays.mean() - expected) <= 5 * std_error

    def test_rejects_bad_arguments(self, stream):
        """Test that non-positive kappa or t raise DomainError."""
        with pytest.raises(DomainError):
            sample_path(0.0, 1.0, 1, stream)
        with pytest.raises(DomainError):
            sample_path(1.0, -1.0, 1, stream)


class TestSegments:
    """Test regrouping a path into per-site intervals."""

    def test_revisited_site(self):
        """Test that a revisited site collects both intervals in order."""
        path = WalkPath(horizon=3.0, jump_times=(1.0, 2.0), sites=((0,), (1,), (0,)))
        grouped = segments(path)
        assert grouped.by_site[(0,)] == ((0.0, 1.0), (2.0, 3.0))
        assert grouped.by_site[(1,)] == ((1.0, 2.0),)

    def test_total_length(self, stream):
        """Test that occupation intervals cover the horizon exactly."""
        path = sample_path(3.0, 2.0, 2, stream)
        assert segments(path).total_length() == pytest.approx(2.0, abs=1e-12)


class TestJumpCap:
    """Test the jump budget of the truncation."""

    @pytest.mark.parametrize(
        "t,h,kappa,expected",
        [(3.5, 0.75, 1.0, 12), (1.0, 0.3, 1.0, 403), (2.0, 0.5, 2.0, 1613)],
    )
    def test_values(self, t, h, kappa, expected):
        """Test floor(t^2) for H > 1/2 and floor(rho kappa t) otherwise."""
        assert jump_cap(t, TruncationSpec(hurst=h, kappa=kappa)) == expected

    def test_rho_small_kappa(self):
        """Test rho = 1/kappa once 1/kappa exceeds e^6."""
        assert TruncationSpec(hurst=0.3, kappa=1e-3).rho == pytest.approx(1000.0)

    def test_non_positive_time(self):
        """Test that t <= 0 raises DomainError."""
        with pytest.raises(DomainError):
            jump_cap(0.0, TruncationSpec(hurst=0.5, kappa=1.0))


class TestGridEnumeration:
    """Test the exhaustive grid-path enumeration."""

    def test_probabilities_sum_to_one(self):
        """Test that all decision sequences carry total mass one."""
        paths = list(enumerate_grid_paths(5, 1, 0.125))
        assert len(paths) == 3**5
        assert math.fsum(p for _, p in paths) == pytest.approx(1.0, abs=1e-12)

    def test_two_dimensional_count(self):
        """Test (2d+1)^m sequences in d=2."""
        assert sum(1 for _ in enumerate_grid_paths(3, 2, 0.1)) == 125

    def test_limit(self):
        """Test that 3^15 paths exceed the enumeration guard."""
        with pytest.raises(EnumerationLimitError):
            check_enumeration(15, 1)

    def test_invalid_probability(self):
        """Test that p_jump outside [0, 1] raises DomainError."""
        with pytest.raises(DomainError):
            list(enumerate_grid_paths(2, 1, 1.5))

    def test_path_from_skeleton(self):
        """Test jump placement at the start of each jumping cell."""
        path = path_from_skeleton((0, 1, 0, 2), 0.25)
        assert path.jump_times == (0.25, 0.75)
        assert path.sites == ((0,), (1,), (0,))
        assert path.horizon == 1.0

    def test_path_from_skeleton_rejects_first_cell_jump(self):
        """Test that a jump in cell 0 raises GridError."""
        with pytest.raises(GridError):
            path_from_skeleton((1, 0), 0.25)


class TestJumpProbability:
    """Test the per-cell jump probability guard."""

    def test_value(self):
        """Test p = kappa * grid_step."""
        assert jump_probability(1.0, 0.125) == 0.125

    def test_coarse_grid_rejected(self):
        """Test that p above 0.2 raises DomainError."""
        with pytest.raises(DomainError):
            jump_probability(2.0, 0.125)


class TestPathJson:
    """Test the JSON-lines path format."""

    def test_round_trip(self, stream):
        """Test that a sampled path survives serialization."""
        path = sample_path(2.0, 2.0, 2, stream)
        line = path_to_json_line(path)
        assert "\n" not in line
        assert path_from_json_line(line, dimension=2) == path

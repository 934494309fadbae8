"""
Test configuration and fixtures for fbm-polymer.

This module provides common fixtures: small environment configurations,
root stream keys and model parameters used across the test modules.
"""

import pytest

from fbm_polymer.environment import EnvConfig, Hurst, sample_env
from fbm_polymer.estimators import PolymerParams
from fbm_polymer.streams import StreamKey


@pytest.fixture
def stream():
    """Provide a root stream key with a fixed seed."""
    return StreamKey(seed=20240601)


@pytest.fixture
def small_config():
    """Provide a one-dimensional config with m=6 cells and room for every path."""
    return EnvConfig(hurst=0.5, dimension=1, box_radius=6, t_max=0.75, grid_step=0.125, seed=7)


@pytest.fixture
def rough_config():
    """Provide a rough-regime config (H=0.3) with m=6 cells."""
    return EnvConfig(hurst=0.3, dimension=1, box_radius=6, t_max=0.75, grid_step=0.125, seed=11)


@pytest.fixture
def planar_config():
    """Provide a two-dimensional config with m=4 cells."""
    return EnvConfig(hurst=0.75, dimension=2, box_radius=4, t_max=0.5, grid_step=0.125, seed=3)


@pytest.fixture
def small_env(small_config, stream):
    """Provide one sampled environment on the small config."""
    return sample_env(small_config, stream.child("env"))


@pytest.fixture
def brownian_params():
    """Provide H=0.5, kappa=1 model parameters on the default grid."""
    return PolymerParams(hurst=0.5, kappa=1.0)


@pytest.fixture
def smooth_params():
    """Provide H=0.75, kappa=1 model parameters on the default grid."""
    return PolymerParams(hurst=0.75, kappa=1.0)


@pytest.fixture
def zero_params():
    """Provide parameters that inject the identically-zero field."""
    return PolymerParams(hurst=0.5, kappa=1.0, zero_field=True)


@pytest.fixture(params=[0.3, 0.5, 0.75])
def hurst(request):
    """Provide each of the three Hurst regimes."""
    return Hurst(h=request.param)


@pytest.fixture
def clean_env(monkeypatch, tmp_path):
    """Run CLI tests in an empty directory without FBM_POLYMER_ overrides."""
    monkeypatch.delenv("FBM_POLYMER_SEED", raising=False)
    monkeypatch.delenv("FBM_POLYMER_LOG_LEVEL", raising=False)
    monkeypatch.chdir(tmp_path)
    return tmp_path

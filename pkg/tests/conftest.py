"""Pytest configuration and shared fixtures."""

import os

import pytest

from cvar_filter import config
from cvar_filter.barrier import BarrierCertificate, LinearBarrier
from cvar_filter.system import LinearStochasticSystem


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch):
    """Keep user/system config files and CVAR_FILTER_* variables out of every test."""
    monkeypatch.setattr(config, "_get_config_dirs", lambda: [])
    for key in list(os.environ):
        if key.startswith(config.ENV_PREFIX):
            monkeypatch.delenv(key)


@pytest.fixture
def line_system():
    """``x+ = x + u + w`` with w in {-0.1, 0, 0.1} (uniform) and u in [-1, 1]."""
    return LinearStochasticSystem.additive([[1.0]], [[1.0]], [[-0.1], [0.0], [0.1]], [-1.0], [1.0])


@pytest.fixture
def wall_barrier():
    """``h(x) = 1 - x``."""
    return LinearBarrier([-1.0], 1.0)


@pytest.fixture
def third_cert():
    return BarrierCertificate(alpha=0.9, beta=1.0 / 3.0)

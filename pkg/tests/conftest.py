"""Shared fixtures: small random panels, a hand-built panel and the default configuration."""

import numpy as np
import pytest

from src.config_manager import ConfigManager
from src.panel import PanelDataset


def make_panel(rng: np.random.Generator, n: int = 200, T: int = 4, k: int = 1, l: int = 1,
               cohorts=None, never_treated: bool = True, effect: float = 1.0) -> PanelDataset:
    """Random staggered panel with cohort-dependent covariate paths and a constant effect."""
    cohorts = list(cohorts) if cohorts is not None else list(range(2, T + 1))
    codes = cohorts + ([T + 1] if never_treated else [])
    group = np.asarray(codes)[np.arange(n) % len(codes)]
    rng.shuffle(group)
    x = rng.standard_normal((n, T, k)) + 0.3 * group[:, None, None]
    z = rng.standard_normal((n, l))
    periods = np.arange(1, T + 1)
    treated = periods[None, :] >= group[:, None]
    y = (0.5 * periods[None, :] + x.sum(axis=2) + z.sum(axis=1, keepdims=True)
         + rng.standard_normal(n)[:, None] + rng.standard_normal((n, T)) + effect * treated)
    return PanelDataset(outcome=y, x_tv=x, z_ti=z, group=group)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def config():
    return ConfigManager()


@pytest.fixture
def two_period_panel(rng):
    return make_panel(rng, n=300, T=2, k=2, l=1)


@pytest.fixture
def staggered_panel(rng):
    return make_panel(rng, n=400, T=4, k=1, l=1)


@pytest.fixture
def tiny_panel():
    """Six units, three periods: cohorts 2 and 3 plus never-treated (code 4)."""
    outcome = np.array([
        [1.0, 3.0, 4.0],
        [2.0, 4.5, 5.0],
        [0.0, 0.5, 3.0],
        [1.0, 1.0, 4.5],
        [0.5, 1.0, 1.5],
        [2.0, 2.5, 3.0],
    ])
    x = np.array([
        [0.1, 0.3, 0.2],
        [0.4, 0.2, 0.6],
        [-0.3, 0.1, 0.0],
        [0.2, -0.1, 0.5],
        [0.0, 0.4, 0.3],
        [-0.2, 0.1, -0.4],
    ])
    return PanelDataset(
        outcome=outcome, x_tv=x[:, :, None], z_ti=np.array([[1.0], [0.0], [1.0], [0.0], [1.0], [0.0]]),
        group=np.array([2, 2, 3, 3, 4, 4]), unit_ids=("a", "b", "c", "d", "e", "f"),
        period_labels=(2001, 2002, 2003), x_names=("x",), z_names=("z",),
    )


@pytest.fixture
def panel_factory():
    return make_panel

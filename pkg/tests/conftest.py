import numpy as np
import pytest

from skillfrontier.panel import OUTCOMES, Panel


def make_panel(Y, first_treat, months=None, name="y", covariates=None):
    Y = np.asarray(Y, dtype=float)
    n, T = Y.shape
    months = np.arange(1, T + 1) if months is None else np.asarray(months)
    outcomes = {name: Y}
    if name != "n_commits":
        outcomes["n_commits"] = np.ones_like(Y)
    return Panel(np.arange(1, n + 1), months, np.asarray(first_treat, dtype=np.int64), outcomes, covariates or {})


def random_panel(rng, n=10, T=6, cohorts=None):
    """Small random panel with at least one treated and one never-treated unit."""
    cohorts = cohorts or list(range(2, T + 1))
    ft = rng.choice([0] + cohorts, size=n)
    ft[0] = 0
    ft[1] = cohorts[0]
    return make_panel(rng.normal(size=(n, T)), ft)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sim_panel():
    from skillfrontier.sim import SimPanelConfig, simulate_outcome_panel

    return simulate_outcome_panel(SimPanelConfig(n_developers=300, seed=11))


__all__ = ["OUTCOMES", "make_panel", "random_panel"]

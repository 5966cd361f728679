import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spillover.panel import PanelDataset

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def line_coords(n):
    return np.column_stack([np.arange(n, dtype=float), np.zeros(n)])


def grid_coords(rows, cols):
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.column_stack([c, r]).astype(float)


def make_panel(y, z, coords=None, **covariates):
    y = np.asarray(y, dtype=float)
    if coords is None:
        coords = line_coords(y.shape[0])
    return PanelDataset(y, np.asarray(z), coords, covariates)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_instance(rng, n=None, T=3, start=2):
    """A random non-staggered panel, probability table and history contrast."""
    from spillover.panel import HistorySpec
    from spillover.propensity import PropensityTable

    n = n or int(rng.integers(8, 100))
    coords = rng.uniform(0, 10, size=(n, 2))
    p = rng.uniform(0.15, 0.85, size=(n, T))
    z = (rng.uniform(size=(n, T)) < p).astype(int)
    y = rng.normal(size=(n, T)) + 2 * z
    panel = PanelDataset(y, z, coords)
    h = HistorySpec(start, T, (1,) * (T - start + 1), (0,) * (T - start + 1))
    table = PropensityTable.from_probabilities(panel, p, staggered=False)
    return panel, table, h

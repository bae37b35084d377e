import numpy as np
import pytest

from src.bundle import BundleMetricState, build_bundle
from src.config import get_default_config, merge_config
from src.geometry import build_metric, gauduchon_gauge
from src.lattice import LatticeGrid


@pytest.fixture
def line_grid():
    return LatticeGrid(complex_dim=1, points_per_axis=16)


@pytest.fixture
def surface_grid():
    return LatticeGrid(complex_dim=2, points_per_axis=8)


@pytest.fixture
def flat_line(line_grid):
    return build_metric(line_grid, {"kind": "flat"})


@pytest.fixture
def flat_surface(surface_grid):
    return build_metric(surface_grid, {"kind": "flat"})


@pytest.fixture
def nonkaehler_surface(surface_grid):
    return build_metric(surface_grid, {"kind": "nonkaehler", "amplitude": 0.1})


@pytest.fixture
def gauduchon_surface(nonkaehler_surface):
    return gauduchon_gauge(nonkaehler_surface)[1]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def line_bundle(line_grid):
    return build_bundle(line_grid, {"rank": 1})


@pytest.fixture
def split_bundle(line_grid):
    return build_bundle(line_grid, {"rank": 2, "twist": [[1], [-1]]})


@pytest.fixture
def diagonal_higgs_bundle(line_grid):
    return build_bundle(line_grid, {"rank": 2, "theta": [[[0.5, 0], [0, -0.5]]]})


def heat_mode_state(grid, amplitude=0.05):
    """Line-bundle metric e^f with f a single cosine mode along x0."""
    f = amplitude * np.cos(2 * np.pi * grid.coordinates()[0])
    H = np.exp(f)[..., None, None].astype(complex)
    return BundleMetricState(H=H, H0=np.ones_like(H))


def make_config(**sections):
    """Default config merged with per-test overrides."""
    config = get_default_config()
    config["flow"]["progress"] = False
    return merge_config(config, sections)

"""
Pytest fixtures for the spde-holder test suite.
"""

import pytest
import sys
import os

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

os.environ.setdefault('SPDE_HOLDER_VERBOSE', '0')

from app import app as flask_app
from services.experiment_service import ExperimentPlan
from services.grid_service import Domain, SpaceTimeGrid
from services.noise_service import make_forcing
from services.operator_service import make_operator, validate
from services.semigroup_service import BackendKind, SemigroupBackend
from services.solver_service import SpaceTimeField


@pytest.fixture
def grid_1d():
    """Coarse dyadic 1-d grid: nx = 33, dt = 2^-6."""
    return SpaceTimeGrid(Domain(1), 33, 2.0 ** -6)


@pytest.fixture
def grid_2d():
    """Coarse dyadic 2-d grid: nx = 17, dt = 2^-4."""
    return SpaceTimeGrid(Domain(2), 17, 2.0 ** -4)


@pytest.fixture
def laplacian(grid_1d):
    """Validated 1-d Laplacian."""
    return validate(make_operator('laplacian', 1), grid_1d)


@pytest.fixture
def spectral(laplacian, grid_1d):
    return SemigroupBackend(laplacian, grid_1d, BackendKind.SPECTRAL)


@pytest.fixture
def implicit_fd(laplacian, grid_1d):
    return SemigroupBackend(laplacian, grid_1d, BackendKind.IMPLICIT_FD)


@pytest.fixture
def unit_forcing(grid_1d):
    """f = 1 with one driver, certified on the coarse grid."""
    return make_forcing('constant_one', {}, d=1, j_count=1, grid=grid_1d)


@pytest.fixture
def random_field(grid_1d):
    """I.i.d. Gaussian field on the coarse space-time grid."""
    rng = np.random.default_rng(7)
    return SpaceTimeField(grid_1d, rng.standard_normal(grid_1d.field_shape))


@pytest.fixture
def small_plan():
    """Cheap plan: coarse grid, 100 samples, two windows."""
    return ExperimentPlan(nx=17, dt=2.0 ** -5, samples=100, windows=[0, 1], k_list=[0.0, 1.0, 2.0, 4.0],
                          theta_list=[0.1, 0.25], bootstrap_resamples=50, block_size=16)


@pytest.fixture
def config_text():
    """Minimal valid configuration document."""
    return ('{"operator": {"preset": "laplacian"}, "forcing": {"preset": "constant_one"},'
            ' "grid": {"d": 1, "nx": 17, "dt": 0.03125},'
            ' "plan": {"samples": 100, "windows": [0, 1], "theta_list": [0.1, 0.25],'
            ' "bootstrap_resamples": 50}, "seed": 3}')


@pytest.fixture
def results_dir(tmp_path):
    """Empty results root."""
    root = tmp_path / 'runs'
    root.mkdir()
    return root


@pytest.fixture
def app(results_dir):
    """Create application for testing."""
    flask_app.config.update({
        'TESTING': True,
        'RESULTS_DIR': str(results_dir)
    })
    yield flask_app


@pytest.fixture
def client(app):
    """Create test client."""
    return app.test_client()

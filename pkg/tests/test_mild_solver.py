"""
Mild solver tests for spde-holder.
Tests exponential Euler realizations, the covariance oracle and increment statistics.
"""

from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from services.noise_service import make_forcing, refine_path, sample_path, zero_path
from services.operator_service import make_operator, validate
from services.semigroup_service import make_backend
from services.solver_service import (MildSolver, SpaceTimeField, exact_covariance,
                                     fit_increment_exponent, increment_moments, solve)
from utils.errors import (BackendMismatchError, GrowthNotEnabledError, InstabilityError,
                          InsufficientSamplesError, ValidationError, WindowMismatchError)


@pytest.fixture
def bump_forcing(grid_1d):
    """f = sin(pi x): a single sine mode."""
    return make_forcing('smooth_bump', {}, d=1, j_count=1, grid=grid_1d)


def path_for(grid, index=0, horizon=1.0, seed=21):
    return sample_path(seed, index, 1, grid.dt, horizon)


class TestMildSolver:
    """Test realizations of the mild solution."""

    def test_zero_forcing_gives_zero(self, spectral, grid_1d):
        """Test that f = 0 gives u = 0."""
        forcing = make_forcing('zero', {}, d=1, grid=grid_1d)
        field = solve(spectral, forcing, path_for(grid_1d))
        assert not field.values.any()

    def test_zero_path_gives_zero(self, spectral, unit_forcing, grid_1d):
        """Test that a path with no increments gives u = 0."""
        field = solve(spectral, unit_forcing, zero_path(1, grid_1d.dt, 1.0))
        assert not field.values.any()

    def test_field_shape_and_boundary(self, spectral, unit_forcing, grid_1d):
        """Test window shape and zero Dirichlet values."""
        field = solve(spectral, unit_forcing, path_for(grid_1d))
        assert field.values.shape == grid_1d.field_shape
        assert not field.values[:, 0].any()
        assert not field.values[:, -1].any()
        assert not field.values[0].any()
        assert field.provenance['sample_index'] == 0

    def test_linear_in_noise(self, spectral, unit_forcing, grid_1d):
        """Test that doubling the increments doubles the solution."""
        path = path_for(grid_1d)
        doubled = replace(path, increments=2.0 * path.increments)
        solver = MildSolver(spectral, unit_forcing)
        assert np.allclose(solver.solve(doubled).values, 2.0 * solver.solve(path).values)

    def test_backends_agree_on_single_mode(self, spectral, implicit_fd, bump_forcing, grid_1d):
        """Test that both backends give the same realization for a one-mode forcing."""
        path = path_for(grid_1d)
        a = solve(spectral, bump_forcing, path).values
        b = solve(implicit_fd, bump_forcing, path).values
        assert np.abs(a - b).max() <= 0.05 * np.abs(a).max()

    def test_consecutive_windows_share_a_level(self, spectral, unit_forcing, grid_1d):
        """Test that window 1 starts where window 0 ends."""
        path = path_for(grid_1d, horizon=2.0)
        recorded = MildSolver(spectral, unit_forcing).solve_windows([path], [0, 1])
        assert np.array_equal(recorded[1][:, 0], recorded[0][:, -1])

    def test_batch_matches_single(self, implicit_fd, unit_forcing, grid_1d):
        """Test that a block of samples equals the samples solved one by one."""
        paths = [path_for(grid_1d, i) for i in range(3)]
        solver = MildSolver(implicit_fd, unit_forcing)
        block = solver.solve_windows(paths, [0])[0]
        for i, path in enumerate(paths):
            assert np.allclose(block[i], solver.solve(path).values)

    def test_column_recording(self, spectral, unit_forcing, grid_1d):
        """Test that recording one node gives the matching column of the full field."""
        path = path_for(grid_1d)
        solver = MildSolver(spectral, unit_forcing)
        column = solver.solve_windows([path], [0], spatial_index=(16,))[0]
        assert column.shape == (1, grid_1d.n_levels)
        assert np.allclose(column[0], solver.solve(path).values[:, 16])

    def test_growth_needs_opt_in(self, grid_1d, unit_forcing):
        """Test that c_bar > 0 is refused unless growth runs are enabled."""
        spec = validate(make_operator('growth', 1), grid_1d)
        backend = make_backend(spec, grid_1d, 'implicit_fd')
        with pytest.raises(GrowthNotEnabledError):
            MildSolver(backend, unit_forcing)
        assert MildSolver(backend, unit_forcing, allow_growth=True).spec.c_bar == 2.0

    def test_path_step_mismatch(self, spectral, unit_forcing):
        """Test that paths must use the grid step."""
        with pytest.raises(ValidationError):
            solve(spectral, unit_forcing, sample_path(1, 0, 1, 0.5, 1.0))

    def test_path_too_short(self, spectral, unit_forcing, grid_1d):
        """Test that the path must cover the last window."""
        with pytest.raises(ValidationError):
            solve(spectral, unit_forcing, path_for(grid_1d, horizon=1.0), window=1)

    def test_negative_window(self, spectral, unit_forcing, grid_1d):
        """Test that windows start at nonnegative integers."""
        with pytest.raises(WindowMismatchError):
            MildSolver(spectral, unit_forcing).solve_windows([path_for(grid_1d)], [-1])

    def test_instability_guard(self, spectral, unit_forcing, grid_1d):
        """Test that |u| above the guard stops the run."""
        with pytest.raises(InstabilityError) as exc:
            solve(spectral, unit_forcing, path_for(grid_1d), guard=1e-9)
        assert exc.value.exit_code == 3


class TestSpaceTimeField:
    """Test window bookkeeping of a realization."""

    def test_level_lookup(self, random_field, grid_1d):
        """Test that level(t) returns the matching time slice."""
        assert np.array_equal(random_field.level(0.5), random_field.values[32])

    def test_level_outside_window(self, random_field):
        """Test that times outside the window are rejected."""
        with pytest.raises(WindowMismatchError):
            random_field.level(2.0)

    def test_level_between_steps(self, random_field):
        """Test that off-grid times are rejected."""
        with pytest.raises(WindowMismatchError):
            random_field.level(0.001)

    def test_window(self, grid_1d):
        """Test the window bounds of a shifted field."""
        field = SpaceTimeField(grid_1d.window(3), np.zeros(grid_1d.field_shape))
        assert field.window == (3.0, 4.0)


class TestCovariance:
    """Test the Gaussian covariance oracle."""

    def test_single_mode_closed_form(self, spectral, bump_forcing):
        """Test Var u(x, t) = sin^2(pi x) (1 - exp(-2 pi^2 t)) / (2 pi^2) for f = sin(pi x)."""
        t = 0.5
        expected = (1 - np.exp(-2 * np.pi ** 2 * t)) / (2 * np.pi ** 2)
        assert exact_covariance(spectral, bump_forcing, (0.5,), (0.5,), t) == pytest.approx(expected, rel=1e-6)

    def test_symmetric(self, spectral, unit_forcing):
        """Test that Cov(u(x1), u(x2)) = Cov(u(x2), u(x1))."""
        a = exact_covariance(spectral, unit_forcing, (0.25,), (0.5,), 0.3)
        b = exact_covariance(spectral, unit_forcing, (0.5,), (0.25,), 0.3)
        assert a == pytest.approx(b)
        assert a > 0

    def test_zero_time(self, spectral, unit_forcing):
        """Test that u(., 0) = 0 has no variance."""
        assert exact_covariance(spectral, unit_forcing, (0.5,), (0.5,), 0.0) == 0.0

    def test_needs_spectral_backend(self, implicit_fd, unit_forcing):
        """Test that the oracle refuses the finite-difference backend."""
        with pytest.raises(BackendMismatchError):
            exact_covariance(implicit_fd, unit_forcing, (0.5,), (0.5,), 0.5)

    def test_needs_time_independent_forcing(self, spectral, grid_1d):
        """Test that time-modulated forcings are refused."""
        forcing = make_forcing('time_modulated', {}, d=1, grid=grid_1d)
        with pytest.raises(ValidationError):
            exact_covariance(spectral, forcing, (0.5,), (0.5,), 0.5)

    def test_monte_carlo_variance(self, spectral, bump_forcing, grid_1d):
        """Test that the sample variance matches the discrete-time variance of the scheme."""
        paths = [path_for(grid_1d, i, seed=5) for i in range(2000)]
        column = MildSolver(spectral, bump_forcing).solve_windows(paths, [0], spatial_index=(16,))[0]
        decay = np.exp(-2 * np.pi ** 2 * grid_1d.dt * np.arange(1, grid_1d.steps_per_unit + 1))
        expected = grid_1d.dt * decay.sum()
        assert column[:, -1].var() == pytest.approx(expected, rel=0.12)


class TestIncrementStatistics:
    """Test increment moments and the time-increment exponent fit."""

    def test_increment_moments(self, grid_1d):
        """Test the plain moment estimate and its interval."""
        rng = np.random.default_rng(1)
        values = rng.standard_normal((1000,) + grid_1d.field_shape)
        pair = ((0, 16), (4, 16))
        result = increment_moments(values, grid_1d, [pair], 2.0, n_resamples=100)[0]
        manual = np.mean((values[:, 0, 16] - values[:, 4, 16]) ** 2)
        assert result.estimate == pytest.approx(manual)
        assert result.ci_low <= result.estimate <= result.ci_high
        assert result.distance == pytest.approx(4 * grid_1d.dt)

    def test_increment_moments_need_samples(self, grid_1d):
        """Test that small ensembles are refused."""
        with pytest.raises(InsufficientSamplesError):
            increment_moments(np.zeros((10,) + grid_1d.field_shape), grid_1d, [((0, 1), (1, 1))], 2.0)

    def test_brownian_exponent(self):
        """Test that Brownian columns give exponent 1 and Gaussian kurtosis."""
        dt = 2.0 ** -6
        rng = np.random.default_rng(4)
        columns = np.concatenate([np.zeros((2000, 1)),
                                  np.cumsum(rng.standard_normal((2000, 64)) * np.sqrt(dt), axis=1)], axis=1)
        fit = fit_increment_exponent(columns, dt, 0, lags=range(1, 17), n_resamples=200, seed=2)
        assert fit.exponent == pytest.approx(1.0, abs=0.1)
        assert fit.ci_low <= fit.exponent <= fit.ci_high
        assert np.nanmean(fit.kurtosis) == pytest.approx(3.0, abs=0.3)
        assert fit.to_dict()['samples'] == 2000

    def test_lag_outside_window(self):
        """Test that lags must stay inside the recorded levels."""
        with pytest.raises(ValidationError):
            fit_increment_exponent(np.zeros((1000, 9)), 0.125, 4, lags=[1, 8])


class TestEnsembleInvariants:
    """Test ensemble-level properties of the scheme."""

    def test_refinement_keeps_mean_sup(self, grid_1d, laplacian):
        """Test that halving dt on bridge-refined paths moves the mean sup norm by at most 5%."""
        coarse_grid = replace(grid_1d, dt=2.0 ** -10)
        fine_grid = replace(grid_1d, dt=2.0 ** -11)
        coarse = MildSolver(make_backend(laplacian, coarse_grid),
                            make_forcing('constant_one', {}, d=1, j_count=1, grid=coarse_grid))
        fine = MildSolver(make_backend(laplacian, fine_grid),
                          make_forcing('constant_one', {}, d=1, j_count=1, grid=fine_grid))
        paths = [path_for(coarse_grid, i, seed=13) for i in range(200)]
        coarse_sup = np.abs(coarse.solve_windows(paths, [0])[0]).max(axis=(1, 2))
        fine_sup = np.abs(fine.solve_windows([refine_path(p) for p in paths], [0])[0]).max(axis=(1, 2))
        assert abs(fine_sup.mean() - coarse_sup.mean()) <= 0.05 * coarse_sup.mean()

    def test_centered_gaussian_at_midpoint(self, spectral, unit_forcing, grid_1d):
        """Test the mean and skewness of u(1/2, 1/2) over 10^4 samples."""
        paths = [path_for(grid_1d, i, seed=17) for i in range(10000)]
        column = MildSolver(spectral, unit_forcing).solve_windows(paths, [0], spatial_index=(16,))[0]
        values = column[:, grid_1d.steps_per_unit // 2]
        assert abs(values.mean()) <= 4 * values.std() / np.sqrt(values.size)
        assert abs(stats.skew(values)) <= 0.1

"""
Noise tests for spde-holder.
Tests Brownian drivers, path refinement and the forcing normalization certificates.
"""

import numpy as np
import pytest

from services.noise_service import (FORCING_KINDS, NoiseCondition, make_forcing, refine_path,
                                    require_certified, sample_path, stream, verify_forcing, zero_path)
from utils.errors import ConditionViolationError, NormalizationError, ValidationError


class TestBrownianPaths:
    """Test counter-based Brownian paths."""

    def test_stream_is_reproducible(self):
        """Test that the same keys give the same draws."""
        a = stream(11, 3, 0).standard_normal(5)
        b = stream(11, 3, 0).standard_normal(5)
        assert np.array_equal(a, b)

    def test_stream_keys_are_independent(self):
        """Test that different sample indexes give different draws."""
        a = stream(11, 3, 0).standard_normal(5)
        b = stream(11, 4, 0).standard_normal(5)
        assert not np.array_equal(a, b)

    def test_negative_keys_rejected(self):
        """Test that negative seeds are rejected."""
        with pytest.raises(ValidationError):
            stream(-1)

    def test_path_shape(self):
        """Test increments shape and starting value."""
        path = sample_path(5, 0, 2, 2.0 ** -6, 2.0)
        assert path.increments.shape == (2, 128)
        assert path.horizon == pytest.approx(2.0)
        assert np.all(path.values()[:, 0] == 0.0)

    def test_call_order_does_not_matter(self):
        """Test that a sample drawn alone equals the same sample drawn after others."""
        for i in range(4):
            sample_path(5, i, 1, 0.01, 1.0)
        late = sample_path(5, 4, 1, 0.01, 1.0)
        alone = sample_path(5, 4, 1, 0.01, 1.0)
        assert np.array_equal(late.increments, alone.increments)

    def test_horizon_prefix_is_stable(self):
        """Test that a longer horizon extends rather than redraws the path."""
        short = sample_path(2, 1, 1, 0.125, 1.0)
        long = sample_path(2, 1, 1, 0.125, 3.0)
        assert np.array_equal(long.increments[:, :8], short.increments)

    def test_increment_variance(self):
        """Test that increments have variance dt."""
        dt = 2.0 ** -10
        path = sample_path(9, 0, 4, dt, 4.0)
        assert np.mean(path.increments ** 2) / dt == pytest.approx(1.0, abs=0.05)

    def test_invalid_arguments(self):
        """Test that bad steps, horizons and driver counts are rejected."""
        with pytest.raises(ValidationError):
            sample_path(1, 0, 1, 0.0, 1.0)
        with pytest.raises(ValidationError):
            sample_path(1, 0, 1, 0.5, 0.25)
        with pytest.raises(ValidationError):
            sample_path(1, 0, 0, 0.5, 1.0)

    def test_refinement_preserves_coarse_sums(self):
        """Test that Brownian-bridge refinement keeps every coarse increment."""
        coarse = sample_path(3, 2, 2, 0.25, 1.0)
        fine = refine_path(coarse)
        assert fine.dt == 0.125
        assert fine.level == 1
        assert np.allclose(fine.increments[:, 0::2] + fine.increments[:, 1::2], coarse.increments)

    def test_zero_path(self):
        """Test the degenerate zero path."""
        path = zero_path(2, 0.25, 1.0)
        assert path.n_steps == 4
        assert not path.increments.any()


class TestNoiseCondition:
    """Test the normalization conditions."""

    def test_b_infty_norm(self):
        """Test that B-infinity measures the max."""
        values = np.array([[0.5, -0.9, 0.1]])
        assert NoiseCondition().norm(values, 0.5, 1)[0] == pytest.approx(0.9)

    def test_b_p_norm(self):
        """Test the discrete L^p norm."""
        condition = NoiseCondition(NoiseCondition.B_P, 2.0)
        values = np.ones((1, 4))
        assert condition.norm(values, 0.25, 1)[0] == pytest.approx(1.0)
        assert condition.label() == 'B^2'

    def test_b_p_needs_p_above_one(self):
        """Test that B^p requires p > 1."""
        with pytest.raises(ValidationError):
            NoiseCondition(NoiseCondition.B_P, 1.0)

    def test_unknown_condition(self):
        """Test that unknown condition kinds are rejected."""
        with pytest.raises(ValidationError):
            NoiseCondition('b_2')


class TestForcing:
    """Test forcing construction and certification."""

    @pytest.mark.parametrize('kind', ['zero', 'constant_one', 'smooth_bump', 'checkerboard'])
    def test_base_kinds_certified(self, grid_1d, kind):
        """Test that every bounded kind passes B-infinity on the grid."""
        forcing = make_forcing(kind, {}, d=1, j_count=2, grid=grid_1d)
        assert forcing.certificate.verified
        assert forcing.spatial_values(grid_1d).shape == (2, grid_1d.nx)

    def test_boundary_values_are_zero(self, grid_2d):
        """Test that profiles vanish on the boundary."""
        values = make_forcing('constant_one', {}, d=2, j_count=1, grid=grid_2d).spatial_values(grid_2d)
        assert values[0, 0, :].max() == 0.0
        assert values[0, :, -1].max() == 0.0
        assert values[0, 1:-1, 1:-1].min() == 1.0

    def test_amplitude_above_one(self, grid_1d):
        """Test that |value| > 1 violates B-infinity."""
        with pytest.raises(NormalizationError):
            make_forcing('constant_one', {'value': 2.0}, d=1, grid=grid_1d)

    def test_spike_has_unit_lp_norm(self, grid_1d):
        """Test that the eps-spike is normalized in L^p."""
        forcing = make_forcing('spike', {'eps': 0.125, 'p': 4.0}, d=1, grid=grid_1d)
        assert forcing.condition.kind == NoiseCondition.B_P
        assert forcing.certificate.bound == pytest.approx(1.0)
        assert forcing.spatial_values(grid_1d).max() == pytest.approx(0.125 ** -0.25)

    def test_spike_below_two_h(self, grid_1d):
        """Test that spikes narrower than two cells are rejected."""
        with pytest.raises(NormalizationError):
            make_forcing('spike', {'eps': grid_1d.h, 'p': 4.0}, d=1, grid=grid_1d)

    def test_spike_needs_parameters(self):
        """Test that eps and p are required."""
        with pytest.raises(ValidationError):
            make_forcing('spike', {'eps': 0.25})

    def test_unknown_parameter(self):
        """Test that unknown parameters are rejected."""
        with pytest.raises(ValidationError) as exc:
            make_forcing('constant_one', {'valu': 1.0})
        assert exc.value.details['kind'] == 'constant_one'

    def test_unknown_kind(self):
        """Test that unknown kinds list the known ones."""
        with pytest.raises(ValidationError) as exc:
            make_forcing('white')
        assert exc.value.details['known'] == list(FORCING_KINDS)

    def test_time_modulated(self, grid_1d):
        """Test that the temporal factor multiplies the profile."""
        forcing = make_forcing('time_modulated', {'frequency': 1.0}, d=1, grid=grid_1d)
        assert forcing.time_dependent
        assert np.allclose(forcing.evaluate(grid_1d, 0.5), -forcing.evaluate(grid_1d, 0.0))
        assert len(forcing.certificate.times) > 1

    def test_exp_decay(self, grid_1d):
        """Test exponential decay in time."""
        forcing = make_forcing('exp_decay', {'rate': 2.0, 'base': 'smooth_bump'}, d=1, grid=grid_1d)
        ratio = forcing.evaluate(grid_1d, 1.0)[0, 16] / forcing.evaluate(grid_1d, 0.0)[0, 16]
        assert ratio == pytest.approx(np.exp(-2.0))

    def test_feedback_needs_solution(self, grid_1d):
        """Test that feedback forcing multiplies by the clipped solution."""
        forcing = make_forcing('feedback', {'gain': 0.5}, d=1, j_count=2, grid=grid_1d)
        with pytest.raises(ValidationError):
            forcing.evaluate(grid_1d, 0.0)
        u = np.full((3, grid_1d.nx), 4.0)
        values = forcing.evaluate(grid_1d, 0.0, u)
        assert values.shape == (3, 2, grid_1d.nx)
        assert values[:, :, 1:-1].max() == pytest.approx(0.5)

    def test_require_certified_raises(self, grid_1d):
        """Test that an uncertified over-normalized forcing is refused."""
        forcing = make_forcing('spike', {'eps': 0.01, 'p': 4.0}, d=1)
        with pytest.raises(ConditionViolationError):
            require_certified(forcing, grid_1d)

    def test_certificate_reused_for_same_grid(self, grid_1d, unit_forcing):
        """Test that the attached certificate is reused on the same grid."""
        certificate = unit_forcing.certificate
        assert require_certified(unit_forcing, grid_1d) is certificate

    def test_dimension_mismatch(self, grid_2d, unit_forcing):
        """Test that a 1-d forcing cannot be verified on a 2-d grid."""
        with pytest.raises(ValidationError):
            verify_forcing(unit_forcing, grid_2d)

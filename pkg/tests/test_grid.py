"""
Grid tests for spde-holder.
Tests space-time grid validation, dyadic meshes and neighbor offsets.
"""

import numpy as np
import pytest

from services.grid_service import (Domain, SpaceTimeGrid, build_dyadic_mesh,
                                   neighbor_offsets, node_indices)
from utils.errors import LevelTooFineError, ValidationError


class TestSpaceTimeGrid:
    """Test grid construction and derived quantities."""

    def test_shapes_1d(self, grid_1d):
        """Test that a 1-d field carries time first and boundary nodes included."""
        assert grid_1d.h == pytest.approx(1 / 32)
        assert grid_1d.n_levels == 65
        assert grid_1d.field_shape == (65, 33)
        assert grid_1d.interior_shape == (31,)

    def test_shapes_2d(self, grid_2d):
        """Test 2-d spatial shapes."""
        assert grid_2d.field_shape == (17, 17, 17)
        assert grid_2d.points().shape == (17, 17, 2)
        assert grid_2d.interior_points().shape == (15, 15, 2)

    def test_resolution_and_dyadic_level(self, grid_1d):
        """Test that the finest dyadic level follows the coarser of h and dt."""
        assert grid_1d.resolution == pytest.approx(1 / 32)
        assert grid_1d.max_dyadic_level == 5

    def test_window_shifts_times(self, grid_1d):
        """Test that window(T) keeps the spacing and moves the start."""
        shifted = grid_1d.window(4)
        assert shifted.t0 == 4.0
        assert shifted.t1 == 5.0
        assert shifted.nx == grid_1d.nx
        assert shifted.times[0] == 4.0
        assert shifted.times[-1] == pytest.approx(5.0)

    def test_rejects_too_few_nodes(self):
        """Test that nx below 3 is rejected."""
        with pytest.raises(ValidationError):
            SpaceTimeGrid(Domain(1), 2, 0.5)

    def test_rejects_non_dividing_step(self):
        """Test that dt must divide the unit window."""
        with pytest.raises(ValidationError) as exc:
            SpaceTimeGrid(Domain(1), 17, 0.3)
        assert 'divide' in exc.value.message

    def test_rejects_negative_start(self):
        """Test that windows cannot start before zero."""
        with pytest.raises(ValidationError):
            SpaceTimeGrid(Domain(1), 17, 0.25, t0=-1.0)

    def test_rejects_unsupported_dimension(self):
        """Test that only d = 1 and d = 2 are accepted."""
        with pytest.raises(ValidationError):
            Domain(3)

    def test_describe(self, grid_1d):
        """Test the grid description used in provenance."""
        assert grid_1d.describe() == {'d': 1, 'nx': 33, 'dt': 2.0 ** -6, 't0': 0.0, 't1': 1.0}


class TestDyadicMesh:
    """Test dyadic node enumeration."""

    def test_node_count(self, grid_1d):
        """Test that level n holds (2^n + 1)^(d+1) nodes."""
        mesh = build_dyadic_mesh(grid_1d, 2)
        assert mesh.size == 25
        assert mesh.positions().min() == 0.0
        assert mesh.positions().max() == 1.0

    def test_node_count_2d(self, grid_2d):
        """Test node count in two dimensions."""
        assert build_dyadic_mesh(grid_2d, 1).size == 27

    def test_level_too_fine(self, grid_1d):
        """Test that a level finer than the grid raises LevelTooFineError."""
        with pytest.raises(LevelTooFineError):
            build_dyadic_mesh(grid_1d, grid_1d.max_dyadic_level + 1)

    def test_negative_level(self, grid_1d):
        """Test that negative levels are rejected."""
        with pytest.raises(LevelTooFineError):
            build_dyadic_mesh(grid_1d, -1)

    def test_indices_hit_grid_nodes(self, grid_1d):
        """Test that mesh indices select the matching grid values."""
        mesh = build_dyadic_mesh(grid_1d, 3)
        t_index, x_index = mesh.grid_indices(grid_1d)
        assert np.allclose(grid_1d.times[t_index], mesh.positions()[:, 1])
        assert np.allclose(grid_1d.x[x_index], mesh.positions()[:, 0])

    def test_shifted_window_indices(self, grid_1d):
        """Test that nodes on a later window map back to local time indices."""
        window = grid_1d.window(2)
        mesh = build_dyadic_mesh(window, 2)
        t_index, _ = node_indices(mesh.nodes, 2, window)
        assert t_index.min() == 0
        assert t_index.max() == window.n_levels - 1


class TestNeighborOffsets:
    """Test the offset set used by the oscillation profile."""

    def test_count_1d(self):
        """Test that d = 1 has 3^2 - 1 offsets."""
        assert neighbor_offsets(1).shape == (8, 2)

    def test_count_2d(self):
        """Test that d = 2 has 3^3 - 1 offsets of max-norm one."""
        offsets = neighbor_offsets(2)
        assert offsets.shape == (26, 3)
        assert np.all(np.abs(offsets).max(axis=1) == 1)

    def test_invalid_dimension(self):
        """Test that nonpositive dimensions are rejected."""
        with pytest.raises(ValidationError):
            neighbor_offsets(0)

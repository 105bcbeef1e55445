"""
Grid Service Module
Unit-cube domain, uniform space-time grids over unit windows and the dyadic meshes
used by the chaining analyzer.
"""

import math
from dataclasses import dataclass, replace
from itertools import product
from typing import Tuple

import numpy as np

from utils.errors import LevelTooFineError, ValidationError

MAX_DIMENSION = 2


@dataclass(frozen=True)
class Domain:
    """The open cube (0, 1)^d"""

    d: int = 1
    side: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.d > MAX_DIMENSION:
            raise ValidationError(f"Spatial dimension must be 1 or 2, got {self.d}", {'d': self.d})
        if self.side != 1.0:
            raise ValidationError("Only the unit cube is supported", {'side': self.side})


@dataclass(frozen=True)
class SpaceTimeGrid:
    """
    Uniform grid over Q x [t0, t0 + 1]

    Field arrays on this grid have shape (n_levels, nx) for d = 1 and
    (n_levels, nx, nx) for d = 2; the time axis always comes first and
    boundary nodes are included.
    """

    domain: Domain
    nx: int
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        if self.nx < 3:
            raise ValidationError(f"nx must be at least 3, got {self.nx}", {'nx': self.nx})
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}", {'dt': self.dt})
        steps = round(1.0 / self.dt)
        if steps < 1 or abs(steps * self.dt - 1.0) > 4 * np.finfo(float).eps:
            raise ValidationError(f"dt = {self.dt!r} does not divide the unit window", {'dt': self.dt})
        if self.t0 < 0:
            raise ValidationError(f"Window start must be nonnegative, got {self.t0}", {'t0': self.t0})

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def t1(self) -> float:
        return self.t0 + 1.0

    @property
    def h(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def steps_per_unit(self) -> int:
        return int(round(1.0 / self.dt))

    @property
    def n_levels(self) -> int:
        return self.steps_per_unit + 1

    @property
    def spatial_shape(self) -> Tuple[int, ...]:
        return (self.nx,) * self.d

    @property
    def interior_shape(self) -> Tuple[int, ...]:
        return (self.nx - 2,) * self.d

    @property
    def field_shape(self) -> Tuple[int, ...]:
        return (self.n_levels,) + self.spatial_shape

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.field_shape))

    @property
    def resolution(self) -> float:
        return max(self.h, self.dt)

    @property
    def max_dyadic_level(self) -> int:
        """Finest level n with 2^-n >= max(h, dt)"""
        return int(math.floor(math.log2(1.0 / self.resolution) + 1e-12))

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_levels) * self.dt

    def points(self) -> np.ndarray:
        """Spatial node coordinates, shape spatial_shape + (d,)"""
        axes = np.meshgrid(*([self.x] * self.d), indexing='ij')
        return np.stack(axes, axis=-1)

    def interior_points(self) -> np.ndarray:
        """Interior node coordinates, shape interior_shape + (d,)"""
        inner = tuple(slice(1, -1) for _ in range(self.d))
        return self.points()[inner]

    def interior_slice(self) -> Tuple[slice, ...]:
        return tuple(slice(1, -1) for _ in range(self.d))

    def window(self, T: float) -> 'SpaceTimeGrid':
        """Same spatial grid and step over [T, T + 1]"""
        return replace(self, t0=float(T))

    def describe(self) -> dict:
        return {'d': self.d, 'nx': self.nx, 'dt': self.dt, 't0': self.t0, 't1': self.t1}


@dataclass(frozen=True, eq=False)
class DyadicMesh:
    """
    Nodes k in Z^{d+1} with k 2^-n in the closed cylinder [0,1]^d x [t0, t1]

    Columns of `nodes` are the d spatial coordinates followed by time.
    """

    level: int
    nodes: np.ndarray
    d: int
    t0: float

    @property
    def size(self) -> int:
        return int(self.nodes.shape[0])

    def positions(self) -> np.ndarray:
        """Node positions k 2^-n"""
        return self.nodes * 2.0 ** (-self.level)

    def grid_indices(self, grid: SpaceTimeGrid) -> Tuple[np.ndarray, ...]:
        """Index arrays (time, *space) selecting the mesh nodes in a field on `grid`"""
        return node_indices(self.nodes, self.level, grid)


def _strides(grid: SpaceTimeGrid, n: int) -> Tuple[int, int]:
    scale = 2 ** n
    if (grid.nx - 1) % scale or grid.steps_per_unit % scale:
        raise LevelTooFineError(
            f"Dyadic level {n} is finer than the grid (nx={grid.nx}, dt={grid.dt})",
            {'level': n, 'nx': grid.nx, 'dt': grid.dt})
    return (grid.nx - 1) // scale, grid.steps_per_unit // scale


def node_indices(nodes: np.ndarray, n: int, grid: SpaceTimeGrid) -> Tuple[np.ndarray, ...]:
    """
    Map level-n integer nodes to field indices on a grid

    Args:
        nodes: Integer array (K, d+1), spatial columns first
        n: Dyadic level
        grid: Grid whose window contains the nodes

    Returns:
        Tuple (time_index, space_index_1, ...) usable as a fancy index
    """
    space_stride, time_stride = _strides(grid, n)
    t_offset = int(round(grid.t0 * 2 ** n))
    time_index = (nodes[:, -1] - t_offset) * time_stride
    space_index = tuple(nodes[:, i] * space_stride for i in range(grid.d))
    return (time_index,) + space_index


def build_dyadic_mesh(grid: SpaceTimeGrid, n: int) -> DyadicMesh:
    """
    Enumerate the level-n dyadic nodes of the grid's closed cylinder

    Args:
        grid: Space-time grid; nx - 1 and 1/dt must be multiples of 2^n
        n: Dyadic level (n >= 0)

    Returns:
        DyadicMesh with (2^n + 1)^(d+1) nodes
    """
    if n < 0:
        raise LevelTooFineError(f"Dyadic level must be nonnegative, got {n}", {'level': n})
    if 2.0 ** (-n) < grid.resolution:
        raise LevelTooFineError(
            f"Dyadic level {n} is finer than the grid resolution {grid.resolution}",
            {'level': n, 'resolution': grid.resolution})
    _strides(grid, n)

    side = 2 ** n + 1
    t_offset = int(round(grid.t0 * 2 ** n))
    nodes = np.indices((side,) * (grid.d + 1)).reshape(grid.d + 1, -1).T.astype(np.int64)
    nodes[:, -1] += t_offset
    return DyadicMesh(level=n, nodes=nodes, d=grid.d, t0=grid.t0)


def neighbor_offsets(d: int) -> np.ndarray:
    """
    All nonzero e in {-1, 0, 1}^{d+1}

    Args:
        d: Spatial dimension

    Returns:
        Integer array of shape (3^{d+1} - 1, d+1); every row has max-norm 1
    """
    if d < 1:
        raise ValidationError(f"Spatial dimension must be positive, got {d}", {'d': d})
    offsets = [e for e in product((-1, 0, 1), repeat=d + 1) if any(e)]
    return np.array(offsets, dtype=np.int64)

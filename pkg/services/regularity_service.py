"""
Regularity Service Module
Sup norms, Hoelder seminorms, dyadic oscillation profiles, the chaining event scan
and the tail-integral moment identity for sampled space-time fields.
"""

import math
from dataclasses import dataclass, field
from itertools import product
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from services.grid_service import SpaceTimeGrid, neighbor_offsets
from utils.errors import (InsufficientSamplesError, LevelTooFineError, OutOfRangeLevelError,
                          ValidationError, WindowMismatchError)

if TYPE_CHECKING:
    from services.solver_service import SpaceTimeField

BRUTE_FORCE_MAX_NODES = 20000
CHAINING_MAX_NODES = 2048
DEFAULT_THETA = 1.0 / 3.0
DEFAULT_Q = 2.0 ** (-1.0 / 6.0)
CHAINING_FACTOR = 4.0
MIN_TAIL_SAMPLES = 1000

Window = Union[None, float, Tuple[float, float]]


# ============================================================================
# PAIRWISE DISPLACEMENT SCANS
# ============================================================================

def _half_space_displacements(shape: Tuple[int, ...]) -> np.ndarray:
    """Nonzero integer displacements with a positive leading nonzero entry"""
    ranges = [np.arange(-(n - 1), n) for n in shape]
    grid = np.stack(np.meshgrid(*ranges, indexing='ij'), axis=-1).reshape(-1, len(shape))
    nonzero = grid != 0
    first = np.argmax(nonzero, axis=1)
    leading = grid[np.arange(grid.shape[0]), first]
    return grid[nonzero.any(axis=1) & (leading > 0)]


def _shifted_pair(values: np.ndarray, delta: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    ahead, base = [], []
    for n, s in zip(values.shape, delta):
        if s >= 0:
            ahead.append(slice(s, n))
            base.append(slice(0, n - s))
        else:
            ahead.append(slice(0, n + s))
            base.append(slice(-s, n))
    return values[tuple(ahead)], values[tuple(base)]


def displacement_envelope(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Largest increment for every lattice displacement

    Args:
        values: Array sampled on a regular lattice

    Returns:
        Tuple (displacements (K, ndim), max |values(y + D) - values(y)| per displacement)
    """
    values = np.asarray(values, dtype=float)
    displacements = _half_space_displacements(values.shape)
    envelope = np.empty(displacements.shape[0])
    for i, delta in enumerate(displacements):
        ahead, base = _shifted_pair(values, delta)
        envelope[i] = np.abs(ahead - base).max()
    return displacements, envelope


def spatial_holder_seminorm(values: np.ndarray, h: float, theta: float) -> float:
    """
    Discrete C^theta seminorm of a spatial field over all node pairs

    Args:
        values: Spatial field on a uniform grid with spacing h
        h: Grid spacing
        theta: Exponent in [0, 1]

    Returns:
        max |v(x) - v(y)| / |x - y|_inf^theta
    """
    displacements, envelope = displacement_envelope(values)
    if envelope.size == 0:
        return 0.0
    dist = np.abs(displacements).max(axis=1) * h
    return float(np.max(envelope / dist ** theta))


def steepest_node(values: np.ndarray) -> Tuple[int, ...]:
    """Node with the largest jump to its successor along any axis"""
    steep = np.zeros(values.shape)
    for axis in range(values.ndim):
        if values.shape[axis] < 2:
            continue
        head = [slice(None)] * values.ndim
        head[axis] = slice(0, -1)
        jump = np.abs(np.diff(values, axis=axis))
        steep[tuple(head)] = np.maximum(steep[tuple(head)], jump)
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(steep)), values.shape))


def chaining_block(values: np.ndarray, max_nodes: int = CHAINING_MAX_NODES) -> Tuple[slice, ...]:
    """
    Sub-window of at most max_nodes nodes centered on the steepest node

    The longest axis is halved (2^k + 1 -> 2^(k-1) + 1) until the block fits.
    """
    shape = list(values.shape)
    while int(np.prod(shape)) > max_nodes and max(shape) > 2:
        axis = int(np.argmax(shape))
        shape[axis] = (shape[axis] + 1) // 2
    center = steepest_node(values)
    block = []
    for n, size, c in zip(values.shape, shape, center):
        start = min(max(c - size // 2, 0), n - size)
        block.append(slice(start, start + size))
    return tuple(block)


# ============================================================================
# FIELD HELPERS
# ============================================================================

def _check_window(field: 'SpaceTimeField', window: Window) -> None:
    if window is None:
        return
    grid = field.grid
    if np.isscalar(window):
        start, end = float(window), float(window) + 1.0
    else:
        start, end = (float(v) for v in window)
    if abs(start - grid.t0) > 1e-9 or abs(end - grid.t1) > 1e-9:
        raise WindowMismatchError(f"Window [{start}, {end}] is not the field window [{grid.t0}, {grid.t1}]",
                                  {'window': [start, end], 'field_window': [grid.t0, grid.t1]})


def _level_strides(grid: SpaceTimeGrid, n: int) -> Tuple[int, int]:
    if n < 0 or 2.0 ** (-n) < grid.resolution * (1 - 1e-12):
        raise LevelTooFineError(f"Dyadic level {n} is finer than the grid resolution {grid.resolution}",
                                {'level': n, 'resolution': grid.resolution})
    scale = 2 ** n
    if (grid.nx - 1) % scale or grid.steps_per_unit % scale:
        raise LevelTooFineError(f"Dyadic level {n} does not align with the grid (nx={grid.nx}, dt={grid.dt})",
                                {'level': n})
    if abs(grid.t0 * scale - round(grid.t0 * scale)) > 1e-9:
        raise WindowMismatchError(f"Window start {grid.t0} is not a level-{n} dyadic time", {'t0': grid.t0})
    return (grid.nx - 1) // scale, grid.steps_per_unit // scale


def _level_samples(field: 'SpaceTimeField', n: int) -> np.ndarray:
    """Field restricted to the level-n dyadic nodes, axes (time, space...)"""
    space_stride, time_stride = _level_strides(field.grid, n)
    index = (slice(None, None, time_stride),) + (slice(None, None, space_stride),) * field.grid.d
    return np.asarray(field.values)[index]


def sup_norm(field: 'SpaceTimeField', window: Window = None) -> float:
    """
    ||u||_{L^inf} over the closed window

    Args:
        field: Space-time field
        window: T, (T, T + 1) or None for the field's own window

    Returns:
        Largest absolute nodal value
    """
    _check_window(field, window)
    values = np.asarray(field.values)
    return float(np.abs(values).max()) if values.size else 0.0


# ============================================================================
# OSCILLATION PROFILE (closed dyadic cubes)
# ============================================================================

@dataclass
class OscProfile:
    levels: List[int]
    gamma: List[float]

    def at(self, n: int) -> float:
        if n not in self.levels:
            raise OutOfRangeLevelError(f"Level {n} is not in the profile (levels {self.levels})",
                                       {'level': n, 'levels': self.levels})
        return self.gamma[self.levels.index(n)]

    def to_dict(self) -> Dict:
        return {'levels': self.levels, 'gamma': self.gamma}


def _closed_block_reduce(values: np.ndarray, strides: Sequence[int], reducer) -> np.ndarray:
    """Reduce over closed blocks [j s, (j + 1) s] along every axis (blocks share faces)"""
    out = values
    for axis, s in enumerate(strides):
        length = out.shape[axis]
        blocks = (length - 1) // s
        body = np.take(out, np.arange(blocks * s), axis=axis)
        shape = body.shape[:axis] + (blocks, s) + body.shape[axis + 1:]
        open_part = reducer(body.reshape(shape), axis=axis + 1)
        right_face = np.take(out, np.arange(1, blocks + 1) * s, axis=axis)
        out = reducer(np.stack([open_part, right_face]), axis=0)
    return out


def osc_profile(field: 'SpaceTimeField', n_max: int) -> OscProfile:
    """
    gamma_n = largest oscillation over the closed level-n cubes, n = 0..n_max

    Args:
        field: Space-time field
        n_max: Finest level; 2^-n_max must not be finer than the grid

    Returns:
        OscProfile
    """
    grid = field.grid
    values = np.asarray(field.values, dtype=float)
    levels, gamma = [], []
    for n in range(n_max + 1):
        space_stride, time_stride = _level_strides(grid, n)
        strides = (time_stride,) + (space_stride,) * grid.d
        high = _closed_block_reduce(values, strides, np.max)
        low = _closed_block_reduce(values, strides, np.min)
        levels.append(n)
        gamma.append(float((high - low).max()))
    return OscProfile(levels=levels, gamma=gamma)


def dyadic_level(delta: float) -> int:
    """[log2(1/|delta|)]"""
    return int(math.floor(math.log2(1.0 / delta) + 1e-12))


def increment_bound(profile: OscProfile, delta: float) -> float:
    """
    Oscillation bound 2 gamma_[log2(1/|delta|)] for increments over a displacement

    Args:
        profile: Oscillation profile of the field
        delta: Max-norm of the space-time displacement, 0 < delta <= 1

    Returns:
        Upper bound for |g(y + delta) - g(y)|
    """
    if not 0 < delta <= 1:
        raise OutOfRangeLevelError(f"Displacement must lie in (0, 1], got {delta}", {'delta': delta})
    return 2.0 * profile.at(dyadic_level(delta))


# ============================================================================
# DYADIC NEIGHBOR INCREMENTS AND THE CHAINING EVENT
# ============================================================================

class DyadicIncrements:
    """
    Increments xi = |u((k + e) 2^-n) - u(k 2^-n)| over all level-n nodes k
    and offsets e with max-norm 1, for n = 0..n_max
    """

    def __init__(self, field: 'SpaceTimeField', n_max: int):
        self.n_max = int(n_max)
        self.d = field.grid.d
        offsets = neighbor_offsets(self.d)
        # stored offsets are (space..., time); sample arrays are (time, space...)
        axis_offsets = np.concatenate([offsets[:, -1:], offsets[:, :-1]], axis=1)
        self.offset_steps = np.abs(offsets[:, -1]) + np.abs(offsets[:, :-1]).max(axis=1)
        self.sorted_xi: List[np.ndarray] = []
        self.offset_max: List[np.ndarray] = []
        self.anchor_sup: float = 0.0
        for n in range(self.n_max + 1):
            samples = _level_samples(field, n)
            per_offset, chunks = np.zeros(len(offsets)), []
            for i, delta in enumerate(axis_offsets):
                ahead, base = _shifted_pair(samples, delta)
                xi = np.abs(ahead - base).ravel()
                chunks.append(xi)
                per_offset[i] = xi.max() if xi.size else 0.0
            self.sorted_xi.append(np.sort(np.concatenate(chunks)))
            self.offset_max.append(per_offset)
            if n == self.n_max:
                self.anchor_sup = float(np.abs(samples).max())

    def level_max(self, n: int) -> float:
        xi = self.sorted_xi[n]
        return float(xi[-1]) if xi.size else 0.0

    def count_at_least(self, n: int, threshold: float) -> int:
        xi = self.sorted_xi[n]
        return int(xi.size - np.searchsorted(xi, threshold, side='left'))

    def critical_K(self, q: float) -> float:
        """Smallest K at which no level-n increment reaches K q^n"""
        return max(self.level_max(n) / q ** n for n in range(self.n_max + 1))

    def restricted_seminorm(self, theta: float) -> float:
        """Exact sup of |xi| / dist^theta over dyadic neighbor pairs of levels 0..n_max"""
        best = 0.0
        for n in range(self.n_max + 1):
            dist = self.offset_steps * 2.0 ** (-n)
            best = max(best, float(np.max(self.offset_max[n] / dist ** theta)))
        return best


def geometric_sup_bound(K: float, q: float, n_max: int) -> float:
    """K (q + q^2 + ... + q^n_max) = K q (1 - q^n_max) / (1 - q)"""
    return K * q * (1.0 - q ** n_max) / (1.0 - q)


@dataclass
class ChainingEventReport:
    """Exceedances of xi >= K q^n per level, and the implications of no exceedance"""

    K: float
    q: float
    n_max: int
    counts: List[int]
    level_max: List[float]
    critical_K: float
    dyadic_sup: float
    sup_bound: float

    @property
    def event_occurred(self) -> bool:
        return any(c > 0 for c in self.counts)

    @property
    def sup_implication_holds(self) -> bool:
        """Without the event, the dyadic sup norm obeys the telescoping bound"""
        return self.event_occurred or self.dyadic_sup <= self.sup_bound * (1 + 1e-12)

    def to_dict(self) -> Dict:
        return {
            'K': self.K, 'q': self.q, 'n_max': self.n_max,
            'counts': self.counts, 'level_max': self.level_max,
            'event_occurred': self.event_occurred, 'critical_K': self.critical_K,
            'dyadic_sup': self.dyadic_sup, 'sup_bound': self.sup_bound,
            'sup_implication_holds': self.sup_implication_holds
        }


def _check_chaining_params(K: float, q: float) -> None:
    if not 0 < q < 1:
        raise ValidationError(f"q must lie in (0, 1), got {q}", {'q': q})
    if not K > 0:
        raise ValidationError(f"K must be positive, got {K}", {'K': K})


def chaining_event_scan(field: 'SpaceTimeField', K: float, q: float = DEFAULT_Q,
                        n_max: Optional[int] = None,
                        increments: Optional[DyadicIncrements] = None) -> ChainingEventReport:
    """
    Scan the events xi_k^{n,e} >= K q^n for n <= n_max

    Args:
        field: Space-time field
        K: Threshold constant
        q: Ratio in (0, 1)
        n_max: Finest level; defaults to the grid's finest dyadic level
        increments: Precomputed increments of the same field

    Returns:
        ChainingEventReport with per-level exceedance counts
    """
    _check_chaining_params(K, q)
    if n_max is None:
        n_max = field.grid.max_dyadic_level
    if increments is None or increments.n_max != n_max:
        increments = DyadicIncrements(field, n_max)
    return ChainingEventReport(
        K=float(K), q=float(q), n_max=int(n_max),
        counts=[increments.count_at_least(n, K * q ** n) for n in range(n_max + 1)],
        level_max=[increments.level_max(n) for n in range(n_max + 1)],
        critical_K=increments.critical_K(q),
        dyadic_sup=increments.anchor_sup,
        sup_bound=geometric_sup_bound(K, q, n_max))


# ============================================================================
# HOLDER SEMINORM
# ============================================================================

class HolderMode:
    BRUTE_FORCE = 'brute_force'
    DYADIC_CERTIFIED = 'dyadic_certified'


@dataclass
class HolderReport:
    window: Tuple[float, float]
    sup_norm: float
    theta: float
    seminorm: float
    mode: str
    upper_bound: float
    metric: str = '|t1 - t2| + |x1 - x2|_inf'

    def to_dict(self) -> Dict:
        return {'window': list(self.window), 'sup_norm': self.sup_norm, 'theta': self.theta,
                'seminorm': self.seminorm, 'mode': self.mode, 'upper_bound': self.upper_bound,
                'metric': self.metric}


class HolderAnalyzer:
    """
    Per-field analyzer; scans are computed once and reused for every theta

    Brute-force mode evaluates every node pair. Dyadic-certified mode reports the
    exact sup over dyadic neighbor pairs and an oscillation-based upper certificate.
    """

    def __init__(self, field: 'SpaceTimeField', mode: Optional[str] = None):
        self.field = field
        self.grid = field.grid
        if mode is None:
            mode = HolderMode.BRUTE_FORCE if self.grid.n_nodes <= BRUTE_FORCE_MAX_NODES \
                else HolderMode.DYADIC_CERTIFIED
        if mode not in (HolderMode.BRUTE_FORCE, HolderMode.DYADIC_CERTIFIED):
            raise ValidationError(f"Unknown seminorm mode '{mode}'", {'mode': mode})
        self.mode = mode
        self.sup = sup_norm(field)
        self._envelope: Optional[Tuple[np.ndarray, np.ndarray]] = None
        self._block_envelope: Optional[Tuple[np.ndarray, np.ndarray, int]] = None
        self._increments: Optional[DyadicIncrements] = None
        self._profile: Optional[OscProfile] = None

    @property
    def n_max(self) -> int:
        return self.grid.max_dyadic_level

    @property
    def increments(self) -> DyadicIncrements:
        if self._increments is None:
            self._increments = DyadicIncrements(self.field, self.n_max)
        return self._increments

    @property
    def profile(self) -> OscProfile:
        if self._profile is None:
            self._profile = osc_profile(self.field, self.n_max)
        return self._profile

    def _pair_envelope(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        displacements, envelope = displacement_envelope(values)
        dist = np.abs(displacements[:, 0]) * self.grid.dt + \
            np.abs(displacements[:, 1:]).max(axis=1) * self.grid.h
        return dist, envelope

    def _brute_force(self, theta: float) -> float:
        if self._envelope is None:
            self._envelope = self._pair_envelope(self.field.values)
        dist, envelope = self._envelope
        return float(np.max(envelope / dist ** theta)) if envelope.size else 0.0

    def block_seminorm(self, theta: float) -> Tuple[float, int]:
        """
        Exact seminorm over every node pair of the chaining sub-window

        Returns:
            Tuple (seminorm, nodes in the sub-window)
        """
        if self._block_envelope is None:
            values = np.asarray(self.field.values, dtype=float)
            block = values[chaining_block(values)]
            self._block_envelope = self._pair_envelope(block) + (int(block.size),)
        dist, envelope, nodes = self._block_envelope
        return (float(np.max(envelope / dist ** theta)) if envelope.size else 0.0), nodes

    def certificate(self, theta: float) -> float:
        """Upper bound from the oscillation profile, valid for every node pair"""
        gamma = self.profile.gamma
        bound = 2.0 * gamma[self.n_max] / min(self.grid.h, self.grid.dt) ** theta
        for n in range(self.n_max):
            bound = max(bound, 2.0 * gamma[n] / 2.0 ** (-(n + 1) * theta))
        return bound

    def seminorm(self, theta: float) -> HolderReport:
        if not 0 <= theta <= 1:
            raise ValidationError(f"theta must lie in [0, 1], got {theta}", {'theta': theta})
        if self.mode == HolderMode.BRUTE_FORCE:
            value = self._brute_force(theta)
            upper = value
        else:
            value = self.increments.restricted_seminorm(theta)
            upper = max(value, self.certificate(theta))
        return HolderReport(window=(self.grid.t0, self.grid.t1), sup_norm=self.sup,
                            theta=float(theta), seminorm=value, mode=self.mode, upper_bound=upper)

    def holder_norm(self, theta: float) -> float:
        """||u||_{C^theta} = sup norm + seminorm"""
        return self.sup + self.seminorm(theta).seminorm

    def chaining_implication(self, theta: float) -> Dict:
        """
        Check the chaining conclusion at q = 2^-theta

        No event at K means K > critical_K, so the conclusion for every such K
        reduces to seminorm <= 4 critical_K. The seminorm is the exact all-pairs
        value on a sub-window of at most CHAINING_MAX_NODES nodes, in either mode.
        """
        q = 2.0 ** (-theta)
        critical = self.increments.critical_K(q)
        seminorm, nodes = self.block_seminorm(theta)
        return {'theta': float(theta), 'q': q, 'critical_K': critical, 'seminorm': seminorm,
                'nodes': nodes, 'holds': seminorm <= CHAINING_FACTOR * critical * (1 + 1e-12) + 1e-300}

    def record(self, thetas: Sequence[float], thresholds: Sequence[float] = ()) -> Dict:
        """Per-sample analysis record"""
        out = {'sup_norm': self.sup, 'mode': self.mode, 'window': [self.grid.t0, self.grid.t1],
               'seminorm': {}, 'chaining': {}, 'events': {}}
        for theta in thetas:
            key = f"{float(theta):.4g}"
            out['seminorm'][key] = self.seminorm(theta).seminorm
            out['chaining'][key] = self.chaining_implication(theta)
            q = 2.0 ** (-theta)
            for K in thresholds:
                scan = chaining_event_scan(self.field, K, q, self.n_max, self.increments)
                out['events'][f"{key}@{float(K):.4g}"] = scan.event_occurred
        return out


def holder_seminorm(field: 'SpaceTimeField', theta: float, window: Window = None,
                    mode: Optional[str] = None) -> HolderReport:
    """
    Joint space-time Hoelder seminorm of a field over its window

    Args:
        field: Space-time field
        theta: Exponent in (0, 1)
        window: T, (T, T + 1) or None
        mode: Force 'brute_force' or 'dyadic_certified'; chosen by node count when omitted

    Returns:
        HolderReport naming the mode used
    """
    _check_window(field, window)
    return HolderAnalyzer(field, mode).seminorm(theta)


# ============================================================================
# TAIL INTEGRATION
# ============================================================================

@dataclass
class TailMoment:
    s: float
    direct: float
    tail_integral: float

    @property
    def relative_gap(self) -> float:
        scale = max(abs(self.direct), abs(self.tail_integral))
        return 0.0 if scale == 0 else abs(self.direct - self.tail_integral) / scale

    @property
    def agrees(self) -> bool:
        return self.relative_gap <= 0.01

    def to_dict(self) -> Dict:
        return {'s': self.s, 'direct': self.direct, 'tail_integral': self.tail_integral,
                'relative_gap': self.relative_gap, 'agrees': self.agrees}


def survival_function(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted sample values x_i and P{U >= x_i}"""
    x = np.sort(np.asarray(samples, dtype=float))
    m = x.size
    return x, (m - np.arange(m)) / m


def tail_to_moments(samples: Sequence[float], s: float,
                    min_samples: int = MIN_TAIL_SAMPLES) -> TailMoment:
    """
    E U^s directly and as s * integral of x^(s-1) P{U >= x} dx

    Args:
        samples: Nonnegative samples of U
        s: Moment order, s >= 1
        min_samples: Smallest accepted ensemble

    Returns:
        TailMoment with both estimates
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size < min_samples:
        raise InsufficientSamplesError(f"Need at least {min_samples} samples, got {samples.size}",
                                       {'samples': int(samples.size), 'required': min_samples})
    if s < 1:
        raise ValidationError(f"Moment order must be at least 1, got {s}", {'s': s})
    if np.any(samples < 0):
        raise ValidationError("Tail integration needs nonnegative samples")
    x, survival = survival_function(samples)
    # the survival function is constant on (x_{i-1}, x_i]
    previous = np.concatenate([[0.0], x[:-1]])
    tail = float(np.sum(survival * (x ** s - previous ** s)))
    return TailMoment(s=float(s), direct=float(np.mean(samples ** s)), tail_integral=tail)
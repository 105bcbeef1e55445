"""
Noise Service Module
Counter-based Brownian drivers w^j and the forcing profiles f^j(x, t) that realize the
sup-norm (B-infinity) and L^p (B^p) normalization conditions.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from services.grid_service import SpaceTimeGrid
from utils.errors import ConditionViolationError, NormalizationError, ValidationError

NORM_TOLERANCE = 1e-9
REFINE_TAG = 0x5EF1E
DEFAULT_CHECK_TIMES = tuple(np.linspace(0.0, 1.0, 9))


# ============================================================================
# BROWNIAN PATHS
# ============================================================================

def stream(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator keyed by (seed, *keys); independent of call order"""
    if seed < 0 or any(k < 0 for k in keys):
        raise ValidationError("Seeds and stream keys must be nonnegative",
                              {'seed': seed, 'keys': list(keys)})
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True, eq=False)
class NoisePath:
    """
    Increments of N independent Brownian motions on a uniform time grid

    increments[j, m] = w^j((m + 1) dt) - w^j(m dt)
    """

    seed: int
    sample_index: int
    j_count: int
    dt: float
    increments: np.ndarray
    level: int = 0

    @property
    def n_steps(self) -> int:
        return int(self.increments.shape[1])

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    def values(self) -> np.ndarray:
        """w^j at the step times 0, dt, ..., horizon"""
        zeros = np.zeros((self.j_count, 1))
        return np.concatenate([zeros, np.cumsum(self.increments, axis=1)], axis=1)

    def describe(self) -> Dict:
        return {'seed': self.seed, 'sample_index': self.sample_index, 'j_count': self.j_count,
                'dt': self.dt, 'n_steps': self.n_steps, 'level': self.level}


def path_increments(seed: int, sample_index: int, j_count: int, dt: float, n_steps: int) -> np.ndarray:
    out = np.empty((j_count, n_steps))
    scale = math.sqrt(dt)
    for j in range(j_count):
        out[j] = stream(seed, sample_index, j).standard_normal(n_steps) * scale
    return out


def sample_path(seed: int, sample_index: int, j_count: int, dt: float, horizon: float) -> NoisePath:
    """
    Deterministic Brownian path for one sample

    Args:
        seed: Master seed
        sample_index: Sample number
        j_count: Number of Brownian motions N
        dt: Step
        horizon: Final time, at least dt

    Returns:
        NoisePath whose increments depend only on (seed, sample_index, j, step)
    """
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}", {'dt': dt})
    if horizon < dt:
        raise ValidationError(f"horizon {horizon} is shorter than one step {dt}", {'horizon': horizon})
    if j_count < 1:
        raise ValidationError(f"j_count must be positive, got {j_count}", {'j_count': j_count})
    n_steps = int(round(horizon / dt))
    return NoisePath(seed=int(seed), sample_index=int(sample_index), j_count=int(j_count), dt=float(dt),
                     increments=path_increments(seed, sample_index, j_count, dt, n_steps))


def refine_path(path: NoisePath) -> NoisePath:
    """
    Halve the step of a path by Brownian-bridge splitting

    Each increment D becomes D/2 + sqrt(dt/4) Z and D/2 - sqrt(dt/4) Z with Z
    keyed by (seed, sample_index, j, level), so coarse sums are preserved exactly.
    """
    level = path.level + 1
    fine = np.empty((path.j_count, 2 * path.n_steps))
    spread = math.sqrt(path.dt / 4.0)
    for j in range(path.j_count):
        z = stream(path.seed, path.sample_index, j, REFINE_TAG, level).standard_normal(path.n_steps)
        first = 0.5 * path.increments[j] + spread * z
        fine[j, 0::2] = first
        fine[j, 1::2] = path.increments[j] - first
    return replace(path, dt=path.dt / 2.0, increments=fine, level=level)


def zero_path(j_count: int, dt: float, horizon: float) -> NoisePath:
    """Degenerate path with all increments 0"""
    return NoisePath(seed=0, sample_index=0, j_count=j_count, dt=dt,
                     increments=np.zeros((j_count, int(round(horizon / dt)))))


# ============================================================================
# NORMALIZATION CONDITIONS
# ============================================================================

@dataclass(frozen=True)
class NoiseCondition:
    """B_INFTY: |f^j| <= 1 everywhere. B_P: ||f^j(., t)||_{L^p(Q)} <= 1 for every t."""

    kind: str = 'b_infty'
    p: Optional[float] = None

    B_INFTY = 'b_infty'
    B_P = 'b_p'

    def __post_init__(self):
        if self.kind not in (self.B_INFTY, self.B_P):
            raise ValidationError(f"Unknown noise condition '{self.kind}'", {'condition': self.kind})
        if self.kind == self.B_P and (self.p is None or not self.p > 1):
            raise ValidationError(f"B^p condition needs p > 1, got {self.p}", {'p': self.p})

    def norm(self, values: np.ndarray, h: float, d: int) -> np.ndarray:
        """Per-profile norm over the trailing d axes"""
        axes = tuple(range(-d, 0))
        if self.kind == self.B_INFTY:
            return np.abs(values).max(axis=axes)
        return (np.sum(np.abs(values) ** self.p, axis=axes) * h ** d) ** (1.0 / self.p)

    def label(self) -> str:
        return 'B^inf' if self.kind == self.B_INFTY else f"B^{self.p:g}"

    def describe(self) -> Dict:
        return {'kind': self.kind, 'p': self.p}


@dataclass
class ForcingCertificate:
    condition: NoiseCondition
    bound: float
    verified: bool
    nx: int
    times: List[float]

    def to_dict(self) -> Dict:
        return {'condition': self.condition.describe(), 'bound': self.bound,
                'verified': self.verified, 'nx': self.nx, 'times': self.times}


# ============================================================================
# FORCING PROFILES
# ============================================================================

SpatialProfile = Callable[[np.ndarray], np.ndarray]


@dataclass(eq=False)
class ForcingSpec:
    """
    Profiles f^j(x, t) = spatial_j(x) * temporal(t), j = 1..N

    Feedback forcings multiply by clip(u(x, t-), -1, 1) of the running solution.
    """

    kind: str
    d: int
    j_count: int
    condition: NoiseCondition
    spatial: SpatialProfile
    temporal: Callable[[float], float] = lambda t: 1.0
    feedback: bool = False
    time_dependent: bool = False
    params: Dict = field(default_factory=dict)
    certificate: Optional[ForcingCertificate] = None

    @property
    def is_zero(self) -> bool:
        return self.kind == 'zero'

    def spatial_values(self, grid: SpaceTimeGrid) -> np.ndarray:
        """spatial_j at every node, shape (N, *spatial_shape), zero on the boundary"""
        values = np.asarray(self.spatial(grid.points()), dtype=float)
        values = np.broadcast_to(values, (self.j_count,) + grid.spatial_shape).copy()
        boundary = np.ones(grid.spatial_shape, dtype=bool)
        boundary[grid.interior_slice()] = False
        values[:, boundary] = 0.0
        return values

    def evaluate(self, grid: SpaceTimeGrid, t: float, u: Optional[np.ndarray] = None) -> np.ndarray:
        """
        f^j(., t) on the grid

        Args:
            grid: Spatial grid
            t: Time
            u: Batch of current solutions (B, *spatial_shape), feedback kinds only

        Returns:
            (N, *spatial_shape), or (B, N, *spatial_shape) for feedback forcings
        """
        values = self.spatial_values(grid) * self.temporal(t)
        if not self.feedback:
            return values
        if u is None:
            raise ValidationError("Feedback forcing needs the current solution")
        return values[None] * np.clip(u, -1.0, 1.0)[:, None]

    def describe(self) -> Dict:
        return {'kind': self.kind, 'd': self.d, 'j_count': self.j_count,
                'condition': self.condition.describe(), 'params': dict(self.params),
                'certificate': self.certificate.to_dict() if self.certificate else None}


def _check_amplitude(name: str, value: float) -> float:
    if abs(value) > 1:
        raise NormalizationError(f"{name} must not exceed 1 in absolute value, got {value}",
                                 {name: value})
    return float(value)


def _profile_stack(d: int, j_count: int, builder: Callable[[np.ndarray, int], np.ndarray]) -> SpatialProfile:
    return lambda points: np.stack([builder(points, j) for j in range(1, j_count + 1)])


def _constant(d: int, j_count: int, value: float = 1.0) -> SpatialProfile:
    value = _check_amplitude('value', value)
    return _profile_stack(d, j_count, lambda p, j: np.full(p.shape[:-1], value))


def _smooth_bump(d: int, j_count: int, amplitude: float = 1.0) -> SpatialProfile:
    amplitude = _check_amplitude('amplitude', amplitude)
    return _profile_stack(d, j_count, lambda p, j: amplitude * np.prod(np.sin(j * np.pi * p), axis=-1))


def _checkerboard(d: int, j_count: int, amplitude: float = 1.0, cells: int = 8) -> SpatialProfile:
    amplitude = _check_amplitude('amplitude', amplitude)
    if cells < 1:
        raise ValidationError(f"cells must be positive, got {cells}", {'cells': cells})

    def board(p, j):
        index = np.minimum(np.floor(p * cells), cells - 1).astype(np.int64)
        parity = (index.sum(axis=-1) + j - 1) % 2
        return amplitude * np.where(parity == 0, 1.0, -1.0)
    return _profile_stack(d, j_count, board)


def spike_profile(d: int, eps: float, p: float, x0: Optional[Sequence[float]] = None) -> Callable:
    """eps^(-d/p) on the half-open cube x0 + [-eps/2, eps/2)^d"""
    center = np.full(d, 0.5) if x0 is None else np.asarray(x0, dtype=float).reshape(d)
    height = eps ** (-d / p)

    def spike(points):
        lo, hi = center - eps / 2.0, center + eps / 2.0
        inside = np.all((points >= lo - 1e-12) & (points < hi - 1e-12), axis=-1)
        return np.where(inside, height, 0.0)
    return spike


_BASE_PROFILES = {
    'constant_one': _constant,
    'smooth_bump': _smooth_bump,
    'checkerboard': _checkerboard,
}

FORCING_KINDS = ('zero', 'constant_one', 'smooth_bump', 'checkerboard', 'spike',
                 'time_modulated', 'exp_decay', 'feedback')


def _base_profile(d: int, j_count: int, params: Dict) -> SpatialProfile:
    base = params.pop('base', 'constant_one')
    if base not in _BASE_PROFILES:
        raise ValidationError(f"Unknown base profile '{base}'", {'base': base, 'known': sorted(_BASE_PROFILES)})
    base_keys = {'constant_one': ('value',), 'smooth_bump': ('amplitude',),
                 'checkerboard': ('amplitude', 'cells')}[base]
    base_params = {k: params.pop(k) for k in base_keys if k in params}
    return _BASE_PROFILES[base](d, j_count, **base_params)


def make_forcing(kind: str, params: Optional[Dict] = None, d: int = 1, j_count: int = 1,
                 grid: Optional[SpaceTimeGrid] = None) -> ForcingSpec:
    """
    Build a forcing from a named kind

    Args:
        kind: One of FORCING_KINDS
        params: Kind parameters
        d: Spatial dimension
        j_count: Number of Brownian drivers N
        grid: When given, the normalization certificate is verified on it

    Returns:
        ForcingSpec (certified when a grid is given)
    """
    params = dict(params or {})
    original = dict(params)
    if j_count < 1:
        raise ValidationError(f"j_count must be positive, got {j_count}", {'j_count': j_count})
    condition = NoiseCondition()
    temporal = lambda t: 1.0
    feedback = time_dependent = False

    try:
        if kind == 'zero':
            spatial = _profile_stack(d, j_count, lambda p, j: np.zeros(p.shape[:-1]))
        elif kind in _BASE_PROFILES:
            spatial = _BASE_PROFILES[kind](d, j_count, **params)
            params = {}
        elif kind == 'spike':
            eps = float(params.pop('eps'))
            p = float(params.pop('p'))
            x0 = params.pop('x0', None)
            condition = NoiseCondition(NoiseCondition.B_P, p)
            if grid is not None and eps < 2 * grid.h * (1 - 1e-12):
                raise NormalizationError(f"Spike width {eps} is below 2h = {2 * grid.h}",
                                         {'eps': eps, 'h': grid.h})
            single = spike_profile(d, eps, p, x0)
            spatial = lambda points: np.stack([single(points)] * j_count)
        elif kind == 'time_modulated':
            frequency = float(params.pop('frequency', 1.0))
            spatial = _base_profile(d, j_count, params)
            temporal = lambda t: math.cos(2.0 * math.pi * frequency * t)
            time_dependent = True
        elif kind == 'exp_decay':
            rate = float(params.pop('rate'))
            if rate < 0:
                raise ValidationError(f"Decay rate must be nonnegative, got {rate}", {'rate': rate})
            spatial = _base_profile(d, j_count, params)
            temporal = lambda t: math.exp(-rate * t)
            time_dependent = True
        elif kind == 'feedback':
            gain = _check_amplitude('gain', float(params.pop('gain', 1.0)))
            base = _base_profile(d, j_count, params)
            spatial = lambda points: gain * base(points)
            feedback = True
        else:
            raise ValidationError(f"Unknown forcing kind '{kind}'", {'kind': kind, 'known': list(FORCING_KINDS)})
    except KeyError as e:
        raise ValidationError(f"Forcing '{kind}' is missing parameter {e}", {'kind': kind})
    except TypeError as e:
        raise ValidationError(f"Invalid parameters for forcing '{kind}': {e}", {'kind': kind})

    if params:
        raise ValidationError(f"Unknown parameters for forcing '{kind}': {sorted(params)}",
                              {'kind': kind, 'unknown': sorted(params)})

    forcing = ForcingSpec(kind=kind, d=d, j_count=j_count, condition=condition, spatial=spatial,
                          temporal=temporal, feedback=feedback, time_dependent=time_dependent,
                          params=original)
    if grid is not None:
        certificate = verify_forcing(forcing, grid)
        if not certificate.verified:
            raise NormalizationError(f"Forcing '{kind}' violates {condition.label()}: norm {certificate.bound}",
                                     certificate.to_dict())
    return forcing


def verify_forcing(forcing: ForcingSpec, grid: SpaceTimeGrid,
                   times: Sequence[float] = DEFAULT_CHECK_TIMES) -> ForcingCertificate:
    """
    Measure the normalization of every profile on the grid at sampled times

    Args:
        forcing: Forcing to check (attached certificate is replaced)
        grid: Grid whose nodes are used for the discrete norms
        times: Times (relative to the grid window start) to sample

    Returns:
        ForcingCertificate; verified when every measured norm is <= 1 + tolerance
    """
    if forcing.d != grid.d:
        raise ValidationError(f"Forcing dimension {forcing.d} does not match grid dimension {grid.d}")
    checked = [grid.t0 + float(t) for t in times] if forcing.time_dependent else [grid.t0]
    saturated = np.ones((1,) + grid.spatial_shape)
    bound = 0.0
    for t in checked:
        values = forcing.evaluate(grid, t, saturated if forcing.feedback else None)
        if forcing.feedback:
            values = values[0]
        bound = max(bound, float(np.max(forcing.condition.norm(values, grid.h, grid.d))))
    certificate = ForcingCertificate(condition=forcing.condition, bound=bound,
                                     verified=bound <= 1.0 + NORM_TOLERANCE,
                                     nx=grid.nx, times=checked)
    forcing.certificate = certificate
    return certificate


def require_certified(forcing: ForcingSpec, grid: SpaceTimeGrid) -> ForcingCertificate:
    """Verify on the grid (reusing a certificate for the same nx) or raise"""
    certificate = forcing.certificate
    if certificate is None or certificate.nx != grid.nx:
        certificate = verify_forcing(forcing, grid)
    if not certificate.verified:
        raise ConditionViolationError(
            f"Forcing '{forcing.kind}' violates {forcing.condition.label()} (norm {certificate.bound:.6g})",
            certificate.to_dict())
    return certificate

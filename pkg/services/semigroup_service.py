"""
Semigroup Service Module
Deterministic parabolic problem dv/dt = Av with zero Dirichlet data: spectral and
Crank-Nicolson backends, the discrete Green kernel and the smoothing diagnostics.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft
from scipy import sparse
from scipy.sparse.linalg import splu

from services.grid_service import SpaceTimeGrid
from services.operator_service import DiscreteOperator, OperatorForm, OperatorSpec
from services.regularity_service import spatial_holder_seminorm
from utils.errors import (BackendMismatchError, BoundarySourceError, InsufficientPointsError,
                          NegativeTimeError, ShapeMismatchError, ValidationError)
from utils.stats_utils import loglog_slope, ratio_spread

DEFAULT_KERNEL_TIMES = tuple(np.logspace(np.log10(4e-4), -2, 6))
DEFAULT_SMOOTHING_TIMES = tuple(np.logspace(-4, -2, 9))
NASH_LADDER = tuple(round(0.05 * i, 2) for i in range(1, 11))
NASH_SPREAD_LIMIT = 3.0
SLOPE_TOLERANCE = 0.15
MIN_KERNEL_STEPS = 200
NASH_STEPS = 100


class BackendKind(str, Enum):
    SPECTRAL = 'spectral'
    IMPLICIT_FD = 'implicit_fd'


# ============================================================================
# BACKEND
# ============================================================================

class SemigroupBackend:
    """
    Solution operator S_t of the deterministic problem on one grid

    Spectral works on the Dirichlet sine modes of the cube (Laplacian only);
    ImplicitFD steps the finite-difference operator with Crank-Nicolson.
    """

    def __init__(self, spec: OperatorSpec, grid: SpaceTimeGrid,
                 kind: BackendKind = BackendKind.SPECTRAL,
                 n_modes: Optional[int] = None,
                 substeps: Optional[int] = None,
                 backward_euler: bool = False):
        """
        Args:
            spec: Operator (validated or not)
            grid: Space-time grid; only the spatial part and dt are used
            kind: Backend kind
            n_modes: Modes kept per axis (Spectral); defaults to all nx - 2
            substeps: Inner steps per dt (ImplicitFD); defaults to ceil(dt / h)
            backward_euler: Use backward Euler instead of Crank-Nicolson (ImplicitFD)
        """
        self.spec = spec
        self.grid = grid
        self.kind = BackendKind(kind)
        self.backward_euler = bool(backward_euler)
        self._factors: Dict[Tuple[float, bool], object] = {}

        if self.kind is BackendKind.SPECTRAL:
            if not spec.is_laplacian(grid):
                raise BackendMismatchError("Spectral backend requires a = identity, b = 0, c = 0",
                                           {'operator': spec.name})
            full = grid.nx - 2
            self.n_modes = full if n_modes is None else int(n_modes)
            if not 1 <= self.n_modes <= full:
                raise ValidationError(f"n_modes must lie in [1, {full}], got {n_modes}",
                                      {'n_modes': n_modes})
            self.substeps = 1
            self.operator = None
            self._eigenvalues, self._mask = self._modal_tables()
        else:
            self.n_modes = None
            auto = max(1, math.ceil(grid.dt / grid.h - 1e-12))
            self.substeps = auto if substeps is None else int(substeps)
            if self.substeps < 1:
                raise ValidationError(f"substeps must be positive, got {substeps}", {'substeps': substeps})
            self.operator = DiscreteOperator(spec, grid)
            self._eigenvalues, self._mask = None, None

    # ------------------------------------------------------------------
    # shared helpers
    # ------------------------------------------------------------------

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def dt_inner(self) -> float:
        return self.grid.dt / self.substeps

    @property
    def axes(self) -> Tuple[int, ...]:
        return tuple(range(-self.d, 0))

    def with_options(self, **overrides) -> 'SemigroupBackend':
        """Copy of this backend with some constructor arguments replaced"""
        options = {'kind': self.kind, 'n_modes': self.n_modes,
                   'substeps': None if self.kind is BackendKind.SPECTRAL else self.substeps,
                   'backward_euler': self.backward_euler}
        options.update(overrides)
        grid = options.pop('grid', self.grid)
        return SemigroupBackend(self.spec, grid, **options)

    def describe(self) -> Dict:
        return {'kind': self.kind.value, 'n_modes': self.n_modes, 'substeps': self.substeps,
                'backward_euler': self.backward_euler, 'operator': self.spec.describe()}

    def _check_field(self, F: np.ndarray) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        if tuple(F.shape[-self.d:]) != self.grid.spatial_shape:
            raise ShapeMismatchError(f"Field shape {F.shape} does not end with {self.grid.spatial_shape}",
                                     {'shape': list(F.shape), 'expected': list(self.grid.spatial_shape)})
        return F

    def interior(self, F: np.ndarray) -> np.ndarray:
        """Interior values, keeping leading batch axes"""
        return self._check_field(F)[(Ellipsis,) + self.grid.interior_slice()]

    def embed(self, interior: np.ndarray) -> np.ndarray:
        """Interior values back to full nodes with zero boundary"""
        lead = interior.shape[:-self.d]
        out = np.zeros(lead + self.grid.spatial_shape)
        out[(Ellipsis,) + self.grid.interior_slice()] = interior
        return out

    # ------------------------------------------------------------------
    # spectral tables
    # ------------------------------------------------------------------

    def _modal_tables(self) -> Tuple[np.ndarray, np.ndarray]:
        k = np.arange(1, self.grid.nx - 1)
        ks = np.meshgrid(*([k] * self.d), indexing='ij')
        eigenvalues = np.pi ** 2 * sum(kk.astype(float) ** 2 for kk in ks)
        mask = np.ones(eigenvalues.shape, dtype=bool)
        for kk in ks:
            mask &= kk <= self.n_modes
        return eigenvalues, mask

    @property
    def eigenvalues(self) -> np.ndarray:
        """Continuum Dirichlet eigenvalues pi^2 |k|^2 on the interior mode grid"""
        if self.kind is not BackendKind.SPECTRAL:
            raise BackendMismatchError("Modal tables exist only for the spectral backend")
        return self._eigenvalues

    @property
    def first_eigenvalue(self) -> float:
        return self.d * np.pi ** 2

    def to_modal(self, F: np.ndarray) -> np.ndarray:
        """Sine-transform coefficients (type-I DST) of the interior values"""
        return sp_fft.dstn(self.interior(F), type=1, axes=self.axes)

    def from_modal(self, modes: np.ndarray) -> np.ndarray:
        return self.embed(sp_fft.idstn(modes, type=1, axes=self.axes))

    def sine_coefficients(self, F: np.ndarray) -> np.ndarray:
        """Coefficients b_k of F = sum_k b_k prod_i sin(k_i pi x_i), truncated to n_modes"""
        return self.to_modal(F) * self.grid.h ** self.d * self._mask

    def modal_decay(self, t: float) -> np.ndarray:
        """exp(-lambda_k t) on kept modes, 0 on truncated ones"""
        return np.exp(-self._eigenvalues * t) * self._mask

    # ------------------------------------------------------------------
    # implicit stepping
    # ------------------------------------------------------------------

    def _factor(self, tau: float, backward_euler: bool):
        key = (float(tau), bool(backward_euler))
        if key not in self._factors:
            L = self.operator.matrix
            eye = sparse.identity(L.shape[0], format='csc')
            lhs = eye - (tau if backward_euler else 0.5 * tau) * L
            self._factors[key] = splu(sparse.csc_matrix(lhs))
        return self._factors[key]

    def _implicit_steps(self, vectors: np.ndarray, tau: float, n_steps: int,
                        backward_euler: bool) -> np.ndarray:
        """vectors: (n_interior, batch)"""
        factor = self._factor(tau, backward_euler)
        L = self.operator.matrix
        out = vectors
        for _ in range(n_steps):
            rhs = out if backward_euler else out + 0.5 * tau * (L @ out)
            out = factor.solve(rhs)
        return out

    # ------------------------------------------------------------------
    # evolution
    # ------------------------------------------------------------------

    def evolve(self, F: np.ndarray, t: float, n_steps: Optional[int] = None) -> np.ndarray:
        """
        Apply S_t to a field (or a batch of fields along leading axes)

        Args:
            F: Spatial field with zero boundary values
            t: Elapsed time, t >= 0
            n_steps: Inner step count override (ImplicitFD only)

        Returns:
            S_t F on full nodes with zero boundary
        """
        if t < 0:
            raise NegativeTimeError(f"Evolution time must be nonnegative, got {t}", {'t': t})
        F = self._check_field(F)
        if t == 0:
            return F.copy()

        if self.kind is BackendKind.SPECTRAL:
            return self.from_modal(self.to_modal(F) * self.modal_decay(t))

        steps = n_steps if n_steps is not None else max(1, math.ceil(t / self.dt_inner - 1e-9))
        lead = F.shape[:-self.d]
        vectors = self.operator.to_interior(F).reshape(-1, self.operator.size).T
        evolved = self._implicit_steps(vectors, t / steps, steps, self.backward_euler)
        return self.operator.to_full(evolved.T.reshape(lead + (self.operator.size,)))

    def step_interior(self, vectors: np.ndarray) -> np.ndarray:
        """
        One grid step S_dt on interior vectors of shape (n_interior, batch)

        Used by the mild solver on the ImplicitFD backend.
        """
        return self._implicit_steps(vectors, self.dt_inner, self.substeps, self.backward_euler)


def make_backend(spec: OperatorSpec, grid: SpaceTimeGrid, kind: str = 'spectral', **options) -> SemigroupBackend:
    return SemigroupBackend(spec, grid, BackendKind(kind), **options)


# ============================================================================
# GREEN KERNEL
# ============================================================================

@dataclass
class GreenKernel:
    """G(x, ., t) sampled on the spatial grid"""

    source: Tuple[float, ...]
    t: float
    values: np.ndarray
    h: float

    @property
    def d(self) -> int:
        return len(self.source)

    def mass(self) -> float:
        return float(self.values.sum() * self.h ** self.d)

    def lp_norm(self, p: float) -> float:
        """Discrete L^p(Q) norm in y (p = inf gives the max)"""
        if np.isinf(p):
            return float(np.abs(self.values).max())
        return float((np.sum(np.abs(self.values) ** p) * self.h ** self.d) ** (1.0 / p))


def _source_index(grid: SpaceTimeGrid, x: Sequence[float]) -> Tuple[int, ...]:
    x = tuple(float(v) for v in np.atleast_1d(x))
    if len(x) != grid.d:
        raise ValidationError(f"Source point needs {grid.d} coordinates, got {len(x)}", {'x': list(x)})
    index = tuple(int(round(v / grid.h)) for v in x)
    if any(abs(i * grid.h - v) > 1e-9 for i, v in zip(index, x)):
        raise ValidationError(f"Source point {list(x)} is not a grid node", {'x': list(x)})
    if any(i <= 0 or i >= grid.nx - 1 for i in index):
        raise BoundarySourceError(f"Source point {list(x)} lies on the boundary", {'x': list(x)})
    return index


def discrete_delta(grid: SpaceTimeGrid, x: Sequence[float]) -> np.ndarray:
    """Mass-one discrete delta: 1/h^d at node x, 0 elsewhere"""
    index = _source_index(grid, x)
    delta = np.zeros(grid.spatial_shape)
    delta[index] = grid.h ** (-grid.d)
    return delta


def green_kernel(backend: SemigroupBackend, x: Sequence[float], t: float) -> GreenKernel:
    """
    Evolve the discrete delta at an interior node

    Args:
        backend: Semigroup backend
        x: Source point (grid interior node)
        t: Elapsed time, t > 0

    Returns:
        GreenKernel with G(x, ., t)
    """
    if t <= 0:
        raise NegativeTimeError(f"Green kernel needs t > 0, got {t}", {'t': t})
    delta = discrete_delta(backend.grid, x)
    n_steps = None
    if backend.kind is BackendKind.IMPLICIT_FD:
        n_steps = max(MIN_KERNEL_STEPS, math.ceil(t / backend.dt_inner - 1e-9))
    values = backend.evolve(delta, t, n_steps=n_steps)
    return GreenKernel(source=tuple(float(v) for v in np.atleast_1d(x)), t=float(t),
                       values=values, h=backend.grid.h)


# ============================================================================
# DIAGNOSTICS
# ============================================================================

@dataclass
class KernelDecayFit:
    p: float
    q: float
    slope: float
    expected: float
    t_list: List[float]
    norms: List[float]

    @property
    def within_tolerance(self) -> bool:
        return abs(self.slope - self.expected) <= SLOPE_TOLERANCE

    def to_dict(self) -> Dict:
        return {'p': self.p, 'q': self.q, 'slope': self.slope, 'expected': self.expected,
                'within_tolerance': self.within_tolerance,
                't': list(self.t_list), 'norm': list(self.norms)}


def conjugate_exponent(p: float) -> float:
    if np.isinf(p):
        return 1.0
    return p / (p - 1.0)


def fit_kernel_decay(backend: SemigroupBackend, p: float,
                     t_list: Sequence[float] = DEFAULT_KERNEL_TIMES,
                     source: Optional[Sequence[float]] = None) -> KernelDecayFit:
    """
    Fit the L^p-in-y decay exponent of G(x, ., t) in t

    Args:
        backend: Semigroup backend
        p: Integrability exponent, p > 1 (np.inf allowed)
        t_list: Positive times, at least four
        source: Source node; defaults to the cube center

    Returns:
        KernelDecayFit comparing the slope with -d/(2q), 1/p + 1/q = 1
    """
    if not p > 1:
        raise ValidationError(f"Integrability exponent must exceed 1, got {p}", {'p': p})
    t_list = [float(t) for t in t_list]
    if len(t_list) < 4:
        raise InsufficientPointsError(f"Need at least 4 times for a decay fit, got {len(t_list)}",
                                      {'count': len(t_list)})
    if source is None:
        source = (0.5,) * backend.d
    norms = [green_kernel(backend, source, t).lp_norm(p) for t in t_list]
    q = conjugate_exponent(p)
    return KernelDecayFit(p=float(p), q=q, slope=loglog_slope(t_list, norms, min_points=4),
                          expected=-backend.d / (2.0 * q), t_list=t_list, norms=norms)


def _sup(values: np.ndarray) -> float:
    return float(np.abs(values).max())


def _monotone(backend: SemigroupBackend) -> Tuple[SemigroupBackend, Optional[int]]:
    """Backward-Euler copy with a fixed step count on ImplicitFD; rough data rings under Crank-Nicolson"""
    if backend.kind is not BackendKind.IMPLICIT_FD:
        return backend, None
    return backend.with_options(backward_euler=True), NASH_STEPS


def holder_norm(values: np.ndarray, h: float, theta: float) -> float:
    """Discrete C^theta norm: sup norm plus the pairwise seminorm"""
    return _sup(values) + spatial_holder_seminorm(values, h, theta)


@dataclass
class SmoothingReport:
    """Measured smoothing rates of S_t against their upper-bound targets"""

    theta: float
    t_list: List[float]
    norms: List[float]
    ratios: List[float]
    spatial_slope: float
    spatial_target: float
    deltas: List[float]
    increments: List[float]
    time_slope: float
    time_target: float
    interpolation_holds: bool
    interpolation_margin: float

    @property
    def ratio_spread(self) -> float:
        return ratio_spread(self.ratios)

    @property
    def spatial_ok(self) -> bool:
        return self.spatial_slope >= self.spatial_target - SLOPE_TOLERANCE

    @property
    def time_ok(self) -> bool:
        return self.time_slope >= self.time_target - SLOPE_TOLERANCE

    def to_dict(self) -> Dict:
        return {
            'theta': self.theta,
            't': self.t_list,
            'holder_norm': self.norms,
            'ratio': self.ratios,
            'ratio_spread': self.ratio_spread,
            'spatial_slope': self.spatial_slope,
            'spatial_target': self.spatial_target,
            'spatial_ok': self.spatial_ok,
            'delta': self.deltas,
            'time_increment': self.increments,
            'time_slope': self.time_slope,
            'time_target': self.time_target,
            'time_ok': self.time_ok,
            'interpolation_holds': self.interpolation_holds,
            'interpolation_margin': self.interpolation_margin
        }


def fit_smoothing_exponents(backend: SemigroupBackend, F: np.ndarray, theta: float,
                            t_list: Sequence[float] = DEFAULT_SMOOTHING_TIMES,
                            deltas: Optional[Sequence[float]] = None,
                            t_fixed: float = 0.01) -> SmoothingReport:
    """
    Measure how S_t smooths bounded data

    Args:
        backend: Semigroup backend
        F: Bounded initial field
        theta: Hoelder exponent in (0, 1)
        t_list: Times for the spatial C^theta fit
        deltas: Time increments for the time-Hoelder fit at t_fixed
        t_fixed: Base time of the time-increment fit

    Returns:
        SmoothingReport with fitted exponents, the boundedness ratios
        ||v(t)||_{C^theta} t^{theta/2} and the interpolation inequality check
    """
    if not 0 < theta < 1:
        raise ValidationError(f"theta must lie in (0, 1), got {theta}", {'theta': theta})
    monotone, n_steps = _monotone(backend)
    h = backend.grid.h
    t_list = [float(t) for t in t_list]
    norms, ratios = [], []
    interpolation_holds, margin = True, float('inf')
    for t in t_list:
        v = monotone.evolve(F, t, n_steps=n_steps)
        norm = holder_norm(v, h, theta)
        norms.append(norm)
        ratios.append(norm * t ** (theta / 2.0))
        lhs = spatial_holder_seminorm(v, h, theta)
        rhs = 2.0 * _sup(v) ** (1.0 - theta) * spatial_holder_seminorm(v, h, 1.0) ** theta
        if lhs > rhs * (1 + 1e-12) + 1e-300:
            interpolation_holds = False
        if lhs > 0:
            margin = min(margin, rhs / lhs)

    if deltas is None:
        deltas = np.logspace(-4, -2, 5) if backend.grid.dt > 1e-4 else np.logspace(-3, -1.5, 5)
    deltas = [float(x) for x in deltas]
    base = monotone.evolve(F, t_fixed, n_steps=n_steps)
    increments = [_sup(monotone.evolve(base, delta) - base) for delta in deltas]

    return SmoothingReport(
        theta=float(theta), t_list=t_list, norms=norms, ratios=ratios,
        spatial_slope=loglog_slope(t_list, norms), spatial_target=-theta / 2.0,
        deltas=deltas, increments=increments,
        time_slope=loglog_slope(deltas, increments), time_target=float(theta),
        interpolation_holds=interpolation_holds,
        interpolation_margin=margin if np.isfinite(margin) else 1.0)


def fit_decay_rate(backend: SemigroupBackend, F: np.ndarray, t_list: Sequence[float]) -> float:
    """Slope of log ||S_t F||_inf against t (compare with -lambda_1)"""
    t_list = np.asarray(t_list, dtype=float)
    norms = np.array([_sup(backend.evolve(F, t)) for t in t_list])
    if t_list.size < 2 or np.any(norms <= 0):
        raise InsufficientPointsError("Need at least two times with nonzero norms for a rate fit",
                                      {'count': int(t_list.size)})
    return float(np.polyfit(t_list, np.log(norms), 1)[0])


def semigroup_defect(backend: SemigroupBackend, F: np.ndarray, s: float, t: float) -> float:
    """||S_t S_s F - S_{s+t} F||_inf"""
    return _sup(backend.evolve(backend.evolve(F, s), t) - backend.evolve(F, s + t))


def rough_step_data(grid: SpaceTimeGrid) -> np.ndarray:
    """sign(x_1 - 1/2) with zero boundary values"""
    pts = grid.points()
    F = np.sign(pts[..., 0] - 0.5)
    out = np.zeros(grid.spatial_shape)
    inner = grid.interior_slice()
    out[inner] = F[inner]
    return out


@dataclass
class NashReport:
    """Empirical Hoelder exponent of a divergence-form semigroup"""

    alpha: float
    ladder: List[float]
    spreads: Dict[float, float] = field(default_factory=dict)
    t_list: List[float] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.alpha > 0

    def to_dict(self) -> Dict:
        return {'alpha': self.alpha, 'ladder': self.ladder, 't': self.t_list,
                'spreads': {f"{theta:.2f}": spread for theta, spread in self.spreads.items()}}


def fit_nash_exponent(backend: SemigroupBackend,
                      ladder: Sequence[float] = NASH_LADDER,
                      t_list: Sequence[float] = DEFAULT_SMOOTHING_TIMES,
                      data: Optional[np.ndarray] = None) -> NashReport:
    """
    Largest ladder exponent whose smoothing ratio stays bounded on rough data

    Args:
        backend: ImplicitFD backend of a divergence-form operator
        ladder: Increasing candidate exponents
        t_list: Times spanning two decades
        data: Rough initial field; defaults to a unit step across x_1 = 1/2

    Returns:
        NashReport; alpha = 0 when no ladder value passes
    """
    if backend.spec.form is not OperatorForm.DIVERGENCE:
        raise BackendMismatchError("Nash exponent fit needs a divergence-form operator",
                                   {'form': backend.spec.form.value})
    F = rough_step_data(backend.grid) if data is None else data
    monotone, n_steps = _monotone(backend)
    t_list = [float(t) for t in t_list]
    fields = [monotone.evolve(F, t, n_steps=n_steps) for t in t_list]

    alpha, spreads = 0.0, {}
    for theta in sorted(float(x) for x in ladder):
        ratios = [spatial_holder_seminorm(v, backend.grid.h, theta) * t ** (theta / 2.0)
                  for v, t in zip(fields, t_list)]
        spreads[theta] = ratio_spread(ratios)
        if spreads[theta] <= NASH_SPREAD_LIMIT:
            alpha = theta
    return NashReport(alpha=alpha, ladder=[float(x) for x in ladder], spreads=spreads, t_list=t_list)

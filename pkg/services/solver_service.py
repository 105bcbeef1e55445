"""
Solver Service Module
Mild-solution realizations of du = Au dt + sum_j f^j dw^j by stochastic exponential Euler,
the exact Gaussian covariance oracle and increment-moment statistics.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft
from scipy import integrate

from services.grid_service import SpaceTimeGrid
from services.noise_service import ForcingSpec, NoisePath, require_certified
from services.operator_service import validate
from services.semigroup_service import BackendKind, SemigroupBackend
from utils.errors import (BackendMismatchError, GrowthNotEnabledError, InstabilityError,
                          InsufficientSamplesError, ValidationError, WindowMismatchError)
from utils.stats_utils import DEFAULT_RESAMPLES, bootstrap_indexes, loglog_slope, resampling_rng

DEFAULT_GUARD = 1e6
GUARD_INTERVAL = 32
MIN_INCREMENT_SAMPLES = 1000
DEFAULT_LAGS = tuple(range(1, 17))


@dataclass(eq=False)
class SpaceTimeField:
    """
    One realization of u on a window grid

    values has shape (n_levels, *spatial_shape); boundary nodes are zero.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    provenance: Dict = field(default_factory=dict)

    @property
    def window(self) -> Tuple[float, float]:
        return self.grid.t0, self.grid.t1

    def level(self, t: float) -> np.ndarray:
        """Spatial slice at time t (must be a grid time)"""
        index = int(round((t - self.grid.t0) / self.grid.dt))
        if index < 0 or index >= self.grid.n_levels or abs(self.grid.t0 + index * self.grid.dt - t) > 1e-9:
            raise WindowMismatchError(f"t = {t} is not a time level of the window {list(self.window)}",
                                      {'t': t})
        return self.values[index]


# ============================================================================
# MILD SOLVER
# ============================================================================

class MildSolver:
    """
    Stochastic exponential Euler: u_{m+1} = S_dt (u_m + sum_j f^j(., t_m) dw^j_m)

    Samples are advanced together in blocks; each block starts at t = 0 with u = 0
    and records the requested unit windows.
    """

    def __init__(self, backend: SemigroupBackend, forcing: ForcingSpec,
                 guard: float = DEFAULT_GUARD, allow_growth: bool = False):
        """
        Args:
            backend: Semigroup backend (its grid fixes nx and dt)
            forcing: Forcing profiles; certified on the backend grid
            guard: Largest admissible |u| before the run is declared unstable
            allow_growth: Accept operators with c_bar > 0
        """
        self.backend = backend
        self.grid = backend.grid
        spec = backend.spec if backend.spec.validated else validate(backend.spec, self.grid)
        self.spec = spec
        if spec.c_bar and spec.c_bar > 0 and not allow_growth:
            raise GrowthNotEnabledError(f"Operator has c_bar = {spec.c_bar} > 0; shift it or enable growth runs",
                                        {'c_bar': spec.c_bar})
        if forcing.d != self.grid.d:
            raise ValidationError(f"Forcing dimension {forcing.d} does not match grid dimension {self.grid.d}")
        self.certificate = require_certified(forcing, self.grid)
        self.forcing = forcing
        self.guard = float(guard)
        self._profiles = forcing.spatial_values(self.grid)
        self._interior_profiles = backend.interior(self._profiles)

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------

    def _check_paths(self, paths: Sequence[NoisePath], horizon_steps: int) -> np.ndarray:
        for path in paths:
            if abs(path.dt - self.grid.dt) > 1e-15:
                raise ValidationError(f"Path step {path.dt} differs from grid step {self.grid.dt}",
                                      {'path_dt': path.dt, 'grid_dt': self.grid.dt})
            if path.j_count != self.forcing.j_count:
                raise ValidationError(f"Path has {path.j_count} drivers, forcing has {self.forcing.j_count}")
            if path.n_steps < horizon_steps:
                raise ValidationError(f"Path covers {path.n_steps} steps, {horizon_steps} needed",
                                      {'n_steps': path.n_steps, 'required': horizon_steps})
        return np.stack([path.increments[:, :horizon_steps] for path in paths])

    def _guard(self, values: np.ndarray, step: int) -> None:
        if not np.all(np.isfinite(values)) or np.abs(values).max(initial=0.0) > self.guard:
            raise InstabilityError(f"|u| exceeded the guard {self.guard:g} at step {step}",
                                   {'step': step, 'guard': self.guard, 'dt': self.grid.dt, 'nx': self.grid.nx})

    def _provenance(self, path: NoisePath) -> Dict:
        return {
            'operator': self.spec.name,
            'operator_params': dict(self.spec.params),
            'forcing': self.forcing.kind,
            'forcing_params': dict(self.forcing.params),
            'backend': self.backend.kind.value,
            'seed': path.seed,
            'sample_index': path.sample_index,
            'dt': self.grid.dt,
            'nx': self.grid.nx
        }

    # ------------------------------------------------------------------
    # stepping
    # ------------------------------------------------------------------

    def solve_windows(self, paths: Sequence[NoisePath], windows: Sequence[int],
                      spatial_index: Optional[Tuple[int, ...]] = None) -> Dict[int, np.ndarray]:
        """
        Advance a block of samples and record unit windows

        Args:
            paths: One path per sample
            windows: Integer window starts T; each window is [T, T + 1]
            spatial_index: Record only this spatial node (column) instead of full fields

        Returns:
            Mapping T -> array (B, n_levels, *spatial_shape) or (B, n_levels)
        """
        windows = sorted({int(T) for T in windows})
        if not windows or windows[0] < 0:
            raise WindowMismatchError("Windows must be nonnegative integers", {'windows': windows})
        per_unit = self.grid.steps_per_unit
        horizon_steps = (windows[-1] + 1) * per_unit
        dw = self._check_paths(paths, horizon_steps)
        batch = dw.shape[0]

        record_shape = (batch, self.grid.n_levels) + (() if spatial_index is not None else self.grid.spatial_shape)
        recorded = {T: np.zeros(record_shape) for T in windows}
        starts = {T * per_unit: T for T in windows}

        def store(step: int, full: np.ndarray) -> None:
            for T in windows:
                offset = step - T * per_unit
                if 0 <= offset <= per_unit:
                    recorded[T][:, offset] = full[(slice(None),) + spatial_index] \
                        if spatial_index is not None else full

        if self.backend.kind is BackendKind.SPECTRAL:
            self._run_spectral(dw, horizon_steps, store, starts)
        else:
            self._run_implicit(dw, horizon_steps, store, starts)
        return recorded

    def _needs_record(self, step: int, windows_at: Dict[int, int]) -> bool:
        per_unit = self.grid.steps_per_unit
        return any(0 <= step - start <= per_unit for start in windows_at)

    def _noise_term(self, dw_m: np.ndarray, t: float) -> np.ndarray:
        """sum_j f^j(., t) dw^j on interior nodes, shape (B, *interior_shape)"""
        return np.tensordot(dw_m, self._interior_profiles, axes=(1, 0)) * self.forcing.temporal(t)

    def _run_spectral(self, dw: np.ndarray, n_steps: int, store, windows_at: Dict[int, int]) -> None:
        backend = self.backend
        decay = backend.modal_decay(self.grid.dt)
        modal_profiles = sp_fft.dstn(self._interior_profiles, type=1, axes=backend.axes)
        modes = np.zeros((dw.shape[0],) + self.grid.interior_shape)
        if self._needs_record(0, windows_at):
            store(0, backend.from_modal(modes))
        for m in range(n_steps):
            t = m * self.grid.dt
            if self.forcing.feedback:
                physical = sp_fft.idstn(modes, type=1, axes=backend.axes)
                kick = self._noise_term(dw[:, :, m], t) * np.clip(physical, -1.0, 1.0)
                modes = decay * (modes + sp_fft.dstn(kick, type=1, axes=backend.axes))
            else:
                kick = np.tensordot(dw[:, :, m], modal_profiles, axes=(1, 0)) * self.forcing.temporal(t)
                modes = decay * (modes + kick)
            recording = self._needs_record(m + 1, windows_at)
            if recording or (m + 1) % GUARD_INTERVAL == 0:
                full = backend.from_modal(modes)
                self._guard(full, m + 1)
                if recording:
                    store(m + 1, full)

    def _run_implicit(self, dw: np.ndarray, n_steps: int, store, windows_at: Dict[int, int]) -> None:
        backend = self.backend
        op = backend.operator
        batch = dw.shape[0]
        state = np.zeros((op.size, batch))

        def full_from(state_columns: np.ndarray) -> np.ndarray:
            return op.to_full(state_columns.T)

        if self._needs_record(0, windows_at):
            store(0, full_from(state))
        for m in range(n_steps):
            t = m * self.grid.dt
            kick = self._noise_term(dw[:, :, m], t).reshape(batch, op.size).T
            if self.forcing.feedback:
                kick = kick * np.clip(state, -1.0, 1.0)
            state = backend.step_interior(state + kick)
            recording = self._needs_record(m + 1, windows_at)
            if recording or (m + 1) % GUARD_INTERVAL == 0:
                full = full_from(state)
                self._guard(full, m + 1)
                if recording:
                    store(m + 1, full)

    # ------------------------------------------------------------------
    # single sample
    # ------------------------------------------------------------------

    def solve(self, path: NoisePath, T: int = 0) -> SpaceTimeField:
        """Realization of u over [T, T + 1] for one path"""
        values = self.solve_windows([path], [T])[int(T)][0]
        return SpaceTimeField(grid=self.grid.window(int(T)), values=values, provenance=self._provenance(path))

    def fields(self, paths: Sequence[NoisePath], T: int) -> List[SpaceTimeField]:
        recorded = self.solve_windows(paths, [T])[int(T)]
        grid = self.grid.window(int(T))
        return [SpaceTimeField(grid=grid, values=recorded[i], provenance=self._provenance(path))
                for i, path in enumerate(paths)]


def solve(backend: SemigroupBackend, forcing: ForcingSpec, path: NoisePath, window: int = 0,
          guard: float = DEFAULT_GUARD, allow_growth: bool = False) -> SpaceTimeField:
    """
    One realization of the mild solution over [window, window + 1]

    Args:
        backend: Semigroup backend
        forcing: Forcing profiles
        path: Brownian path covering [0, window + 1]
        window: Integer window start T
        guard: Instability guard on |u|
        allow_growth: Accept operators with c_bar > 0

    Returns:
        SpaceTimeField with provenance
    """
    return MildSolver(backend, forcing, guard=guard, allow_growth=allow_growth).solve(path, window)


# ============================================================================
# COVARIANCE ORACLE
# ============================================================================

def exact_covariance(backend: SemigroupBackend, forcing: ForcingSpec,
                     x1: Sequence[float], x2: Sequence[float], t: float,
                     epsrel: float = 1e-6) -> float:
    """
    Cov(u(x1, t), u(x2, t)) = integral_0^t v(x1, s) v(x2, s) ds with v = S_s f

    Args:
        backend: Spectral backend
        forcing: Time-independent forcing with one driver
        x1: First point
        x2: Second point
        t: Time, t >= 0
        epsrel: Relative tolerance of the adaptive time quadrature

    Returns:
        Covariance value
    """
    if backend.kind is not BackendKind.SPECTRAL:
        raise BackendMismatchError("Covariance oracle needs the spectral backend",
                                   {'backend': backend.kind.value})
    if forcing.time_dependent or forcing.feedback or forcing.j_count != 1:
        raise ValidationError("Covariance oracle needs one time-independent, non-feedback profile",
                              {'kind': forcing.kind, 'j_count': forcing.j_count})
    if t < 0:
        raise ValidationError(f"t must be nonnegative, got {t}", {'t': t})
    if t == 0:
        return 0.0

    coefficients = backend.sine_coefficients(forcing.spatial_values(backend.grid)[0]).ravel()
    eigenvalues = backend.eigenvalues.ravel()
    k = np.arange(1, backend.grid.nx - 1)
    ks = [kk.ravel() for kk in np.meshgrid(*([k] * backend.d), indexing='ij')]

    def modes_at(x: Sequence[float]) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.prod([np.sin(kk * np.pi * xi) for kk, xi in zip(ks, x)], axis=0)

    w1 = coefficients * modes_at(x1)
    w2 = coefficients * modes_at(x2)

    def integrand(s: float) -> float:
        damp = np.exp(-eigenvalues * s)
        return float(np.dot(w1, damp) * np.dot(w2, damp))

    value, _ = integrate.quad(integrand, 0.0, t, epsrel=epsrel, epsabs=0.0, limit=500)
    return float(value)


# ============================================================================
# INCREMENT MOMENTS
# ============================================================================

@dataclass
class IncrementMoment:
    pair: Tuple[Tuple[int, ...], Tuple[int, ...]]
    distance: float
    p: float
    estimate: float
    ci_low: float
    ci_high: float
    samples: int

    def to_dict(self) -> Dict:
        return {'pair': [list(z) for z in self.pair], 'distance': self.distance, 'p': self.p,
                'estimate': self.estimate, 'ci_low': self.ci_low, 'ci_high': self.ci_high,
                'samples': self.samples}


def _ensemble_values(ensemble) -> np.ndarray:
    if isinstance(ensemble, np.ndarray):
        return ensemble
    return np.stack([f.values for f in ensemble])


def _require_samples(count: int, required: int) -> None:
    if count < required:
        raise InsufficientSamplesError(f"Need at least {required} samples, got {count}",
                                       {'samples': count, 'required': required})


def increment_moments(ensemble, grid: SpaceTimeGrid,
                      pairs: Sequence[Tuple[Tuple[int, ...], Tuple[int, ...]]],
                      p: float, n_resamples: int = DEFAULT_RESAMPLES, seed: int = 0,
                      min_samples: int = MIN_INCREMENT_SAMPLES) -> List[IncrementMoment]:
    """
    E|u(z1) - u(z2)|^p with bootstrap 95% intervals

    Args:
        ensemble: Fields or an array (M, n_levels, *spatial_shape)
        grid: Window grid of the ensemble
        pairs: Node pairs given as (level, *spatial indices)
        p: Moment order
        n_resamples: Bootstrap resamples
        seed: Seed of the resampling stream
        min_samples: Smallest accepted ensemble

    Returns:
        One IncrementMoment per pair
    """
    values = _ensemble_values(ensemble)
    _require_samples(values.shape[0], min_samples)
    rng = resampling_rng(seed, int(p * 1000))
    index = bootstrap_indexes(values.shape[0], n_resamples, rng)
    out = []
    for z1, z2 in pairs:
        z1, z2 = tuple(int(i) for i in z1), tuple(int(i) for i in z2)
        powered = np.abs(values[(slice(None),) + z1] - values[(slice(None),) + z2]) ** p
        estimate = float(powered.mean())
        stats = powered[index].mean(axis=1)
        low, high = np.percentile(stats, [2.5, 97.5])
        distance = abs(z1[0] - z2[0]) * grid.dt + max(abs(a - b) for a, b in zip(z1[1:], z2[1:])) * grid.h \
            if len(z1) > 1 else abs(z1[0] - z2[0]) * grid.dt
        out.append(IncrementMoment(pair=(z1, z2), distance=float(distance), p=float(p), estimate=estimate,
                                   ci_low=float(min(low, estimate)), ci_high=float(max(high, estimate)),
                                   samples=int(values.shape[0])))
    return out


@dataclass
class IncrementFit:
    """Time-increment exponent of E|u(x, t + delta) - u(x, t)|^p"""

    p: float
    deltas: List[float]
    moments: List[float]
    exponent: float
    ci_low: float
    ci_high: float
    kurtosis: List[float]
    samples: int

    def to_dict(self) -> Dict:
        return {'p': self.p, 'delta': self.deltas, 'moment': self.moments, 'exponent': self.exponent,
                'ci_low': self.ci_low, 'ci_high': self.ci_high, 'kurtosis': self.kurtosis,
                'samples': self.samples}


def fit_increment_exponent(columns: np.ndarray, dt: float, base_level: int,
                           lags: Sequence[int] = DEFAULT_LAGS, p: float = 2.0,
                           n_resamples: int = DEFAULT_RESAMPLES, seed: int = 0,
                           min_samples: int = MIN_INCREMENT_SAMPLES) -> IncrementFit:
    """
    Fit the exponent of E|u(x, t + delta) - u(x, t)|^p in delta

    Args:
        columns: Values at one spatial node, shape (M, n_levels)
        dt: Time step of the levels
        base_level: Level index of t
        lags: Level lags defining delta = lag * dt
        p: Moment order
        n_resamples: Bootstrap resamples for the exponent interval
        seed: Seed of the resampling stream
        min_samples: Smallest accepted ensemble

    Returns:
        IncrementFit with the fitted exponent, its bootstrap interval and the
        Gaussian kurtosis ratios E|D|^4 / (E|D|^2)^2 per lag
    """
    columns = np.asarray(columns, dtype=float)
    _require_samples(columns.shape[0], min_samples)
    lags = [int(k) for k in lags]
    if base_level + max(lags) >= columns.shape[1]:
        raise ValidationError(f"Lag {max(lags)} from level {base_level} leaves the window",
                              {'base_level': base_level, 'levels': columns.shape[1]})
    increments = np.stack([columns[:, base_level + k] - columns[:, base_level] for k in lags], axis=1)
    deltas = [k * dt for k in lags]
    powered = np.abs(increments) ** p
    moments = powered.mean(axis=0)
    exponent = loglog_slope(deltas, moments, min_points=2)

    rng = resampling_rng(seed, 0x1AC, int(p * 1000))
    log_delta = np.log(deltas)
    slopes = []
    for idx in bootstrap_indexes(columns.shape[0], n_resamples, rng):
        resampled = powered[idx].mean(axis=0)
        if np.all(resampled > 0):
            slopes.append(np.polyfit(log_delta, np.log(resampled), 1)[0])
    low, high = np.percentile(slopes, [2.5, 97.5]) if slopes else (exponent, exponent)

    second = (increments ** 2).mean(axis=0)
    fourth = (increments ** 4).mean(axis=0)
    kurtosis = [float(f / s ** 2) if s > 0 else float('nan') for f, s in zip(fourth, second)]
    return IncrementFit(p=float(p), deltas=deltas, moments=[float(m) for m in moments],
                        exponent=exponent, ci_low=float(min(low, exponent)), ci_high=float(max(high, exponent)),
                        kurtosis=kurtosis, samples=int(columns.shape[0]))

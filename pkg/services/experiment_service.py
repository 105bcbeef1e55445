"""
Experiment Service Module
Monte Carlo orchestration: moment bounds over time windows, growth factors, the B^p
threshold scan, tail decay, increment exponents and the semigroup diagnostics.
"""

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from services.grid_service import Domain, SpaceTimeGrid
from services.noise_service import ForcingSpec, make_forcing, sample_path
from services.operator_service import (OperatorForm, OperatorSpec, make_operator, shift_zero_order,
                                       validate)
from services.regularity_service import (HolderAnalyzer, chaining_event_scan, tail_to_moments)
from services.semigroup_service import (BackendKind, SemigroupBackend,
                                        SLOPE_TOLERANCE, fit_kernel_decay,
                                        fit_nash_exponent, fit_smoothing_exponents, rough_step_data,
                                        semigroup_defect)
from services.solver_service import MildSolver, SpaceTimeField, fit_increment_exponent
from utils.console import log
from utils.errors import InsufficientSamplesError, ValidationError
from utils.stats_utils import bootstrap_ci, loglog_slope, ratio_spread, resampling_rng

T_FLATNESS = 1.5
EPS_FLATNESS = 3.0
GROWTH_SLACK = 0.1
THRESHOLD_MARGIN = 0.05
TAIL_SLOPE_CEILING = -2.0
TAIL_WEIBULL_FLOOR = 1.25
TAIL_MIN_SAMPLES = 5000
TAIL_GRID_POINTS = 12
INCREMENT_LOW, INCREMENT_HIGH = 0.84, 1.0
KURTOSIS_TARGET, KURTOSIS_TOLERANCE = 3.0, 0.2
SHIFT_TOLERANCE = 0.05
SHIFTABLE_FORCINGS = ('constant_one', 'smooth_bump', 'checkerboard')


# ============================================================================
# PLAN
# ============================================================================

def default_growth() -> Dict:
    return {'c': 2.0, 'windows': [0, 1, 2, 3, 4]}


def default_threshold() -> Dict:
    return {'p': 4.0, 'eps': [2.0 ** -3, 2.0 ** -4, 2.0 ** -5, 2.0 ** -6],
            'thetas': [0.1, 0.2, 0.3, 0.4, 0.45], 'control': True}


def default_tail() -> Dict:
    return {'samples': TAIL_MIN_SAMPLES, 'window': 0, 's': 2.0}


def default_increments() -> Dict:
    return {'samples': 1000, 'window': 0, 'lags': 16, 'p': 2.0}


@dataclass
class ExperimentPlan:
    """Everything an experiment needs; built from a RunConfig"""

    operator: str = 'laplacian'
    operator_params: Dict = field(default_factory=dict)
    forcing: str = 'constant_one'
    forcing_params: Dict = field(default_factory=dict)
    j_count: int = 1
    d: int = 1
    nx: int = 129
    dt: float = 2.0 ** -10
    windows: List[int] = field(default_factory=lambda: [0, 1, 2, 4, 8])
    samples: int = 500
    k_list: List[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0])
    theta_list: List[float] = field(default_factory=lambda: [0.1, 0.25, 0.4])
    seed: int = 0
    backend: str = 'spectral'
    n_modes: Optional[int] = None
    substeps: Optional[int] = None
    backward_euler: bool = False
    threads: int = 1
    block_size: int = 16
    bootstrap_resamples: int = 1000
    allow_growth: bool = False
    guard: float = 1e6
    event_thresholds: List[float] = field(default_factory=list)
    growth: Dict = field(default_factory=default_growth)
    threshold: Dict = field(default_factory=default_threshold)
    tail: Dict = field(default_factory=default_tail)
    increments: Dict = field(default_factory=default_increments)

    def __post_init__(self):
        if self.samples < 100:
            raise ValidationError(f"A plan needs at least 100 samples, got {self.samples}",
                                  {'samples': self.samples})
        if any(not 0 < theta < 1 for theta in self.theta_list):
            raise ValidationError("Every theta must lie in (0, 1)", {'theta_list': list(self.theta_list)})
        if any(int(T) != T or T < 0 for T in self.windows) or not self.windows:
            raise ValidationError("Windows must be nonnegative integers", {'windows': list(self.windows)})
        if self.block_size < 1 or self.threads < 1:
            raise ValidationError("block_size and threads must be positive")
        c, lambda_1 = float(self.growth.get('c', 2.0)), self.d * math.pi ** 2
        if not 0 < c < lambda_1:
            raise ValidationError(f"growth.c must lie in (0, lambda_1 = {lambda_1:.4f}) for d = {self.d}, got {c}",
                                  {'c': c, 'lambda_1': lambda_1})

    def grid(self) -> SpaceTimeGrid:
        return SpaceTimeGrid(Domain(self.d), self.nx, self.dt)

    def operator_spec(self, grid: Optional[SpaceTimeGrid] = None) -> OperatorSpec:
        return validate(make_operator(self.operator, self.d, self.operator_params), grid or self.grid())

    def forcing_spec(self, grid: Optional[SpaceTimeGrid] = None, kind: Optional[str] = None,
                     params: Optional[Dict] = None) -> ForcingSpec:
        return make_forcing(kind or self.forcing, self.forcing_params if params is None else params,
                            d=self.d, j_count=self.j_count, grid=grid or self.grid())

    def make_backend(self, spec: OperatorSpec, grid: SpaceTimeGrid, kind: Optional[str] = None) -> SemigroupBackend:
        kind = BackendKind(kind or self.backend)
        if kind is BackendKind.SPECTRAL:
            return SemigroupBackend(spec, grid, kind, n_modes=self.n_modes)
        return SemigroupBackend(spec, grid, kind, substeps=self.substeps, backward_euler=self.backward_euler)

    def describe(self) -> Dict:
        return asdict(self)


# ============================================================================
# REPORTS
# ============================================================================

@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    asserted: bool = True
    detail: str = ''

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class MomentEstimate:
    T: int
    k: float
    quantity: str
    theta: Optional[float]
    estimate: float
    ci_low: float
    ci_high: float
    samples: int

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ExperimentReport:
    name: str
    plan: Dict
    data: Dict = field(default_factory=dict)
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.asserted)

    def failed_checks(self) -> List[Check]:
        return [c for c in self.checks if c.asserted and not c.passed]

    def to_dict(self) -> Dict:
        return {'name': self.name, 'passed': self.passed, 'plan': self.plan, 'data': self.data,
                'checks': [c.to_dict() for c in self.checks]}


@dataclass
class MomentReport(ExperimentReport):
    estimates: List[MomentEstimate] = field(default_factory=list)

    def estimate(self, T: int, k: float, quantity: str = 'sup', theta: Optional[float] = None) -> MomentEstimate:
        for e in self.estimates:
            if e.T == T and e.k == k and e.quantity == quantity and e.theta == theta:
                return e
        raise KeyError((T, k, quantity, theta))

    def to_dict(self) -> Dict:
        out = super().to_dict()
        out['estimates'] = [e.to_dict() for e in self.estimates]
        return out


# ============================================================================
# SERVICE
# ============================================================================

class ExperimentService:
    """Runs the experiments of one plan; results are independent of the thread count"""

    def __init__(self, plan: ExperimentPlan, store=None):
        """
        Args:
            plan: Experiment plan
            store: Optional RunStore receiving partial results on interrupt
        """
        self.plan = plan
        self.store = store
        self.grid = plan.grid()

    # ------------------------------------------------------------------
    # ensemble plumbing
    # ------------------------------------------------------------------

    def blocks(self, samples: int) -> List[range]:
        size = self.plan.block_size
        return [range(start, min(start + size, samples)) for start in range(0, samples, size)]

    def ordered_map(self, fn: Callable[[range], object], blocks: Sequence[range]) -> Iterator:
        """Apply fn to blocks on the worker pool, yielding results in block order"""
        if self.plan.threads <= 1:
            for block in blocks:
                yield fn(block)
            return
        with ThreadPoolExecutor(max_workers=self.plan.threads) as pool:
            pending = deque()
            for block in blocks:
                pending.append(pool.submit(fn, block))
                if len(pending) >= 2 * self.plan.threads:
                    yield pending.popleft().result()
            while pending:
                yield pending.popleft().result()

    def paths(self, indices: Sequence[int], horizon: float) -> List:
        return [sample_path(self.plan.seed, i, self.plan.j_count, self.grid.dt, horizon) for i in indices]

    def simulate_blocks(self, solver: MildSolver, windows: Sequence[int], samples: int,
                        spatial_index: Optional[Tuple[int, ...]] = None,
                        reducer: Optional[Callable[[range, Dict[int, np.ndarray]], object]] = None) -> Iterator:
        """
        Simulate the ensemble block by block

        Args:
            solver: Mild solver
            windows: Window starts to record
            samples: Ensemble size
            spatial_index: Record a single spatial node only
            reducer: Turns (indices, recorded windows) into a per-block result inside the worker

        Returns:
            Iterator over per-block results in sample order
        """
        horizon = float(max(windows) + 1)

        def work(block: range):
            recorded = solver.solve_windows(self.paths(block, horizon), windows, spatial_index)
            return (block, recorded) if reducer is None else reducer(block, recorded)
        return self.ordered_map(work, self.blocks(samples))

    def solver(self, spec: Optional[OperatorSpec] = None, forcing: Optional[ForcingSpec] = None,
               kind: Optional[str] = None, allow_growth: Optional[bool] = None) -> MildSolver:
        spec = spec or self.plan.operator_spec(self.grid)
        forcing = forcing or self.plan.forcing_spec(self.grid)
        backend = self.plan.make_backend(spec, self.grid, kind)
        return MildSolver(backend, forcing, guard=self.plan.guard,
                          allow_growth=self.plan.allow_growth if allow_growth is None else allow_growth)

    def _save_partial(self, name: str, payload: Dict) -> None:
        if self.store is not None:
            self.store.save_partial(name, payload)
            log(f"[WARNING] Interrupted: partial {name} results saved")

    def _moment(self, values: np.ndarray, k: float, *tags: int) -> Tuple[float, float, float]:
        powered = np.asarray(values, dtype=float) ** k
        return bootstrap_ci(powered, n_resamples=self.plan.bootstrap_resamples,
                            rng=resampling_rng(self.plan.seed, *tags))

    # ------------------------------------------------------------------
    # per-sample analysis
    # ------------------------------------------------------------------

    def analyze_sample(self, field: SpaceTimeField, thetas: Sequence[float]) -> Dict:
        """sup norm, C^theta norms and the chaining checks of one field"""
        analyzer = HolderAnalyzer(field)
        record = analyzer.record(thetas, self.plan.event_thresholds)
        record['holder_norm'] = {key: record['sup_norm'] + value for key, value in record['seminorm'].items()}
        telescoping = []
        for theta in thetas:
            q = 2.0 ** (-theta)
            critical = analyzer.increments.critical_K(q)
            if critical > 0:
                scan = chaining_event_scan(field, critical * (1 + 1e-9), q, analyzer.n_max, analyzer.increments)
                telescoping.append(scan.sup_implication_holds)
        record['telescoping_holds'] = all(telescoping)
        return record

    def _analysis_reducer(self, windows: Sequence[int], thetas: Sequence[float]):
        def reduce(block: range, recorded: Dict[int, np.ndarray]) -> List[Dict]:
            out = []
            for position, index in enumerate(block):
                per_window = {}
                for T in windows:
                    field = SpaceTimeField(self.grid.window(T), recorded[T][position])
                    per_window[str(T)] = self.analyze_sample(field, thetas)
                out.append({'sample_index': index, 'windows': per_window})
            return out
        return reduce

    def analyze_ensemble(self, solver: MildSolver, windows: Sequence[int], samples: int,
                         thetas: Sequence[float], records: Optional[List[Dict]] = None) -> List[Dict]:
        """Per-sample analysis records in sample order; completed blocks are appended to records"""
        records = [] if records is None else records
        for block_records in self.simulate_blocks(solver, windows, samples,
                                                  reducer=self._analysis_reducer(windows, thetas)):
            records.extend(block_records)
        return records

    @staticmethod
    def _sup_reducer(windows: Sequence[int]):
        def reduce(block: range, recorded: Dict[int, np.ndarray]) -> Dict[int, np.ndarray]:
            axes = tuple(range(1, next(iter(recorded.values())).ndim))
            return {T: np.abs(recorded[T]).max(axis=axes) for T in windows}
        return reduce

    @staticmethod
    def _rescaled_sup_reducer(windows: Sequence[int], rate: float, dt: float):
        """sup of exp(rate t) |v| per window; undoes the change of unknown v = exp(-rate t) u"""
        def reduce(block: range, recorded: Dict[int, np.ndarray]) -> Dict[int, np.ndarray]:
            out = {}
            for T in windows:
                values = recorded[T]
                times = T + dt * np.arange(values.shape[1])
                scale = np.exp(rate * times).reshape((1, -1) + (1,) * (values.ndim - 2))
                out[T] = np.abs(values * scale).max(axis=tuple(range(1, values.ndim)))
            return out
        return reduce

    def sup_norms(self, solver: MildSolver, windows: Sequence[int], samples: int,
                  reducer: Optional[Callable] = None) -> Dict[int, np.ndarray]:
        """U_T = ||u||_{L^inf(Q_T)} per sample and window"""
        chunks: Dict[int, List[np.ndarray]] = {T: [] for T in windows}
        reducer = reducer or self._sup_reducer(windows)
        for block in self.simulate_blocks(solver, windows, samples, reducer=reducer):
            for T in windows:
                chunks[T].append(block[T])
        return {T: np.concatenate(chunks[T]) for T in windows}

    # ------------------------------------------------------------------
    # moments
    # ------------------------------------------------------------------

    def collect_moment_records(self, spec: Optional[OperatorSpec] = None, forcing: Optional[ForcingSpec] = None,
                               name: str = 'moments') -> List[Dict]:
        """
        Simulate the ensemble and analyze every sample on every window

        Returns:
            One record per sample (sup norm, seminorms, chaining checks per window)
        """
        plan = self.plan
        windows = sorted(int(T) for T in plan.windows)
        solver = self.solver(spec, forcing)
        log(f"[INFO] {name}: {plan.samples} samples, windows {windows}, backend {solver.backend.kind.value}")
        records: List[Dict] = []
        try:
            self.analyze_ensemble(solver, windows, plan.samples, list(plan.theta_list), records)
        except KeyboardInterrupt:
            self._save_partial(name, {'plan': plan.describe(), 'status': 'interrupted', 'records': records})
            raise
        return records

    def run_moments(self, spec: Optional[OperatorSpec] = None, forcing: Optional[ForcingSpec] = None,
                    name: str = 'moments') -> MomentReport:
        """E||u||^k over L^inf(Q_T) and C^theta(Q_T) for every window, k and theta"""
        return self.aggregate_moments(self.collect_moment_records(spec, forcing, name), name)

    def aggregate_moments(self, records: List[Dict], name: str = 'moments') -> MomentReport:
        """
        Bootstrap moment estimates and checks from per-sample records

        Args:
            records: Output of collect_moment_records (possibly reloaded from JSON)
            name: Report name

        Returns:
            MomentReport with bootstrap intervals and the flatness, Lyapunov
            and chaining checks
        """
        plan = self.plan
        windows = sorted(int(T) for T in plan.windows)
        thetas = list(plan.theta_list)
        if len(records) != plan.samples:
            raise InsufficientSamplesError(f"Expected {plan.samples} records, got {len(records)}",
                                           {'records': len(records), 'samples': plan.samples})
        records = sorted(records, key=lambda r: r['sample_index'])

        report = MomentReport(name=name, plan=plan.describe())
        sups = {T: np.array([r['windows'][str(T)]['sup_norm'] for r in records]) for T in windows}
        holder = {(T, theta): np.array([r['windows'][str(T)]['holder_norm'][f"{theta:.4g}"] for r in records])
                  for T in windows for theta in thetas}

        for T in windows:
            for ki, k in enumerate(plan.k_list):
                est = self._moment(sups[T], k, T, ki, 0)
                report.estimates.append(MomentEstimate(T, float(k), 'sup', None, *est, plan.samples))
                for ti, theta in enumerate(thetas):
                    est = self._moment(holder[(T, theta)], k, T, ki, ti + 1)
                    report.estimates.append(MomentEstimate(T, float(k), 'holder', float(theta), *est, plan.samples))

        self._moment_checks(report, windows, thetas, sups, holder, records)
        report.data = {
            'sup_norms': {str(T): sups[T].tolist() for T in windows},
            'modes': sorted({r['windows'][str(T)]['mode'] for r in records for T in windows}),
        }
        log(f"[OK] {name}: {'passed' if report.passed else 'FAILED'}")
        return report

    def _moment_checks(self, report: MomentReport, windows, thetas, sups, holder, records) -> None:
        plan = self.plan
        if 0.0 in [float(k) for k in plan.k_list]:
            zero = [report.estimate(T, 0.0).estimate for T in windows]
            report.checks.append(Check('k0_identity', all(abs(z - 1.0) < 1e-12 for z in zero),
                                       max(zero), 1.0))
        for T in windows:
            second = float(np.mean(sups[T] ** 2)) ** 0.5
            fourth = float(np.mean(sups[T] ** 4)) ** 0.25
            report.checks.append(Check(f'lyapunov_T{T}', second <= fourth * (1 + 1e-12), second, fourth))
        if len(windows) > 1:
            spread = ratio_spread([np.mean(sups[T] ** 2) for T in windows])
            report.checks.append(Check('sup_moment_flat_in_T', spread <= T_FLATNESS, spread, T_FLATNESS))
            for theta in thetas:
                spread = ratio_spread([np.mean(holder[(T, theta)] ** 2) for T in windows])
                report.checks.append(Check(f'holder_moment_flat_in_T_theta{theta:g}', spread <= T_FLATNESS,
                                           spread, T_FLATNESS, asserted=theta < 0.5))
        violations, worst = 0, 0.0
        for r in records:
            for T in windows:
                for c in r['windows'][str(T)]['chaining'].values():
                    violations += not c['holds']
                    if c['critical_K'] > 0:
                        worst = max(worst, c['seminorm'] / c['critical_K'])
        report.checks.append(Check('chaining_implication', violations == 0, float(violations), 0.0,
                                   detail=f'exact seminorm <= 4 critical K on every sample; '
                                          f'worst ratio {worst:.3f}'))
        telescoping = sum(not r['windows'][str(T)]['telescoping_holds'] for r in records for T in windows)
        report.checks.append(Check('telescoping_sup_bound', telescoping == 0, float(telescoping), 0.0))

    def run_divergence(self) -> MomentReport:
        """
        Moments for a divergence-form operator with rough coefficients

        The Hoelder exponent is min(0.1, alpha / 2) with alpha the empirical Nash
        exponent; the run always uses the finite-difference backend.
        """
        plan = self.plan
        spec = plan.operator_spec(self.grid)
        if spec.form is not OperatorForm.DIVERGENCE:
            raise ValidationError("Divergence experiment needs a divergence-form operator",
                                  {'operator': plan.operator, 'form': spec.form.value})
        nash = fit_nash_exponent(plan.make_backend(spec, self.grid, BackendKind.IMPLICIT_FD.value))
        theta = min(0.1, nash.alpha / 2.0) if nash.found else 0.05
        rerun = ExperimentService(replace(plan, backend=BackendKind.IMPLICIT_FD.value, theta_list=[theta]),
                                  self.store)
        report = rerun.run_moments(spec=spec, name='divergence')
        report.checks.append(Check('nash_exponent_found', nash.found, nash.alpha, 0.0))
        report.data['nash'] = nash.to_dict()
        report.data['theta'] = theta
        return report

    # ------------------------------------------------------------------
    # growth
    # ------------------------------------------------------------------

    def run_growth(self) -> ExperimentReport:
        """
        Growth factor exp(c_bar T) for A = Delta + c with constant c

        The unshifted run uses the finite-difference backend; the run with the
        zero-order shift alpha = c must show flat moments. When the forcing has a
        base profile, exp(alpha t) times the solution of the shifted operator driven
        by exp(-alpha t) f must reproduce the unshifted moments on the same paths.
        """
        plan = self.plan
        c = float(plan.growth.get('c', 2.0))
        windows = sorted(int(T) for T in plan.growth.get('windows', [0, 1, 2, 3, 4]))
        spec = validate(make_operator('growth', plan.d, {'c': c}), self.grid)
        forcing = plan.forcing_spec(self.grid)
        kind = BackendKind.IMPLICIT_FD.value

        report = ExperimentReport(name='growth', plan=plan.describe())
        sups = self.sup_norms(self.solver(spec, forcing, kind=kind, allow_growth=True), windows, plan.samples)
        means = [float(np.mean(sups[T])) for T in windows]
        slope = float(np.polyfit(windows, np.log(means), 1)[0]) if all(m > 0 for m in means) else 0.0
        report.checks.append(Check('growth_slope', slope <= spec.c_bar + GROWTH_SLACK, slope,
                                   spec.c_bar + GROWTH_SLACK))

        shifted = shift_zero_order(spec, spec.c_bar)
        shifted_sups = self.sup_norms(self.solver(shifted, forcing, kind=kind, allow_growth=False),
                                      windows, plan.samples)
        shifted_means = [float(np.mean(shifted_sups[T])) for T in windows]
        spread = ratio_spread(shifted_means)
        report.checks.append(Check('shifted_flat', spread <= T_FLATNESS, spread, T_FLATNESS))
        report.data = {'c_bar': spec.c_bar, 'windows': windows, 'mean_sup': means, 'slope': slope,
                       'shifted_mean_sup': shifted_means}

        if plan.forcing in SHIFTABLE_FORCINGS:
            decaying = plan.forcing_spec(self.grid, kind='exp_decay',
                                         params={**plan.forcing_params, 'rate': spec.c_bar, 'base': plan.forcing})
            rescaled = self.sup_norms(self.solver(shifted, decaying, kind=kind, allow_growth=False), windows,
                                      plan.samples, reducer=self._rescaled_sup_reducer(windows, spec.c_bar,
                                                                                       self.grid.dt))
            rescaled_means = [float(np.mean(rescaled[T])) for T in windows]
            gap = max(abs(r - m) / m for r, m in zip(rescaled_means, means) if m > 0)
            report.checks.append(Check('shift_equivalence', gap <= SHIFT_TOLERANCE, gap, SHIFT_TOLERANCE,
                                       detail='exp(alpha t) v against u on the same paths'))
            report.data['rescaled_mean_sup'] = rescaled_means
            report.data['shift_gap'] = gap
        else:
            log(f"[INFO] growth: forcing '{plan.forcing}' has no base profile; shift equivalence skipped")
        log(f"[OK] growth: slope {slope:.4f} (c_bar {spec.c_bar})")
        return report

    # ------------------------------------------------------------------
    # threshold scan
    # ------------------------------------------------------------------

    def run_threshold_scan(self) -> ExperimentReport:
        """
        E||u||^2_{C^theta(Q^0)} across spike widths eps for a B^p forcing

        Boundedness across eps is asserted for theta <= 1/2 - d/(2p) - 0.05 (capped by
        the empirical Nash exponent for divergence-form operators); larger theta is
        reported only.
        """
        plan = self.plan
        p = float(plan.threshold.get('p', 4.0))
        eps_list = [float(e) for e in plan.threshold.get('eps', default_threshold()['eps'])]
        thetas = [float(t) for t in plan.threshold.get('thetas', default_threshold()['thetas'])]
        threshold = 0.5 - plan.d / (2.0 * p)
        spec = plan.operator_spec(self.grid)

        ceiling = threshold - THRESHOLD_MARGIN
        alpha = None
        if spec.form is OperatorForm.DIVERGENCE:
            alpha = fit_nash_exponent(plan.make_backend(spec, self.grid, BackendKind.IMPLICIT_FD.value)).alpha
            ceiling = min(ceiling, alpha)

        report = ExperimentReport(name='threshold', plan=plan.describe())
        moments: Dict[float, Dict[float, float]] = {theta: {} for theta in thetas}
        sup_moments: Dict[float, float] = {}
        for eps in eps_list:
            forcing = make_forcing('spike', {'eps': eps, 'p': p}, d=plan.d, j_count=plan.j_count, grid=self.grid)
            records = self.analyze_ensemble(self.solver(spec, forcing), [0], plan.samples, thetas)
            sup_moments[eps] = float(np.mean([r['windows']['0']['sup_norm'] ** 2 for r in records]))
            for theta in thetas:
                moments[theta][eps] = float(np.mean([r['windows']['0']['holder_norm'][f"{theta:.4g}"] ** 2
                                                     for r in records]))
            log(f"[INFO] threshold: eps = {eps:g} done")

        trends = {}
        for theta in thetas:
            values = [moments[theta][eps] for eps in eps_list]
            spread = ratio_spread(values)
            bounded = theta <= ceiling + 1e-12
            report.checks.append(Check(f'bounded_theta{theta:g}', spread <= EPS_FLATNESS, spread, EPS_FLATNESS,
                                       asserted=bounded))
            if not bounded and all(v > 0 for v in values):
                trends[f"{theta:g}"] = loglog_slope(eps_list, values)
        if plan.d < p:
            spread = ratio_spread(list(sup_moments.values()))
            report.checks.append(Check('sup_moment_bounded_in_eps', spread <= EPS_FLATNESS, spread, EPS_FLATNESS))

        control = {}
        if plan.threshold.get('control', True):
            forcing = make_forcing('constant_one', {}, d=plan.d, j_count=plan.j_count, grid=self.grid)
            records = self.analyze_ensemble(self.solver(spec, forcing), [0], plan.samples, thetas)
            for theta in thetas:
                control[f"{theta:g}"] = float(np.mean([r['windows']['0']['holder_norm'][f"{theta:.4g}"] ** 2
                                                       for r in records]))
            finite = all(np.isfinite(v) for v in control.values())
            report.checks.append(Check('b_infty_control_finite', finite, float(len(control)), 0.0))

        report.data = {
            'p': p, 'threshold': threshold, 'ceiling': ceiling, 'nash_alpha': alpha, 'eps': eps_list,
            'holder_moments': {f"{theta:g}": [moments[theta][e] for e in eps_list] for theta in thetas},
            'sup_moments': [sup_moments[e] for e in eps_list],
            'above_threshold_trend': trends,
            'control': control
        }
        return report

    # ------------------------------------------------------------------
    # tail
    # ------------------------------------------------------------------

    @staticmethod
    def tail_test(samples: np.ndarray, s: float = 2.0, min_samples: int = TAIL_MIN_SAMPLES) -> ExperimentReport:
        """
        Survival-function decay test on samples of U

        Passes when the log-log slope of P{U >= K} is <= -2 and the Weibull
        index of -log P{U >= K} is >= 1.25 over K in [median, quantile(1 - 10/M)].
        """
        samples = np.asarray(samples, dtype=float)
        if samples.size < min_samples:
            raise InsufficientSamplesError(f"Tail test needs at least {min_samples} samples, got {samples.size}",
                                           {'samples': int(samples.size), 'required': min_samples})
        low = float(np.median(samples))
        high = float(np.quantile(samples, 1.0 - 10.0 / samples.size))
        if not high > low > 0:
            raise InsufficientSamplesError("Samples do not span a usable tail range", {'median': low, 'upper': high})
        k_grid = np.logspace(math.log10(low), math.log10(high), TAIL_GRID_POINTS)
        tail = np.array([np.mean(samples >= K) for K in k_grid])
        slope = loglog_slope(k_grid, tail, min_points=4)
        usable = (tail > 0) & (tail < 1)
        weibull = loglog_slope(k_grid[usable], -np.log(tail[usable]), min_points=4)
        moment = tail_to_moments(samples, s, min_samples=min(min_samples, samples.size))

        report = ExperimentReport(name='tail', plan={})
        report.checks.append(Check('tail_slope', slope <= TAIL_SLOPE_CEILING, slope, TAIL_SLOPE_CEILING))
        report.checks.append(Check('tail_weibull_index', weibull >= TAIL_WEIBULL_FLOOR, weibull, TAIL_WEIBULL_FLOOR))
        report.checks.append(Check('tail_moment_identity', moment.agrees, moment.relative_gap, 0.01))
        report.data = {'K': k_grid.tolist(), 'survival': tail.tolist(), 'slope': slope, 'weibull_index': weibull,
                       'moment': moment.to_dict(), 'samples': int(samples.size)}
        return report

    def run_tail(self) -> ExperimentReport:
        plan = self.plan
        samples = int(plan.tail.get('samples', TAIL_MIN_SAMPLES))
        if samples < TAIL_MIN_SAMPLES:
            raise InsufficientSamplesError(f"Tail experiment needs at least {TAIL_MIN_SAMPLES} samples, got {samples}",
                                           {'samples': samples, 'required': TAIL_MIN_SAMPLES})
        T = int(plan.tail.get('window', 0))
        sups = self.sup_norms(self.solver(), [T], samples)[T]
        report = self.tail_test(sups, float(plan.tail.get('s', 2.0)))
        report.plan = plan.describe()
        report.data['window'] = T
        log(f"[OK] tail: slope {report.data['slope']:.3f}, weibull index {report.data['weibull_index']:.3f}")
        return report

    # ------------------------------------------------------------------
    # increments
    # ------------------------------------------------------------------

    def run_increments(self) -> ExperimentReport:
        """Time-increment exponent of E|u(1/2, t + delta) - u(1/2, t)|^p at t = T + 1/2"""
        plan = self.plan
        samples = int(plan.increments.get('samples', 1000))
        T = int(plan.increments.get('window', 0))
        lags = list(range(1, int(plan.increments.get('lags', 16)) + 1))
        p = float(plan.increments.get('p', 2.0))
        center = ((self.grid.nx - 1) // 2,) * self.grid.d
        columns = []
        for block, recorded in self.simulate_blocks(self.solver(), [T], samples, spatial_index=center):
            columns.append(recorded[T])
        columns = np.concatenate(columns)
        fit = fit_increment_exponent(columns, self.grid.dt, self.grid.n_levels // 2, lags, p,
                                     n_resamples=plan.bootstrap_resamples, seed=plan.seed)

        base = self.grid.n_levels // 2
        standardized = [columns[:, base + k] - columns[:, base] for k in lags]
        pooled = np.concatenate([d / d.std() for d in standardized if d.std() > 0] or [np.empty(0)])
        kurtosis = float(stats.kurtosis(pooled, fisher=False)) if pooled.size else float('nan')

        report = ExperimentReport(name='increments', plan=plan.describe())
        report.checks.append(Check('increment_exponent_floor', fit.exponent >= INCREMENT_LOW, fit.exponent,
                                   INCREMENT_LOW))
        report.checks.append(Check('increment_exponent_ceiling', fit.ci_low <= INCREMENT_HIGH, fit.ci_low,
                                   INCREMENT_HIGH, detail='lower 95% bound of the exponent'))
        report.checks.append(Check('gaussian_kurtosis', abs(kurtosis - KURTOSIS_TARGET) <= KURTOSIS_TOLERANCE,
                                   kurtosis, KURTOSIS_TARGET))
        report.data = {'fit': fit.to_dict(), 'x': [0.5] * self.grid.d, 't': T + 0.5, 'pooled_kurtosis': kurtosis}
        log(f"[OK] increments: exponent {fit.exponent:.3f} [{fit.ci_low:.3f}, {fit.ci_high:.3f}]")
        return report

    # ------------------------------------------------------------------
    # semigroup diagnostics
    # ------------------------------------------------------------------

    def run_semigroup(self, p_list: Sequence[float] = (2.0, 64.0), theta: float = 0.5) -> ExperimentReport:
        """Kernel decay fits, semigroup defects, the backend cross-check and smoothing ratios"""
        plan = self.plan
        spec = plan.operator_spec(self.grid)
        report = ExperimentReport(name='semigroup', plan=plan.describe())
        rows: List[Dict] = []
        fd = plan.make_backend(spec, self.grid, BackendKind.IMPLICIT_FD.value)
        backends = {'implicit_fd': fd}
        if spec.is_laplacian(self.grid):
            backends['spectral'] = plan.make_backend(spec, self.grid, BackendKind.SPECTRAL.value)

        for label, backend in backends.items():
            for p in p_list:
                fit = fit_kernel_decay(backend, p)
                report.checks.append(Check(f'kernel_decay_{label}_p{p:g}', fit.within_tolerance, fit.slope,
                                           fit.expected, asserted=label == 'spectral' or not np.isinf(p),
                                           detail=f'|slope - expected| <= {SLOPE_TOLERANCE}'))
                for t, norm in zip(fit.t_list, fit.norms):
                    rows.append({'backend': label, 'kind': f'kernel_L{p:g}', 't': t, 'norm': norm,
                                 'fitted_slope': fit.slope})

        pts = self.grid.points()
        smooth = np.prod(pts * (1 - pts), axis=-1)
        limits = {'spectral': 1e-6, 'implicit_fd': 1e-4}
        for label, backend in backends.items():
            defect = semigroup_defect(backend, smooth, 0.03, 0.07) / max(np.abs(smooth).max(), 1e-300)
            report.checks.append(Check(f'semigroup_defect_{label}', defect <= limits[label], defect, limits[label]))
            contraction = float(np.abs(backend.evolve(smooth, 0.1)).max()) <= float(np.abs(smooth).max()) + 1e-12
            if spec.c_bar == 0:
                report.checks.append(Check(f'linf_contraction_{label}', contraction, 0.0, 0.0))

        if 'spectral' in backends:
            a = backends['spectral'].evolve(smooth, 0.1)
            b = backends['implicit_fd'].evolve(smooth, 0.1)
            discrepancy = float(np.abs(a - b).max() / np.abs(a).max())
            report.checks.append(Check('cross_backend', discrepancy <= 1e-3, discrepancy, 1e-3))

        base = next(iter(backends.values())) if 'spectral' not in backends else backends['spectral']
        smoothing = fit_smoothing_exponents(base, rough_step_data(self.grid), theta)
        report.checks.append(Check('smoothing_ratio_bounded', smoothing.ratio_spread <= 3.0, smoothing.ratio_spread,
                                   3.0))
        report.checks.append(Check('smoothing_spatial_exponent', smoothing.spatial_ok, smoothing.spatial_slope,
                                   smoothing.spatial_target))
        report.checks.append(Check('interpolation_inequality', smoothing.interpolation_holds,
                                   smoothing.interpolation_margin, 1.0))
        for t, norm in zip(smoothing.t_list, smoothing.norms):
            rows.append({'backend': base.kind.value, 'kind': f'holder_{theta:g}', 't': t, 'norm': norm,
                         'fitted_slope': smoothing.spatial_slope})

        nash = None
        if spec.form is OperatorForm.DIVERGENCE:
            nash = fit_nash_exponent(fd)
            report.checks.append(Check('nash_exponent_found', nash.found, nash.alpha, 0.0))
        report.data = {'rows': rows, 'smoothing': smoothing.to_dict(),
                       'nash': nash.to_dict() if nash else None}
        return report


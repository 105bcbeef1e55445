"""
Selftest Service Module
Oracle suite run by the `selftest` command: the oscillation bound on random fields,
the modal covariance oracle and the spectral/finite-difference cross-check.
"""

import math
from typing import Optional

import numpy as np

from services.experiment_service import Check, ExperimentReport
from services.grid_service import Domain, SpaceTimeGrid
from services.noise_service import make_forcing, sample_path, stream
from services.operator_service import make_operator, validate
from services.regularity_service import displacement_envelope, increment_bound, osc_profile
from services.semigroup_service import BackendKind, SemigroupBackend, semigroup_defect
from services.solver_service import MildSolver, SpaceTimeField, exact_covariance
from utils.console import log

RANDOM_FIELDS = 200
RANDOM_FIELD_LEVEL = 5
COVARIANCE_SAMPLES = 2000
COVARIANCE_SIGMAS = 3.0
CROSS_CHECK_LIMIT = 1e-3
SELFTEST_TAG = 0x5E1F


class SelftestService:
    """Deterministic oracle checks; every check is asserted"""

    def __init__(self, seed: int = 0, covariance_samples: int = COVARIANCE_SAMPLES,
                 random_fields: int = RANDOM_FIELDS, block_size: int = 64):
        self.seed = int(seed)
        self.covariance_samples = int(covariance_samples)
        self.random_fields = int(random_fields)
        self.block_size = int(block_size)

    def oscillation_violations(self) -> int:
        """
        Count node pairs whose increment exceeds 2 gamma_[log2(1/|delta|)]

        Fields are i.i.d. Gaussian on a 2^-5 space-time grid over [0, 1]^2.
        """
        size = 2 ** RANDOM_FIELD_LEVEL
        grid = SpaceTimeGrid(Domain(1), size + 1, 1.0 / size)
        rng = stream(self.seed, SELFTEST_TAG, 4)
        violations = 0
        for _ in range(self.random_fields):
            field = SpaceTimeField(grid, rng.standard_normal(grid.field_shape))
            profile = osc_profile(field, RANDOM_FIELD_LEVEL)
            displacements, envelope = displacement_envelope(field.values)
            delta = np.maximum(np.abs(displacements[:, 0]) * grid.dt, np.abs(displacements[:, 1]) * grid.h)
            bounds = np.array([increment_bound(profile, float(x)) for x in delta])
            violations += int(np.sum(envelope > bounds * (1 + 1e-12)))
        return violations

    def covariance_check(self) -> Check:
        """Monte Carlo variance of u(1/2, 1/2) against the modal oracle, A = Laplacian and f = 1"""
        grid = SpaceTimeGrid(Domain(1), 129, 2.0 ** -10)
        spec = validate(make_operator('laplacian', 1), grid)
        backend = SemigroupBackend(spec, grid, BackendKind.SPECTRAL)
        forcing = make_forcing('constant_one', {}, d=1, j_count=1, grid=grid)
        solver = MildSolver(backend, forcing)
        middle = grid.steps_per_unit // 2
        centre = ((grid.nx - 1) // 2,)

        values = []
        for start in range(0, self.covariance_samples, self.block_size):
            block = range(start, min(start + self.block_size, self.covariance_samples))
            paths = [sample_path(self.seed, i, 1, grid.dt, 1.0) for i in block]
            recorded = solver.solve_windows(paths, [0], spatial_index=centre)[0]
            values.append(recorded[:, middle])
        values = np.concatenate(values)

        variance = float(np.mean(values ** 2))
        stderr = math.sqrt(max(float(np.mean(values ** 4)) - variance ** 2, 0.0) / values.size)
        oracle = exact_covariance(backend, forcing, (0.5,), (0.5,), middle * grid.dt)
        gap = abs(variance - oracle)
        log(f"[INFO] covariance oracle {oracle:.6g}, Monte Carlo {variance:.6g} +- {stderr:.2g}")
        return Check('covariance_oracle', gap <= COVARIANCE_SIGMAS * stderr, gap, COVARIANCE_SIGMAS * stderr,
                     detail=f'oracle {oracle:.6g}, estimate {variance:.6g}')

    @staticmethod
    def cross_backend_gap(nx: int = 129) -> float:
        """Relative sup-norm gap of S_t F between the two backends for F = x(1 - x)"""
        grid = SpaceTimeGrid(Domain(1), nx, 2.0 ** -10)
        spec = validate(make_operator('laplacian', 1), grid)
        F = np.prod(grid.points() * (1 - grid.points()), axis=-1)
        a = SemigroupBackend(spec, grid, BackendKind.SPECTRAL).evolve(F, 0.1)
        b = SemigroupBackend(spec, grid, BackendKind.IMPLICIT_FD).evolve(F, 0.1)
        return float(np.abs(a - b).max() / np.abs(a).max())

    @staticmethod
    def spectral_defect(nx: int = 129) -> float:
        grid = SpaceTimeGrid(Domain(1), nx, 2.0 ** -10)
        spec = validate(make_operator('laplacian', 1), grid)
        F = np.prod(grid.points() * (1 - grid.points()), axis=-1)
        return semigroup_defect(SemigroupBackend(spec, grid, BackendKind.SPECTRAL), F, 0.03, 0.07) / np.abs(F).max()

    def run(self, covariance: Optional[bool] = True) -> ExperimentReport:
        """
        Run the whole suite

        Args:
            covariance: Include the Monte Carlo covariance check

        Returns:
            ExperimentReport named 'selftest'
        """
        report = ExperimentReport(name='selftest', plan={'seed': self.seed,
                                                         'covariance_samples': self.covariance_samples,
                                                         'random_fields': self.random_fields})
        violations = self.oscillation_violations()
        report.checks.append(Check('oscillation_bound', violations == 0, float(violations), 0.0,
                                   detail=f'{self.random_fields} random fields at level {RANDOM_FIELD_LEVEL}'))
        gap = self.cross_backend_gap()
        report.checks.append(Check('cross_backend', gap <= CROSS_CHECK_LIMIT, gap, CROSS_CHECK_LIMIT))
        defect = self.spectral_defect()
        report.checks.append(Check('semigroup_defect_spectral', defect <= 1e-6, defect, 1e-6))
        if covariance:
            report.checks.append(self.covariance_check())
        for check in report.checks:
            log(f"[{'OK' if check.passed else 'ERROR'}] selftest {check.name}: {check.value:.4g}")
        return report

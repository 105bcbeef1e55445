# Services Package
# Numerical service layer: grids, operators, semigroups, noise, solver, analyzers, experiments

from .experiment_service import ExperimentPlan, ExperimentService
from .selftest_service import SelftestService

__all__ = ['ExperimentPlan', 'ExperimentService', 'SelftestService']

"""
Config Service Module
Strict JSON run configuration: parsing, validation, defaults and environment overrides.
"""

import json
import os
from dataclasses import dataclass, replace
from typing import Any, Dict, Mapping, Optional

from services.experiment_service import (ExperimentPlan, default_growth, default_increments,
                                         default_tail, default_threshold)
from services.noise_service import FORCING_KINDS
from services.operator_service import OPERATOR_PRESETS
from utils.errors import ConfigParseError, ConfigValidationError, UsageError, ValidationError
from utils.validators import ConfigValidator, sanitize_run_config

DEFAULT_OUT = 'runs/default'
ENV_OUT = 'SPDE_HOLDER_OUT'
ENV_THREADS = 'SPDE_HOLDER_THREADS'


@dataclass(frozen=True)
class RunConfig:
    """Resolved run configuration: the experiment plan plus the output directory"""

    plan: ExperimentPlan
    out: str = DEFAULT_OUT

    @property
    def seed(self) -> int:
        return self.plan.seed

    @property
    def threads(self) -> int:
        return self.plan.threads

    def with_overrides(self, out: Optional[str] = None, threads: Optional[int] = None,
                       seed: Optional[int] = None) -> 'RunConfig':
        """Copy with command-line or environment values applied; None keeps the current value"""
        changes: Dict[str, Any] = {}
        if threads is not None:
            changes['threads'] = int(threads)
        if seed is not None:
            changes['seed'] = int(seed)
        plan = replace(self.plan, **changes) if changes else self.plan
        return RunConfig(plan=plan, out=out if out is not None else self.out)

    def to_dict(self) -> Dict:
        """Canonical JSON document; parse_config(json.dumps(cfg.to_dict())) reproduces cfg"""
        p = self.plan
        return {
            'operator': {'preset': p.operator, 'params': dict(p.operator_params)},
            'forcing': {'preset': p.forcing, 'params': dict(p.forcing_params), 'j_count': p.j_count},
            'grid': {'d': p.d, 'nx': p.nx, 'dt': p.dt},
            'plan': {
                'samples': p.samples, 'windows': list(p.windows), 'k_list': list(p.k_list),
                'theta_list': list(p.theta_list), 'block_size': p.block_size,
                'bootstrap_resamples': p.bootstrap_resamples, 'event_thresholds': list(p.event_thresholds),
                'allow_growth': p.allow_growth, 'guard': p.guard
            },
            'backend': {'kind': p.backend, 'n_modes': p.n_modes, 'substeps': p.substeps,
                        'backward_euler': p.backward_euler},
            'seed': p.seed,
            'threads': p.threads,
            'out': self.out,
            'growth': dict(p.growth),
            'threshold': dict(p.threshold),
            'tail': dict(p.tail),
            'increments': dict(p.increments)
        }


def _merged(defaults: Dict, overrides: Dict) -> Dict:
    out = dict(defaults)
    out.update(overrides)
    return out


def build_config(sanitized: Dict) -> RunConfig:
    """
    Apply defaults to a sanitized document

    Args:
        sanitized: Output of sanitize_run_config

    Returns:
        RunConfig
    """
    operator = sanitized.get('operator', {})
    forcing = sanitized.get('forcing', {})
    grid = sanitized.get('grid', {})
    plan = sanitized.get('plan', {})
    backend = sanitized.get('backend', {})
    fields: Dict[str, Any] = {
        'operator': operator.get('preset', 'laplacian'),
        'operator_params': operator.get('params', {}),
        'forcing': forcing.get('preset', 'constant_one'),
        'forcing_params': forcing.get('params', {}),
        'growth': _merged(default_growth(), sanitized.get('growth', {})),
        'threshold': _merged(default_threshold(), sanitized.get('threshold', {})),
        'tail': _merged(default_tail(), sanitized.get('tail', {})),
        'increments': _merged(default_increments(), sanitized.get('increments', {})),
    }
    if 'j_count' in forcing:
        fields['j_count'] = forcing['j_count']
    fields.update(grid)
    fields.update(plan)
    if 'kind' in backend:
        fields['backend'] = backend['kind']
    for key in ('n_modes', 'substeps', 'backward_euler'):
        if key in backend:
            fields[key] = backend[key]
    for key in ('seed', 'threads'):
        if key in sanitized:
            fields[key] = sanitized[key]
    try:
        plan_obj = ExperimentPlan(**fields)
    except ValidationError as e:
        raise ConfigValidationError(e.message, e.details)
    return RunConfig(plan=plan_obj, out=sanitized.get('out', DEFAULT_OUT))


def parse_config(text: str) -> RunConfig:
    """
    Parse and validate a JSON run configuration

    Args:
        text: JSON document

    Returns:
        Validated RunConfig

    Raises:
        ConfigParseError: malformed JSON, with line and column
        ConfigValidationError: unknown keys or invalid fields, naming the field
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"Config is not valid JSON: {e.msg} at line {e.lineno}, column {e.colno}",
                               {'line': e.lineno, 'column': e.colno, 'position': e.pos})
    is_valid, sanitized, error = sanitize_run_config(data, OPERATOR_PRESETS.keys(), FORCING_KINDS)
    if not is_valid:
        raise ConfigValidationError(error, {'errors': error.split('; ')})
    return build_config(sanitized)


def load_config(path: str) -> RunConfig:
    """Read and parse a config file"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise UsageError(f"Cannot read config file '{path}': {e.strerror}", {'path': path})
    return parse_config(text)


def resolve_config(config: RunConfig, out: Optional[str] = None, threads: Optional[int] = None,
                   seed: Optional[int] = None, environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Apply environment then command-line overrides (flags win over environment,
    environment wins over the file)
    """
    environ = os.environ if environ is None else environ
    env_threads = None
    if environ.get(ENV_THREADS):
        raw = environ[ENV_THREADS].strip()
        ok, error, env_threads = ConfigValidator.validate_integer(int(raw), 1, 256, ENV_THREADS) \
            if raw.isdigit() else (False, f"{ENV_THREADS} must be an integer", None)
        if not ok:
            raise ConfigValidationError(error, {'variable': ENV_THREADS})
    config = config.with_overrides(out=environ.get(ENV_OUT) or None, threads=env_threads)
    if threads is not None and threads < 1:
        raise UsageError(f"--threads must be positive, got {threads}", {'threads': threads})
    return config.with_overrides(out=out, threads=threads, seed=seed)

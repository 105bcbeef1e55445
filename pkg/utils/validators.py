"""
Run Configuration Validation Utilities
Field-level checks for run configuration documents
"""

import math
import re
from typing import Any, Dict, Iterable, List, Optional, Tuple

# Known keys per section; anything else is rejected
TOP_LEVEL_KEYS = ('operator', 'forcing', 'grid', 'plan', 'backend', 'seed', 'out', 'threads',
                  'growth', 'threshold', 'tail', 'increments')
SECTION_KEYS = {
    'operator': ('preset', 'params'),
    'forcing': ('preset', 'params', 'j_count'),
    'grid': ('d', 'nx', 'dt'),
    'plan': ('samples', 'windows', 'k_list', 'theta_list', 'block_size', 'bootstrap_resamples',
             'event_thresholds', 'allow_growth', 'guard'),
    'backend': ('kind', 'n_modes', 'substeps', 'backward_euler'),
    'growth': ('c', 'windows'),
    'threshold': ('p', 'eps', 'thetas', 'control'),
    'tail': ('samples', 'window', 's'),
    'increments': ('samples', 'window', 'lags', 'p'),
}
BACKEND_KINDS = ('spectral', 'implicit_fd')
MAX_THREADS = 256
MAX_WINDOW = 1024
IDENTIFIER_PATTERN = re.compile(r'^[A-Za-z0-9._-]+$')


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


class ConfigValidator:
    """Static field checks; each returns (is_valid, error_message[, value])"""

    @staticmethod
    def validate_keys(data: Any, allowed: Iterable[str], section: str = 'config') -> Tuple[bool, str]:
        """
        Reject unknown keys

        Args:
            data: Section mapping
            allowed: Known keys
            section: Dotted section name for error messages

        Returns:
            Tuple of (is_valid, error_message)
        """
        if not isinstance(data, dict):
            return False, f"{section} must be an object"
        unknown = sorted(set(data) - set(allowed))
        if unknown:
            return False, f"Unknown key '{unknown[0]}' in {section}"
        return True, ""

    @staticmethod
    def validate_integer(value: Any, min_val: Optional[int] = None, max_val: Optional[int] = None,
                         field_name: str = "Value") -> Tuple[bool, str, Optional[int]]:
        """
        Validate an integer field (booleans and non-integral numbers are rejected)

        Returns:
            Tuple of (is_valid, error_message, value)
        """
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            else:
                return False, f"{field_name} must be an integer", None
        if min_val is not None and value < min_val:
            return False, f"{field_name} must be at least {min_val}", None
        if max_val is not None and value > max_val:
            return False, f"{field_name} must be at most {max_val}", None
        return True, "", value

    @staticmethod
    def validate_number(value: Any, min_val: Optional[float] = None, max_val: Optional[float] = None,
                        field_name: str = "Value", exclusive: bool = False) -> Tuple[bool, str, Optional[float]]:
        """
        Validate a finite real field

        Args:
            value: Raw value
            min_val: Lower limit
            max_val: Upper limit
            field_name: Dotted field name
            exclusive: Treat both limits as strict

        Returns:
            Tuple of (is_valid, error_message, value)
        """
        if not _is_number(value) or not math.isfinite(value):
            return False, f"{field_name} must be a finite number", None
        value = float(value)
        if min_val is not None and (value <= min_val if exclusive else value < min_val):
            return False, f"{field_name} must be {'greater than' if exclusive else 'at least'} {min_val}", None
        if max_val is not None and (value >= max_val if exclusive else value > max_val):
            return False, f"{field_name} must be {'less than' if exclusive else 'at most'} {max_val}", None
        return True, "", value

    @staticmethod
    def validate_boolean(value: Any, field_name: str = "Value") -> Tuple[bool, str, Optional[bool]]:
        if not isinstance(value, bool):
            return False, f"{field_name} must be true or false", None
        return True, "", value

    @staticmethod
    def validate_choice(value: Any, allowed_choices: Iterable[str], field_name: str = "Field") -> Tuple[bool, str]:
        """
        Validate that value is one of the allowed names

        Returns:
            Tuple of (is_valid, error_message)
        """
        allowed = list(allowed_choices)
        if not isinstance(value, str) or not value:
            return False, f"{field_name} is required"
        if value not in allowed:
            return False, f"Unknown {field_name} '{value}' (known: {', '.join(sorted(allowed))})"
        return True, ""

    @staticmethod
    def validate_nx(value: Any) -> Tuple[bool, str, Optional[int]]:
        """nx must be 2^k + 1 with k >= 2"""
        ok, error, nx = ConfigValidator.validate_integer(value, min_val=5, field_name="grid.nx")
        if not ok:
            return ok, error, None
        if not _is_power_of_two(nx - 1):
            return False, f"grid.nx must be 2^k + 1, got {nx}", None
        return True, "", nx

    @staticmethod
    def validate_dt(value: Any) -> Tuple[bool, str, Optional[float]]:
        """1/dt must be a power of two"""
        ok, error, dt = ConfigValidator.validate_number(value, 0.0, 1.0, "grid.dt", exclusive=False)
        if not ok:
            return ok, error, None
        if dt <= 0:
            return False, "grid.dt must be positive", None
        steps = round(1.0 / dt)
        if not _is_power_of_two(steps) or abs(steps * dt - 1.0) > 1e-12:
            return False, f"grid.dt must be 2^-k, got {dt!r}", None
        return True, "", 1.0 / steps

    @staticmethod
    def validate_number_list(value: Any, field_name: str, min_val: Optional[float] = None,
                             max_val: Optional[float] = None, exclusive: bool = False,
                             integers: bool = False, allow_empty: bool = False) -> Tuple[bool, str, Optional[List]]:
        """
        Validate a list of numbers element by element

        Returns:
            Tuple of (is_valid, error_message, values)
        """
        if not isinstance(value, list):
            return False, f"{field_name} must be a list", None
        if not value and not allow_empty:
            return False, f"{field_name} must not be empty", None
        out = []
        for i, item in enumerate(value):
            name = f"{field_name}[{i}]"
            if integers:
                ok, error, parsed = ConfigValidator.validate_integer(item, min_val, max_val, name)
            else:
                ok, error, parsed = ConfigValidator.validate_number(item, min_val, max_val, name, exclusive)
            if not ok:
                return False, error, None
            out.append(parsed)
        return True, "", out

    @staticmethod
    def validate_params(value: Any, field_name: str) -> Tuple[bool, str, Optional[Dict]]:
        """Preset parameters: an object of numbers, strings, booleans or number lists"""
        if not isinstance(value, dict):
            return False, f"{field_name} must be an object", None
        for key, item in value.items():
            simple = _is_number(item) or isinstance(item, (str, bool))
            listed = isinstance(item, list) and all(_is_number(x) for x in item)
            if not (simple or listed):
                return False, f"{field_name}.{key} has an unsupported value", None
        return True, "", dict(value)


def _check(errors: List[str], result: Tuple, target: Dict, key: str) -> None:
    ok, error = result[0], result[1]
    if not ok:
        errors.append(error)
    elif len(result) > 2:
        target[key] = result[2]


def _section(data: Dict, name: str, errors: List[str]) -> Dict:
    raw = data.get(name, {})
    ok, error = ConfigValidator.validate_keys(raw, SECTION_KEYS[name], name)
    if not ok:
        errors.append(error)
        return {}
    return raw


def sanitize_run_config(data: Any, operator_presets: Iterable[str] = (),
                        forcing_kinds: Iterable[str] = ()) -> Tuple[bool, Dict, Optional[str]]:
    """
    Validate a parsed run configuration

    Only keys present in the document are checked and copied; defaults are
    applied by the caller.

    Args:
        data: Parsed JSON document
        operator_presets: Known operator preset names (unchecked when empty)
        forcing_kinds: Known forcing kinds (unchecked when empty)

    Returns:
        Tuple of (is_valid, sanitized_data, error_message)
    """
    errors: List[str] = []
    ok, error = ConfigValidator.validate_keys(data, TOP_LEVEL_KEYS, 'config')
    if not ok:
        return False, {}, error
    v = ConfigValidator
    sanitized: Dict[str, Any] = {}

    operator = _section(data, 'operator', errors)
    out_operator: Dict[str, Any] = {}
    if 'preset' in operator:
        presets = list(operator_presets)
        if presets:
            _check(errors, v.validate_choice(operator['preset'], presets, "operator.preset"), {}, '')
        out_operator['preset'] = operator['preset']
    if 'params' in operator:
        _check(errors, v.validate_params(operator['params'], "operator.params"), out_operator, 'params')
    sanitized['operator'] = out_operator

    forcing = _section(data, 'forcing', errors)
    out_forcing: Dict[str, Any] = {}
    if 'preset' in forcing:
        kinds = list(forcing_kinds)
        if kinds:
            _check(errors, v.validate_choice(forcing['preset'], kinds, "forcing.preset"), {}, '')
        out_forcing['preset'] = forcing['preset']
    if 'params' in forcing:
        _check(errors, v.validate_params(forcing['params'], "forcing.params"), out_forcing, 'params')
    if 'j_count' in forcing:
        _check(errors, v.validate_integer(forcing['j_count'], 1, 64, "forcing.j_count"), out_forcing, 'j_count')
    sanitized['forcing'] = out_forcing

    grid = _section(data, 'grid', errors)
    out_grid: Dict[str, Any] = {}
    if 'd' in grid:
        _check(errors, v.validate_integer(grid['d'], 1, 2, "grid.d"), out_grid, 'd')
    if 'nx' in grid:
        _check(errors, v.validate_nx(grid['nx']), out_grid, 'nx')
    if 'dt' in grid:
        _check(errors, v.validate_dt(grid['dt']), out_grid, 'dt')
    sanitized['grid'] = out_grid

    plan = _section(data, 'plan', errors)
    out_plan: Dict[str, Any] = {}
    if 'samples' in plan:
        _check(errors, v.validate_integer(plan['samples'], 100, None, "plan.samples"), out_plan, 'samples')
    if 'windows' in plan:
        _check(errors, v.validate_number_list(plan['windows'], "plan.windows", 0, MAX_WINDOW, integers=True),
               out_plan, 'windows')
    if 'k_list' in plan:
        _check(errors, v.validate_number_list(plan['k_list'], "plan.k_list", 0.0), out_plan, 'k_list')
    if 'theta_list' in plan:
        _check(errors, v.validate_number_list(plan['theta_list'], "plan.theta_list", 0.0, 1.0, exclusive=True),
               out_plan, 'theta_list')
    if 'block_size' in plan:
        _check(errors, v.validate_integer(plan['block_size'], 1, 4096, "plan.block_size"), out_plan, 'block_size')
    if 'bootstrap_resamples' in plan:
        _check(errors, v.validate_integer(plan['bootstrap_resamples'], 10, None, "plan.bootstrap_resamples"),
               out_plan, 'bootstrap_resamples')
    if 'event_thresholds' in plan:
        _check(errors, v.validate_number_list(plan['event_thresholds'], "plan.event_thresholds", 0.0,
                                              exclusive=True, allow_empty=True), out_plan, 'event_thresholds')
    if 'allow_growth' in plan:
        _check(errors, v.validate_boolean(plan['allow_growth'], "plan.allow_growth"), out_plan, 'allow_growth')
    if 'guard' in plan:
        _check(errors, v.validate_number(plan['guard'], 0.0, None, "plan.guard", exclusive=True), out_plan, 'guard')
    sanitized['plan'] = out_plan

    backend = _section(data, 'backend', errors)
    out_backend: Dict[str, Any] = {}
    if 'kind' in backend:
        _check(errors, v.validate_choice(backend['kind'], BACKEND_KINDS, "backend.kind"), {}, '')
        out_backend['kind'] = backend['kind']
    for key in ('n_modes', 'substeps'):
        if backend.get(key) is not None:
            _check(errors, v.validate_integer(backend[key], 1, None, f"backend.{key}"), out_backend, key)
    if 'backward_euler' in backend:
        _check(errors, v.validate_boolean(backend['backward_euler'], "backend.backward_euler"),
               out_backend, 'backward_euler')
    sanitized['backend'] = out_backend

    if 'seed' in data:
        _check(errors, v.validate_integer(data['seed'], 0, 2 ** 63 - 1, "seed"), sanitized, 'seed')
    if 'threads' in data:
        _check(errors, v.validate_integer(data['threads'], 1, MAX_THREADS, "threads"), sanitized, 'threads')
    if 'out' in data:
        if not isinstance(data['out'], str) or not data['out'].strip() or '\x00' in data['out']:
            errors.append("out must be a non-empty path")
        else:
            sanitized['out'] = data['out'].strip()

    growth = _section(data, 'growth', errors)
    out_growth: Dict[str, Any] = {}
    if 'c' in growth:
        lambda_1 = out_grid.get('d', 1) * math.pi ** 2
        _check(errors, v.validate_number(growth['c'], 0.0, lambda_1, "growth.c", exclusive=True), out_growth, 'c')
    if 'windows' in growth:
        _check(errors, v.validate_number_list(growth['windows'], "growth.windows", 0, MAX_WINDOW, integers=True),
               out_growth, 'windows')
    sanitized['growth'] = out_growth

    threshold = _section(data, 'threshold', errors)
    out_threshold: Dict[str, Any] = {}
    if 'p' in threshold:
        _check(errors, v.validate_number(threshold['p'], 1.0, None, "threshold.p", exclusive=True),
               out_threshold, 'p')
    if 'eps' in threshold:
        _check(errors, v.validate_number_list(threshold['eps'], "threshold.eps", 0.0, 1.0), out_threshold, 'eps')
    if 'thetas' in threshold:
        _check(errors, v.validate_number_list(threshold['thetas'], "threshold.thetas", 0.0, 1.0, exclusive=True),
               out_threshold, 'thetas')
    if 'control' in threshold:
        _check(errors, v.validate_boolean(threshold['control'], "threshold.control"), out_threshold, 'control')
    sanitized['threshold'] = out_threshold

    tail = _section(data, 'tail', errors)
    out_tail: Dict[str, Any] = {}
    if 'samples' in tail:
        _check(errors, v.validate_integer(tail['samples'], 1, None, "tail.samples"), out_tail, 'samples')
    if 'window' in tail:
        _check(errors, v.validate_integer(tail['window'], 0, MAX_WINDOW, "tail.window"), out_tail, 'window')
    if 's' in tail:
        _check(errors, v.validate_number(tail['s'], 1.0, None, "tail.s"), out_tail, 's')
    sanitized['tail'] = out_tail

    increments = _section(data, 'increments', errors)
    out_increments: Dict[str, Any] = {}
    if 'samples' in increments:
        _check(errors, v.validate_integer(increments['samples'], 1, None, "increments.samples"),
               out_increments, 'samples')
    if 'window' in increments:
        _check(errors, v.validate_integer(increments['window'], 0, MAX_WINDOW, "increments.window"),
               out_increments, 'window')
    if 'lags' in increments:
        _check(errors, v.validate_integer(increments['lags'], 2, None, "increments.lags"), out_increments, 'lags')
    if 'p' in increments:
        _check(errors, v.validate_number(increments['p'], 1.0, None, "increments.p"), out_increments, 'p')
    sanitized['increments'] = out_increments

    if errors:
        return False, {}, "; ".join(errors)
    return True, sanitized, None


def validate_identifier(value: Any, field_name: str = "Identifier") -> Tuple[bool, str]:
    """
    Validate a run, report or table name taken from a URL

    Args:
        value: Name to validate
        field_name: Name of the field for error messages

    Returns:
        Tuple of (is_valid, error_message)
    """
    if not isinstance(value, str) or not value:
        return False, f"{field_name} is required"
    if len(value) > 100:
        return False, f"{field_name} is too long"
    if value.startswith('.') or not IDENTIFIER_PATTERN.match(value):
        return False, f"Invalid {field_name.lower()}"
    return True, ""

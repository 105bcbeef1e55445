"""
Configuration tests for spde-holder.
Tests strict JSON parsing, field validation, defaults and override precedence.
"""

import json
import os

import pytest

from services.config_service import DEFAULT_OUT, RunConfig, load_config, parse_config, resolve_config
from utils.errors import ConfigParseError, ConfigValidationError, UsageError
from utils.validators import ConfigValidator, sanitize_run_config, validate_identifier


class TestParseConfig:
    """Test parsing of run configuration documents."""

    def test_minimal_config(self, config_text):
        """Test that a minimal document is accepted and defaults are applied."""
        config = parse_config(config_text)
        assert isinstance(config, RunConfig)
        assert config.plan.nx == 17
        assert config.plan.dt == 0.03125
        assert config.seed == 3
        assert config.out == DEFAULT_OUT
        assert config.plan.k_list == [0.0, 1.0, 2.0, 4.0]
        assert config.plan.growth['c'] == 2.0

    def test_empty_document(self):
        """Test that {} gives the desk-scale defaults."""
        config = parse_config('{}')
        assert config.plan.operator == 'laplacian'
        assert config.plan.windows == [0, 1, 2, 4, 8]

    def test_round_trip(self, config_text):
        """Test that the canonical document parses back to the same config."""
        config = parse_config(config_text)
        assert parse_config(json.dumps(config.to_dict())) == config

    def test_malformed_json(self):
        """Test that parse errors carry line and column."""
        with pytest.raises(ConfigParseError) as exc:
            parse_config('{\n  "seed": 3,\n}')
        assert exc.value.details['line'] == 3
        assert 'column' in exc.value.details
        assert exc.value.to_dict()['error'] == 'config_parse'

    def test_nx_not_dyadic(self):
        """Test that nx must be 2^k + 1."""
        with pytest.raises(ConfigValidationError) as exc:
            parse_config('{"grid": {"nx": 100}}')
        assert exc.value.message == "grid.nx must be 2^k + 1, got 100"
        assert exc.value.exit_code == 2

    def test_dt_not_dyadic(self):
        """Test that 1/dt must be a power of two."""
        with pytest.raises(ConfigValidationError):
            parse_config('{"grid": {"dt": 0.1}}')

    def test_unknown_key(self):
        """Test that misspelled keys are rejected by name."""
        with pytest.raises(ConfigValidationError) as exc:
            parse_config('{"backend": {"kind": "spectral", "fourier_cutofff": 12}}')
        assert "Unknown key 'fourier_cutofff'" in exc.value.message

    def test_unknown_top_level_key(self):
        """Test that unknown sections are rejected."""
        with pytest.raises(ConfigValidationError):
            parse_config('{"sampels": 100}')

    def test_unknown_preset(self):
        """Test that operator presets are checked."""
        with pytest.raises(ConfigValidationError) as exc:
            parse_config('{"operator": {"preset": "heat"}}')
        assert 'operator.preset' in exc.value.message

    def test_errors_collected(self):
        """Test that every invalid field is reported."""
        with pytest.raises(ConfigValidationError) as exc:
            parse_config('{"plan": {"samples": 10, "theta_list": [1.5]}}')
        assert len(exc.value.details['errors']) == 2

    @pytest.mark.parametrize('c,phrase', [(0.0, 'greater than 0.0'), (10.0, 'less than 9.8696')])
    def test_growth_rate_range(self, c, phrase):
        """Test that growth.c must lie strictly inside (0, d pi^2)."""
        with pytest.raises(ConfigValidationError) as exc:
            parse_config(json.dumps({'growth': {'c': c}}))
        assert exc.value.message.startswith('growth.c must be')
        assert phrase in exc.value.message

    def test_growth_rate_bound_follows_dimension(self):
        """Test that two-dimensional grids admit c up to 2 pi^2."""
        config = parse_config('{"grid": {"d": 2, "nx": 17, "dt": 0.0625}, "growth": {"c": 12.0}}')
        assert config.plan.growth['c'] == 12.0

    def test_empty_windows(self):
        """Test that at least one window is required."""
        with pytest.raises(ConfigValidationError) as exc:
            parse_config('{"plan": {"windows": []}}')
        assert exc.value.message == "plan.windows must not be empty"


class TestLoadConfig:
    """Test reading configuration files."""

    def test_missing_file(self, tmp_path):
        """Test that an unreadable file is a usage error."""
        with pytest.raises(UsageError) as exc:
            load_config(str(tmp_path / 'absent.json'))
        assert exc.value.exit_code == 1

    def test_reads_file(self, tmp_path, config_text):
        """Test that a file on disk is parsed."""
        path = tmp_path / 'run.json'
        path.write_text(config_text)
        assert load_config(str(path)).seed == 3


class TestResolveConfig:
    """Test flag, environment and file precedence."""

    def test_environment_overrides_file(self, config_text):
        """Test that environment values replace file values."""
        config = resolve_config(parse_config(config_text),
                                environ={'SPDE_HOLDER_OUT': 'env_out', 'SPDE_HOLDER_THREADS': '4'})
        assert config.out == 'env_out'
        assert config.threads == 4

    def test_flags_override_environment(self, config_text):
        """Test that command-line flags win over the environment."""
        config = resolve_config(parse_config(config_text), out='flag_out', threads=2, seed=9,
                                environ={'SPDE_HOLDER_OUT': 'env_out', 'SPDE_HOLDER_THREADS': '4'})
        assert config.out == 'flag_out'
        assert config.threads == 2
        assert config.seed == 9

    def test_empty_environment_keeps_file(self, config_text):
        """Test that no overrides keep the file values."""
        config = resolve_config(parse_config(config_text), environ={})
        assert config == parse_config(config_text)

    def test_invalid_environment_threads(self, config_text):
        """Test that a non-numeric thread count is rejected."""
        with pytest.raises(ConfigValidationError) as exc:
            resolve_config(parse_config(config_text), environ={'SPDE_HOLDER_THREADS': 'many'})
        assert exc.value.details['variable'] == 'SPDE_HOLDER_THREADS'

    def test_invalid_flag_threads(self, config_text):
        """Test that --threads 0 is a usage error."""
        with pytest.raises(UsageError):
            resolve_config(parse_config(config_text), threads=0, environ={})


class TestConfigValidator:
    """Test individual field checks."""

    def test_integer_rejects_bool(self):
        """Test that booleans are not integers."""
        assert ConfigValidator.validate_integer(True)[0] is False
        assert ConfigValidator.validate_integer(4.0) == (True, "", 4)

    def test_number_rejects_nan(self):
        """Test that non-finite numbers are rejected."""
        assert ConfigValidator.validate_number(float('nan'))[0] is False

    def test_nx(self):
        """Test dyadic node counts."""
        assert ConfigValidator.validate_nx(33) == (True, "", 33)
        assert ConfigValidator.validate_nx(3)[0] is False

    def test_number_list_names_index(self):
        """Test that list errors name the failing element."""
        ok, error, _ = ConfigValidator.validate_number_list([0.1, -1.0], "plan.k_list", 0.0)
        assert not ok
        assert 'plan.k_list[1]' in error

    def test_sanitize_copies_present_keys_only(self):
        """Test that absent fields are left for the defaults."""
        ok, sanitized, error = sanitize_run_config({'grid': {'nx': 33}})
        assert ok and error is None
        assert sanitized['grid'] == {'nx': 33}
        assert sanitized['plan'] == {}

    @pytest.mark.parametrize('value,valid', [
        ('run-01', True),
        ('moments_vs_T', True),
        ('../etc', False),
        ('.hidden', False),
        ('a/b', False),
        ('', False),
    ])
    def test_validate_identifier(self, value, valid):
        """Test names accepted from URLs."""
        assert validate_identifier(value)[0] is valid


class TestShippedConfigs:
    """Test the configuration files in configs/."""

    @pytest.mark.parametrize('name', ['desk.json', 'divergence.json'])
    def test_config_parses(self, name):
        """Test that every shipped config is valid."""
        path = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs', name)
        config = load_config(path)
        assert config.plan.nx == 129
        assert config.plan.samples == 500

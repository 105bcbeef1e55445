"""
Command-line tests for spde-holder.
Tests subcommand dispatch, exit codes, JSON errors on stderr and reproducible artifacts.
"""

import json

import pytest

from spde_holder import build_parser, failed_checks, main, provenance, require_acceptance
from services.config_service import parse_config
from services.experiment_service import Check, ExperimentReport
from services.selftest_service import SelftestService
from utils.errors import AcceptanceError


@pytest.fixture
def config_file(tmp_path, config_text):
    path = tmp_path / 'config.json'
    path.write_text(config_text)
    return str(path)


def last_error(capsys):
    """Parse the JSON error envelope printed on stderr."""
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


class TestUsage:
    """Test argument handling and usage errors."""

    def test_no_command(self, capsys):
        """Test that a missing command exits 1."""
        assert main([]) == 1
        assert last_error(capsys)['error'] == 'usage'

    def test_unknown_option(self, capsys):
        """Test that argparse errors become JSON usage errors."""
        assert main(['simulate', '--frobnicate']) == 1
        assert 'usage' in last_error(capsys)['details']

    def test_config_required(self, capsys):
        """Test that simulate needs --config."""
        assert main(['simulate']) == 1
        assert last_error(capsys)['details']['command'] == 'simulate'

    def test_missing_config_file(self, tmp_path, capsys):
        """Test that an unreadable config file exits 1."""
        assert main(['simulate', '--config', str(tmp_path / 'absent.json')]) == 1

    def test_invalid_config(self, tmp_path, capsys):
        """Test that config validation errors exit 2."""
        path = tmp_path / 'bad.json'
        path.write_text('{"grid": {"nx": 100}}')
        assert main(['simulate', '--config', str(path)]) == 2
        error = last_error(capsys)
        assert error['error'] == 'config_validation'
        assert error['message'] == 'grid.nx must be 2^k + 1, got 100'

    def test_parser_commands(self):
        """Test that every subcommand accepts the shared flags."""
        parser = build_parser()
        for command in ('simulate', 'analyze', 'verify-semigroup', 'report', 'selftest'):
            args = parser.parse_args([command, '--threads', '2', '--seed', '5'])
            assert args.threads == 2 and args.seed == 5


class TestProvenance:
    """Test the provenance block embedded into artifacts."""

    def test_excludes_out_and_threads(self, config_text):
        """Test that output directory and thread count are not part of provenance."""
        block = provenance(parse_config(config_text))
        assert block['seed'] == 3
        assert 'out' not in block['config']
        assert 'threads' not in block['config']


@pytest.mark.integration
class TestPipeline:
    """Test simulate, analyze and report on a coarse configuration."""

    def test_report_before_simulate(self, tmp_path, config_file, capsys):
        """Test that report without an ensemble exits 2 with missing_ensemble."""
        assert main(['report', '--config', config_file, '--out', str(tmp_path / 'empty')]) == 2
        assert last_error(capsys)['error'] == 'missing_ensemble'

    def test_analyze_before_simulate(self, tmp_path, config_file, capsys):
        """Test that analyze also needs the ensemble."""
        assert main(['analyze', '--config', config_file, '--out', str(tmp_path / 'empty')]) == 2

    def test_unknown_experiment(self, tmp_path, config_file, capsys):
        """Test that unknown extras are usage errors."""
        out = str(tmp_path / 'run')
        assert main(['simulate', '--config', config_file, '--out', out, '--dump', '0']) == 0
        assert main(['analyze', '--config', config_file, '--out', out, '--experiments', 'fourier']) == 1
        assert last_error(capsys)['details']['known'][0] == 'growth'

    def test_simulate_is_reproducible(self, tmp_path, config_file):
        """Test that two runs with the same seed produce identical artifacts."""
        a, b = str(tmp_path / 'a'), str(tmp_path / 'b')
        assert main(['simulate', '--config', config_file, '--out', a]) == 0
        assert main(['simulate', '--config', config_file, '--out', b, '--threads', '3']) == 0
        first = json.loads((tmp_path / 'a' / 'run.json').read_text())
        second = json.loads((tmp_path / 'b' / 'run.json').read_text())
        assert first['digests'] == second['digests']
        assert 'fields/sample_1_T0.bin' in first['digests']
        assert first['commands'] == ['simulate']

    def test_simulate_analyze_report(self, tmp_path, config_file):
        """Test the full pipeline writes reports, tables and a bundle."""
        out = tmp_path / 'run'
        assert main(['simulate', '--config', config_file, '--out', str(out), '--dump', '0']) == 0
        assert main(['analyze', '--config', config_file, '--out', str(out)]) in (0, 4)
        code = main(['report', '--config', config_file, '--out', str(out)])
        bundle = json.loads((out / 'report.json').read_text())
        assert code == (0 if bundle['passed'] else 4)
        assert 'moments' in bundle['reports']
        assert (out / 'tables' / 'moments_vs_T.csv').exists()
        manifest = json.loads((out / 'run.json').read_text())
        assert manifest['commands'] == ['simulate', 'analyze', 'report']

    def test_seed_flag_changes_ensemble(self, tmp_path, config_file):
        """Test that --seed overrides the configured seed."""
        a, b = tmp_path / 'a', tmp_path / 'b'
        main(['simulate', '--config', config_file, '--out', str(a), '--dump', '0'])
        main(['simulate', '--config', config_file, '--out', str(b), '--dump', '0', '--seed', '4'])
        records_a = json.loads((a / 'ensemble' / 'records.json').read_text())
        records_b = json.loads((b / 'ensemble' / 'records.json').read_text())
        assert records_b['provenance']['seed'] == 4
        assert records_a['records'] != records_b['records']


@pytest.mark.slow
class TestSelftestCommand:
    """Test the selftest subcommand."""

    def test_selftest_writes_report(self, tmp_path):
        """Test that selftest runs without a config and stores its report."""
        out = tmp_path / 'selftest'
        code = main(['selftest', '--samples', '200', '--out', str(out)])
        report = json.loads((out / 'reports' / 'selftest.json').read_text())
        assert code == (0 if report['passed'] else 4)
        checks = {c['name']: c for c in report['checks']}
        assert checks['oscillation_bound']['passed']
        assert checks['cross_backend']['passed']


class TestAcceptance:
    """Test that failed asserted checks surface as acceptance errors."""

    @pytest.fixture
    def failing_report(self):
        return ExperimentReport(name='selftest', plan={}, checks=[
            Check('cross_backend', False, 0.2, 0.01),
            Check('covariance', False, 0.5, 0.1, asserted=False),
            Check('oscillation_bound', True, 0.0, 0.0)])

    def test_failed_checks_skip_unasserted(self, failing_report):
        """Test that only asserted failures are named, qualified by report."""
        assert failed_checks([failing_report.to_dict()]) == ['selftest.cross_backend']

    def test_require_acceptance(self):
        """Test that a clean run exits 0 and a failed one raises with exit code 4."""
        assert require_acceptance([]) == 0
        with pytest.raises(AcceptanceError) as exc:
            require_acceptance(['moments.p1_bound'])
        assert exc.value.exit_code == 4
        assert exc.value.details['failed_checks'] == ['moments.p1_bound']

    def test_failing_selftest_exits_4(self, tmp_path, failing_report, mocker, capsys):
        """Test that main reports the acceptance envelope and still stores the report."""
        mocker.patch.object(SelftestService, 'run', return_value=failing_report)
        out = tmp_path / 'selftest'
        assert main(['selftest', '--out', str(out)]) == 4
        error = last_error(capsys)
        assert error['error'] == 'acceptance'
        assert error['details']['failed_checks'] == ['selftest.cross_backend']
        assert not json.loads((out / 'reports' / 'selftest.json').read_text())['passed']

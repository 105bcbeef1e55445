#!/usr/bin/env python3
"""
spde-holder - Hoelder regularity and moment bounds for linear parabolic SPDEs
Command-line entry point: simulate, analyze, verify-semigroup, report, selftest
"""

import argparse
import json
import sys
from typing import Dict, Iterable, List, Optional, Sequence

from dotenv import load_dotenv

from run_store import RunStore
from services.config_service import RunConfig, load_config, resolve_config
from services.experiment_service import ExperimentReport, ExperimentService
from services.selftest_service import SelftestService
from services.noise_service import sample_path
from utils.console import log, log_error
from utils.errors import EXIT_OK, AcceptanceError, SpdeHolderError, UsageError

load_dotenv()

COMMANDS = ('simulate', 'analyze', 'verify-semigroup', 'report', 'selftest')
EXTRA_EXPERIMENTS = ('growth', 'threshold', 'tail', 'increments', 'divergence')
EXIT_INTERRUPTED = 130


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors raised instead of exiting with status 2"""

    def error(self, message):
        raise UsageError(message, {'usage': self.format_usage().strip()})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='spde-holder',
                     description='Monte Carlo reproduction of moment and Hoelder bounds for linear SPDEs')
    sub = parser.add_subparsers(dest='command', metavar='{' + ','.join(COMMANDS) + '}', parser_class=_Parser)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument('--config', help='JSON run configuration')
        cmd.add_argument('--out', help='Run directory (overrides SPDE_HOLDER_OUT and the config)')
        cmd.add_argument('--threads', type=int, help='Worker pool size')
        cmd.add_argument('--seed', type=int, help='Master seed')
        if name == 'simulate':
            cmd.add_argument('--dump', type=int, default=2, help='Raw fields written for the first N samples')
        if name == 'analyze':
            cmd.add_argument('--experiments', default='',
                             help=f"Comma-separated extras: {','.join(EXTRA_EXPERIMENTS)}")
        if name == 'selftest':
            cmd.add_argument('--samples', type=int, default=2000, help='Covariance oracle sample count')
    return parser


def provenance(config: RunConfig) -> Dict:
    """Resolved config and seed; output directory and thread count are left out so artifacts stay comparable"""
    document = config.to_dict()
    document.pop('out', None)
    document.pop('threads', None)
    return {'tool': 'spde-holder', 'config': document, 'seed': config.seed}


# ============================================================================
# PLOT DATA
# ============================================================================

def moments_rows(report: Dict) -> List[List]:
    return [[e['T'], e['k'], e['quantity'], '' if e['theta'] is None else e['theta'],
             e['estimate'], e['ci_low'], e['ci_high'], e['samples']] for e in report.get('estimates', [])]


def threshold_rows(report: Dict) -> List[List]:
    data = report['data']
    rows = []
    for theta, values in sorted(data['holder_moments'].items()):
        rows.extend(['holder', float(theta), eps, value] for eps, value in zip(data['eps'], values))
    rows.extend(['sup', '', eps, value] for eps, value in zip(data['eps'], data['sup_moments']))
    return rows


def tail_rows(report: Dict) -> List[List]:
    data = report['data']
    return [[K, s] for K, s in zip(data['K'], data['survival'])]


def increment_rows(report: Dict) -> List[List]:
    fit = report['data']['fit']
    return [[delta, moment, kurt, fit['exponent'], fit['ci_low'], fit['ci_high']]
            for delta, moment, kurt in zip(fit['delta'], fit['moment'], fit['kurtosis'])]


def semigroup_rows(report: Dict) -> List[List]:
    return [[r['backend'], r['kind'], r['t'], r['norm'], r['fitted_slope']] for r in report['data']['rows']]


TABLES = {
    'moments': ('moments_vs_T', ['T', 'k', 'quantity', 'theta', 'estimate', 'ci_low', 'ci_high', 'samples'],
                moments_rows),
    'divergence': ('divergence_moments_vs_T', ['T', 'k', 'quantity', 'theta', 'estimate', 'ci_low', 'ci_high',
                                               'samples'], moments_rows),
    'threshold': ('moments_vs_eps', ['quantity', 'theta', 'eps', 'second_moment'], threshold_rows),
    'tail': ('tail_survival', ['K', 'survival'], tail_rows),
    'increments': ('increment_fit', ['delta', 'moment', 'kurtosis', 'exponent', 'ci_low', 'ci_high'],
                   increment_rows),
    'semigroup': ('kernel_decay', ['backend', 'kind', 't', 'norm', 'fitted_slope'], semigroup_rows),
}


def write_table(store: RunStore, name: str, report: Dict) -> None:
    if name in TABLES:
        table, header, rows = TABLES[name]
        store.write_csv(table, header, rows(report))


def save_report(store: RunStore, name: str, report: ExperimentReport) -> Dict:
    document = report.to_dict()
    store.write_report(name, document)
    write_table(store, name, document)
    status = 'OK' if report.passed else 'ERROR'
    log(f"[{status}] {name}: {len(report.checks) - len(report.failed_checks())}/{len(report.checks)} checks passed")
    return document


# ============================================================================
# COMMANDS
# ============================================================================

def failed_checks(documents: Iterable[Dict]) -> List[str]:
    return sorted(f"{document['name']}.{c['name']}" for document in documents
                  for c in document.get('checks', []) if c['asserted'] and not c['passed'])


def require_acceptance(failed: List[str]) -> int:
    """
    Turn failed asserted checks into an acceptance error

    Args:
        failed: Qualified names of failed checks, report.check

    Returns:
        EXIT_OK when nothing failed
    """
    if failed:
        raise AcceptanceError(f"{len(failed)} asserted check(s) failed: {', '.join(failed)}",
                              {'failed_checks': failed})
    return EXIT_OK


def cmd_simulate(config: RunConfig, store: RunStore, args) -> int:
    service = ExperimentService(config.plan, store)
    records = service.collect_moment_records()
    store.write_ensemble(records)

    dump = max(0, min(int(args.dump or 0), config.plan.samples))
    if dump:
        T = min(int(t) for t in config.plan.windows)
        solver = service.solver()
        paths = [sample_path(config.seed, i, config.plan.j_count, service.grid.dt, T + 1.0) for i in range(dump)]
        fields = solver.solve_windows(paths, [T])[T]
        for i in range(dump):
            store.write_raw(f"sample_{i}_T{T}", fields[i],
                            {'sample_index': i, 'window': [T, T + 1], 'grid': service.grid.window(T).describe()})
    store.write_manifest(['simulate'])
    log(f"[OK] simulate: {len(records)} samples written to {store.root}")
    return EXIT_OK


def cmd_analyze(config: RunConfig, store: RunStore, args) -> int:
    extras = [name.strip() for name in (args.experiments or '').split(',') if name.strip()]
    unknown = [name for name in extras if name not in EXTRA_EXPERIMENTS]
    if unknown:
        raise UsageError(f"Unknown experiment '{unknown[0]}'", {'known': list(EXTRA_EXPERIMENTS)})
    service = ExperimentService(config.plan, store)
    reports = [save_report(store, 'moments', service.aggregate_moments(store.read_ensemble()))]
    runners = {'growth': service.run_growth, 'threshold': service.run_threshold_scan, 'tail': service.run_tail,
               'increments': service.run_increments, 'divergence': service.run_divergence}
    for name in extras:
        reports.append(save_report(store, name, runners[name]()))
    store.write_manifest(['analyze'])
    return require_acceptance(failed_checks(reports))


def cmd_verify_semigroup(config: RunConfig, store: RunStore, args) -> int:
    report = save_report(store, 'semigroup', ExperimentService(config.plan, store).run_semigroup())
    store.write_manifest(['verify-semigroup'])
    return require_acceptance(failed_checks([report]))


def cmd_report(config: RunConfig, store: RunStore, args) -> int:
    records = store.read_ensemble()
    if 'moments' not in store.list_reports():
        save_report(store, 'moments', ExperimentService(config.plan, store).aggregate_moments(records))
    bundle = {name: store.read_report(name) for name in store.list_reports()}
    for name, document in bundle.items():
        document.pop('provenance', None)
        write_table(store, name, document)
    failed = failed_checks({**document, 'name': name} for name, document in bundle.items())
    passed = not failed
    store.write_json('report.json', {'passed': passed, 'failed_checks': failed, 'reports': bundle})
    store.write_manifest(['report'])
    log(f"[{'OK' if passed else 'ERROR'}] report: {len(bundle)} reports bundled, {len(failed)} failed checks")
    return require_acceptance(failed)


def cmd_selftest(config: Optional[RunConfig], store: Optional[RunStore], args) -> int:
    seed = args.seed if args.seed is not None else (config.seed if config else 0)
    report = SelftestService(seed=seed, covariance_samples=args.samples).run()
    if store is not None:
        store.write_report('selftest', report.to_dict())
        store.write_manifest(['selftest'])
    return require_acceptance(failed_checks([report.to_dict()]))


HANDLERS = {
    'simulate': cmd_simulate,
    'analyze': cmd_analyze,
    'verify-semigroup': cmd_verify_semigroup,
    'report': cmd_report,
    'selftest': cmd_selftest,
}


def dispatch(command: str, config: Optional[RunConfig], args) -> int:
    """
    Run one subcommand

    Args:
        command: One of COMMANDS
        config: Resolved configuration (optional for selftest only)
        args: Parsed arguments

    Returns:
        Process exit status
    """
    if command not in HANDLERS:
        raise UsageError(f"Unknown command '{command}'", {'commands': list(COMMANDS)})
    if config is None and command != 'selftest':
        raise UsageError(f"{command} needs --config", {'command': command})
    store = RunStore(config.out, provenance(config)) if config is not None else None
    if command == 'selftest' and config is None and args.out:
        store = RunStore(args.out, {'tool': 'spde-holder', 'seed': args.seed or 0})
    return HANDLERS[command](config, store, args)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("A command is required", {'commands': list(COMMANDS)})
        config = None
        if args.config:
            config = resolve_config(load_config(args.config), out=args.out, threads=args.threads, seed=args.seed)
        log("=" * 60)
        log(f"spde-holder {args.command}")
        log("=" * 60)
        return dispatch(args.command, config, args)
    except SpdeHolderError as e:
        log_error(json.dumps(e.to_dict(), sort_keys=True, default=str))
        return e.exit_code
    except KeyboardInterrupt:
        log_error(json.dumps({'success': False, 'error': 'interrupted', 'message': 'Interrupted', 'details': {}}))
        return EXIT_INTERRUPTED


if __name__ == '__main__':
    sys.exit(main())

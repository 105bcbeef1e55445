"""
Results Routes Blueprint
Read-only JSON/CSV access to finished runs under the results directory.
"""

import os

from flask import Blueprint, Response, current_app, jsonify

from run_store import MANIFEST, RunStore, list_runs
from utils.validators import validate_identifier

results_bp = Blueprint('results', __name__)


def _results_root() -> str:
    return current_app.config['RESULTS_DIR']


def _error(message: str, status: int):
    return jsonify({'success': False, 'message': message}), status


def _open_run(run_id: str):
    """RunStore for a run id, or an error response"""
    is_valid, error = validate_identifier(run_id, "Run id")
    if not is_valid:
        return None, _error(error, 400)
    store = RunStore(os.path.join(_results_root(), run_id))
    if not store.exists(MANIFEST):
        return None, _error('Run not found', 404)
    return store, None


# ============================================================================
# ENDPOINTS
# ============================================================================

@results_bp.route('/api/health')
def health():
    return jsonify({'success': True, 'status': 'ok'})


@results_bp.route('/api/runs')
def runs():
    """All finished runs with the commands completed in each"""
    root = _results_root()
    items = []
    for run_id in list_runs(root):
        manifest = RunStore(os.path.join(root, run_id)).manifest()
        items.append({'id': run_id, 'commands': manifest.get('commands', []),
                      'seed': manifest.get('provenance', {}).get('seed')})
    return jsonify({'success': True, 'runs': items})


@results_bp.route('/api/runs/<run_id>')
def run_detail(run_id):
    store, error = _open_run(run_id)
    if error:
        return error
    manifest = store.manifest()
    return jsonify({
        'success': True,
        'id': run_id,
        'commands': manifest.get('commands', []),
        'provenance': manifest.get('provenance', {}),
        'digests': manifest.get('digests', {}),
        'reports': store.list_reports(),
        'tables': store.list_tables()
    })


@results_bp.route('/api/runs/<run_id>/reports/<name>')
def run_report(run_id, name):
    store, error = _open_run(run_id)
    if error:
        return error
    is_valid, message = validate_identifier(name, "Report name")
    if not is_valid:
        return _error(message, 400)
    if name not in store.list_reports():
        return _error('Report not found', 404)
    return jsonify({'success': True, 'report': store.read_report(name)})


@results_bp.route('/api/runs/<run_id>/tables/<name>')
def run_table(run_id, name):
    """Plot-ready CSV table"""
    store, error = _open_run(run_id)
    if error:
        return error
    is_valid, message = validate_identifier(name, "Table name")
    if not is_valid:
        return _error(message, 400)
    if name not in store.list_tables():
        return _error('Table not found', 404)
    return Response(store.read_csv(name), mimetype='text/csv',
                    headers={'Content-Disposition': f'attachment; filename={run_id}-{name}.csv'})

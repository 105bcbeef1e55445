"""
Results browser tests for spde-holder.
Tests the read-only JSON/CSV endpoints and the response headers.
"""

import json

import pytest

from run_store import RunStore


@pytest.fixture
def finished_run(results_dir):
    """A run directory with one report, one table and a manifest."""
    store = RunStore(str(results_dir / 'run-01'), {'tool': 'spde-holder', 'seed': 3})
    store.write_report('moments', {'name': 'moments', 'passed': True})
    store.write_csv('moments_vs_T', ['T', 'estimate'], [[0, 0.5]])
    store.write_manifest(['simulate', 'analyze'])
    return store


class TestHealth:
    """Test the health endpoint."""

    def test_health(self, client):
        """Test that the browser reports ok."""
        response = client.get('/api/health')
        assert response.status_code == 200
        assert response.json == {'success': True, 'status': 'ok'}

    def test_security_headers(self, client):
        """Test headers on every response."""
        response = client.get('/api/health')
        assert response.headers['X-Frame-Options'] == 'DENY'
        assert response.headers['X-Content-Type-Options'] == 'nosniff'
        assert "default-src 'none'" in response.headers['Content-Security-Policy']
        assert response.headers['Cache-Control'] == 'no-store'


@pytest.mark.integration
class TestRuns:
    """Test run listing and detail."""

    def test_empty_results(self, client):
        """Test that an empty results root lists no runs."""
        response = client.get('/api/runs')
        assert response.status_code == 200
        assert response.json['runs'] == []

    def test_list_runs(self, client, finished_run):
        """Test that finished runs are listed with their commands."""
        runs = client.get('/api/runs').json['runs']
        assert runs == [{'id': 'run-01', 'commands': ['simulate', 'analyze'], 'seed': 3}]

    def test_run_detail(self, client, finished_run):
        """Test that the detail lists reports, tables and digests."""
        data = client.get('/api/runs/run-01').json
        assert data['success'] is True
        assert data['reports'] == ['moments']
        assert data['tables'] == ['moments_vs_T']
        assert set(data['digests']) == {'reports/moments.json', 'tables/moments_vs_T.csv'}

    def test_unknown_run(self, client):
        """Test that a missing run is a 404."""
        response = client.get('/api/runs/run-99')
        assert response.status_code == 404
        assert response.json['success'] is False

    def test_invalid_run_id(self, client):
        """Test that hidden or dotted names are rejected."""
        response = client.get('/api/runs/.hidden')
        assert response.status_code == 400


class TestArtifacts:
    """Test report and table downloads."""

    def test_report(self, client, finished_run):
        """Test that a report is returned with its provenance."""
        data = client.get('/api/runs/run-01/reports/moments').json
        assert data['report']['passed'] is True
        assert data['report']['provenance']['seed'] == 3

    def test_missing_report(self, client, finished_run):
        """Test that unknown reports are a 404."""
        assert client.get('/api/runs/run-01/reports/tail').status_code == 404

    def test_table_is_csv(self, client, finished_run):
        """Test that tables are served as CSV attachments."""
        response = client.get('/api/runs/run-01/tables/moments_vs_T')
        assert response.status_code == 200
        assert response.mimetype == 'text/csv'
        assert 'run-01-moments_vs_T.csv' in response.headers['Content-Disposition']
        assert response.get_data(as_text=True).splitlines()[1] == 'T,estimate'

    def test_missing_table(self, client, finished_run):
        """Test that unknown tables are a 404."""
        assert client.get('/api/runs/run-01/tables/tail_survival').status_code == 404


class TestErrors:
    """Test JSON error envelopes."""

    def test_error_keys_sorted(self, client):
        """Test that JSON bodies are written with sorted keys."""
        response = client.get('/api/nowhere')
        pairs = json.loads(response.get_data(as_text=True), object_pairs_hook=list)
        assert [key for key, _ in pairs] == ['message', 'success']

    def test_unknown_route(self, client):
        """Test the JSON 404 handler."""
        response = client.get('/api/nothing')
        assert response.status_code == 404
        assert response.json['success'] is False

    def test_read_only(self, client, finished_run):
        """Test that writes are refused with a JSON 405."""
        response = client.post('/api/runs/run-01')
        assert response.status_code == 405
        assert 'read-only' in response.json['message']

    def test_delete_refused(self, client, finished_run):
        """Test that runs cannot be deleted through the browser."""
        assert client.delete('/api/runs/run-01').status_code == 405
        assert client.get('/api/runs/run-01').status_code == 200

"""
spde-holder results browser
Read-only Flask application serving finished runs as JSON and CSV
"""

import os

from dotenv import load_dotenv
from flask import Flask, jsonify, request

from routes import results_bp
from utils.errors import SpdeHolderError

load_dotenv()

# ============================================================================
# APPLICATION INITIALIZATION
# ============================================================================

app = Flask(__name__)
app.config['RESULTS_DIR'] = os.path.abspath(os.getenv('SPDE_HOLDER_RESULTS_DIR', 'runs'))
app.json.sort_keys = True

app.register_blueprint(results_bp)       # Runs, reports, tables


@app.after_request
def add_security_headers(response):
    """Headers for a JSON/CSV-only API"""
    response.headers['Content-Security-Policy'] = "default-src 'none'; frame-ancestors 'none'"
    response.headers['X-Frame-Options'] = 'DENY'
    response.headers['X-Content-Type-Options'] = 'nosniff'
    response.headers['Referrer-Policy'] = 'no-referrer'
    response.headers['Cache-Control'] = 'no-store'
    return response


# ============================================================================
# ERROR HANDLERS
# ============================================================================

@app.errorhandler(SpdeHolderError)
def tool_error(error):
    """Domain errors raised while reading a run"""
    return jsonify(error.to_dict()), 400


@app.errorhandler(404)
def not_found(error):
    return jsonify({'success': False, 'message': 'Resource not found'}), 404


@app.errorhandler(405)
def method_not_allowed(error):
    return jsonify({'success': False, 'message': 'Method not allowed; the results browser is read-only'}), 405


@app.errorhandler(500)
def internal_error(error):
    """Handle 500 Internal Server errors - Don't leak paths or tracebacks"""
    print(f"[ERROR 500] Internal server error on {request.path}: {error}")
    return jsonify({'success': False, 'message': 'An unexpected error occurred.'}), 500


# ============================================================================
# APPLICATION ENTRY POINT
# ============================================================================

if __name__ == '__main__':
    port = int(os.getenv('PORT', 5000))
    debug = os.getenv('FLASK_ENV') == 'development'

    print("=" * 60)
    print("  spde-holder results browser")
    print("=" * 60)
    print(f"  Results: {app.config['RESULTS_DIR']}")
    print(f"  Port: {port}")
    print(f"  Debug: {debug}")
    print("=" * 60)

    app.run(host='127.0.0.1', port=port, debug=debug, use_reloader=debug)

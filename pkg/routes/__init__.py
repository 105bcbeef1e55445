# Routes Package
# Flask Blueprint routes for the spde-holder results browser

from .results_routes import results_bp

__all__ = ['results_bp']

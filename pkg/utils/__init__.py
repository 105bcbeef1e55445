# Utils Package
# Shared helpers for the spde-holder tool

from .console import log, log_error
from .errors import SpdeHolderError
from .validators import ConfigValidator, sanitize_run_config

__all__ = [
    'log',
    'log_error',
    'SpdeHolderError',
    'ConfigValidator',
    'sanitize_run_config'
]

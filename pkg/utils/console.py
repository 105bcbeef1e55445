"""
Console Output Utilities
Tagged progress lines on stdout, switchable with SPDE_HOLDER_VERBOSE.
"""

import os
import sys

_FALSE_VALUES = ('0', 'false', 'no', 'off')


def verbose_enabled() -> bool:
    return os.getenv('SPDE_HOLDER_VERBOSE', '1').strip().lower() not in _FALSE_VALUES


def log(message: str) -> None:
    """Print a progress line such as "[OK] 500 samples simulated" unless output is silenced"""
    if verbose_enabled():
        print(message)


def log_error(message: str) -> None:
    """Errors always go to stderr"""
    print(message, file=sys.stderr)

"""
Error Types Module
Exception hierarchy shared by the solver, the analyzers, the CLI and the results browser.
"""

from typing import Any, Dict, Optional


# Exit codes of the command-line surface
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_ACCEPTANCE = 4


class SpdeHolderError(Exception):
    """Base error; carries an exit code and a machine-readable payload"""

    exit_code = EXIT_VALIDATION
    code = 'error'

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """
        Build the JSON error envelope

        Returns:
            Dictionary with success flag, error code, message and details
        """
        return {
            'success': False,
            'error': self.code,
            'message': self.message,
            'details': self.details
        }


# ============================================================================
# USAGE (exit 1)
# ============================================================================

class UsageError(SpdeHolderError):
    exit_code = EXIT_USAGE
    code = 'usage'


# ============================================================================
# VALIDATION (exit 2)
# ============================================================================

class ValidationError(SpdeHolderError):
    code = 'validation'


class ConfigParseError(ValidationError):
    code = 'config_parse'


class ConfigValidationError(ValidationError):
    code = 'config_validation'


class LevelTooFineError(ValidationError):
    code = 'level_too_fine'


class OutOfRangeLevelError(ValidationError):
    code = 'out_of_range_level'


class EllipticityError(ValidationError):
    code = 'ellipticity_violation'


class AsymmetryError(ValidationError):
    code = 'asymmetry'


class InsufficientShiftError(ValidationError):
    code = 'insufficient_shift'


class BackendMismatchError(ValidationError):
    code = 'backend_mismatch'


class NegativeTimeError(ValidationError):
    code = 'negative_time'


class BoundarySourceError(ValidationError):
    code = 'boundary_source'


class InsufficientPointsError(ValidationError):
    code = 'insufficient_points'


class NormalizationError(ValidationError):
    code = 'normalization_violation'


class ConditionViolationError(ValidationError):
    code = 'condition_violation'


class GrowthNotEnabledError(ValidationError):
    code = 'growth_not_enabled'


class ShapeMismatchError(ValidationError):
    code = 'shape_mismatch'


class WindowMismatchError(ValidationError):
    code = 'window_mismatch'


class InsufficientSamplesError(ValidationError):
    code = 'insufficient_samples'


class MissingEnsembleError(ValidationError):
    code = 'missing_ensemble'


# ============================================================================
# NUMERICAL (exit 3)
# ============================================================================

class NumericalError(SpdeHolderError):
    exit_code = EXIT_NUMERICAL
    code = 'numerical'


class InstabilityError(NumericalError):
    code = 'instability'


# ============================================================================
# ACCEPTANCE (exit 4)
# ============================================================================

class AcceptanceError(SpdeHolderError):
    exit_code = EXIT_ACCEPTANCE
    code = 'acceptance'

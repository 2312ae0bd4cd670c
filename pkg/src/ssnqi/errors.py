"""Exception hierarchy shared by the simulator and the analysis pipeline."""


class SsnqiError(Exception):
    """Base class for all package errors."""


class ConfigError(SsnqiError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class GeometryError(SsnqiError):
    """Region / frame / map geometry mismatch (CLI exit code 3)."""


class BundleError(SsnqiError):
    """Frame-bundle storage failure or malformed bundle (CLI exit code 3)."""


class InvalidRegimeError(SsnqiError):
    """Data outside the estimator's validity domain, e.g. background
    exceeding the signal in the corrected-NRF denominator (CLI exit code 4)."""


class NoCorrelationError(SsnqiError):
    """Center-of-symmetry scan found no dip in the sigma surface (CLI exit code 4)."""

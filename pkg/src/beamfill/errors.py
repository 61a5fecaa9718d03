"""Exception types shared across the package."""


class BeamfillError(Exception):
    """Base class for package-specific failures."""


class ConfigurationError(BeamfillError, ValueError):
    """A configuration object or file is invalid."""


class StateError(BeamfillError, RuntimeError):
    """An operation was attempted before its prerequisites exist."""


class ReportError(BeamfillError, RuntimeError):
    """Evaluation report assembly failed."""

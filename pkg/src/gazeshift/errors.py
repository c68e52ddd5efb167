"""Failure classes shared across the toolkit.

The CLI maps each class to a distinct exit code, so library code should
raise the most specific one that applies.
"""


class GazeshiftError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(GazeshiftError):
    """Invalid or inconsistent configuration input."""


class DataError(GazeshiftError):
    """Malformed dataset or scenario content, or generation failure."""


class TrainingError(GazeshiftError):
    """Training aborted: non-finite loss or gradient, bad checkpoint, etc."""


class BackendError(GazeshiftError):
    """Reasoning backend failed: transport error, deadline, bad payload."""

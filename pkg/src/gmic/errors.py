"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration value or file."""


class ShapeError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class MetricError(ValueError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""


class NumericError(RuntimeError):
    """Non-finite values encountered where finite values are required."""

"""Exception types shared across the package."""


class CamSepError(Exception):
    """Base class for all package errors."""


class ConfigError(CamSepError, ValueError):
    """Invalid or inconsistent configuration value."""


class ShapeError(CamSepError, ValueError):
    """Array shapes do not agree."""


class ValidationError(CamSepError, ValueError):
    """Input data violates a documented invariant."""


class DatasetFormatError(CamSepError, ValueError):
    """A dataset or checkpoint file could not be parsed."""


class DegenerateCenterError(CamSepError, ArithmeticError):
    """A camera center averaged to (near) zero length."""


class TrainingAbort(CamSepError, RuntimeError):
    """Training cannot continue (no clusters, NaN gradient, ...)."""

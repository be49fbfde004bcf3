"""Exception types shared across the package."""


class LayoutGenError(Exception):
    """Base class for all package errors."""


class DimensionError(LayoutGenError):
    """Image or box dimensions are non-positive or otherwise unusable."""


class ShapeError(LayoutGenError):
    """Paired inputs disagree in length or tensor shape."""


class ValidationError(LayoutGenError):
    """A value violates a domain invariant (class names, ranges, ids)."""


class ConfigurationError(LayoutGenError):
    """A config object or run setup is inconsistent or incomplete."""


class NumericError(LayoutGenError):
    """A computation produced or received non-finite values."""


class RenderOverflowError(LayoutGenError):
    """Text cannot fit its box even at the minimum font size."""

    def __init__(self, message: str, element_ids=None):
        super().__init__(message)
        self.element_ids = list(element_ids) if element_ids else []

"""Exception classes raised across the package."""


class SpatMCAError(Exception):
    """Base class for all package errors."""


class UnsupportedDimensionError(SpatMCAError, ValueError):
    pass


class SingularGeometryError(SpatMCAError, ValueError):
    """Sites make the bordered spline system singular or ill-conditioned."""


class InsufficientDataError(SpatMCAError, ValueError):
    pass


class DimensionMismatchError(SpatMCAError, ValueError):
    pass


class ZetaTooSmallError(SpatMCAError, ArithmeticError):
    """``zeta * I - Theta`` is not positive definite; raise ``zeta``."""


class InvalidFoldError(SpatMCAError, ValueError):
    pass


class InvalidConfigError(SpatMCAError, ValueError):
    pass


class ParseError(SpatMCAError, ValueError):
    """Malformed CSV input. Carries 1-based row/column coordinates."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class MissingArtifactError(SpatMCAError, FileNotFoundError):
    pass

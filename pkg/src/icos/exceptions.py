"""Exception types raised by the solvers and I/O helpers."""


class IcosError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateConfiguration(IcosError, ValueError):
    """Input geometry is rank deficient (parallel vectors, collinear points)."""


class EmptyInput(IcosError, ValueError):
    pass


class InvalidParameter(IcosError, ValueError):
    pass


class DivisionByZero(IcosError, ZeroDivisionError):
    pass


class UnsupportedFormat(IcosError, ValueError):
    """File content is readable but uses a layout we do not handle."""

"""Exception hierarchy shared by every nmrlearn module.

Input problems derive from :class:`InputError` (also a ``ValueError``) and map
to CLI exit code 2; numerical failures derive from :class:`NumericalError`
and map to exit code 1.
"""


class NMRLearnError(Exception):
    """Base class for all library errors."""


class InputError(NMRLearnError, ValueError):
    """Caller supplied something malformed."""


class InvalidSpecError(InputError):
    """Malformed operator / experiment descriptor (e.g. duplicate site)."""


class CapacityError(InputError):
    """Spin count exceeds the dense-simulation cap."""


class DimensionMismatchError(InputError):
    """Operands have incompatible Hilbert-space dimensions."""


class InvalidInputError(InputError):
    """Input violates a mathematical precondition (non-Hermitian, broken symmetry, ...)."""


class DomainError(InputError):
    """Argument outside the valid domain, e.g. ``s > t`` for an integrand."""


class DataError(InputError):
    """Signal data is unusable (NaN, wrong length)."""


class DegenerateInputError(InputError):
    """Problem too small to produce a meaningful statistic."""


class SingularityError(InputError):
    """Coincident spin positions."""


class ConfigError(InputError):
    """Configuration file failed validation."""


class NumericalError(NMRLearnError, ArithmeticError):
    """A computation produced non-finite or inconsistent numbers."""


class NearSingularWarning(UserWarning):
    """Hessian too ill-conditioned to invert exactly; pseudo-inverse used."""

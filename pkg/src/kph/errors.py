"""Exception hierarchy shared by all kph modules."""


class KphError(Exception):
    """Base class for every error raised by the package."""


class NumericalError(KphError, ArithmeticError):
    """Non-finite value or divergence encountered during evaluation."""


class StructureError(KphError, ValueError):
    """A structure matrix violates skew-symmetry or positive semidefiniteness."""


class ConfigError(KphError, ValueError):
    """Invalid parameters or configuration."""


class DimensionError(KphError, ValueError):
    """Array shapes are incompatible."""


class SingularGramError(KphError, ArithmeticError):
    """Gram (mass) matrix is too ill-conditioned to whiten."""


class NotDissipativeError(KphError, ValueError):
    """A matrix cannot be written as skew minus positive semidefinite."""


class EigenvalueFailure(KphError, ArithmeticError):
    """The dense eigensolver did not converge."""


class NotHurwitzError(KphError, ValueError):
    pass


class NotSchurError(KphError, ValueError):
    pass


class SolveError(KphError, ArithmeticError):
    pass


class CertificateError(KphError, RuntimeError):
    """A closed-loop certificate (e.g. cost monotonicity) failed."""

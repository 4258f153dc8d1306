"""Exception hierarchy shared across the package."""


class MolchanError(Exception):
    """Base class for domain errors raised by molchan."""


class DomainError(MolchanError, ValueError):
    """An input lies outside the domain where a quantity is defined."""


class ConfigurationError(MolchanError, ValueError):
    pass


class SingularDesignError(MolchanError, ArithmeticError):
    """A design or Fisher matrix is (numerically) rank deficient."""


class NoConvergenceError(MolchanError, ArithmeticError):
    """The stationary-point solver did not reach its tolerance."""


class EstimationFailure(MolchanError, RuntimeError):
    """No admissible candidate survived the active-set enumeration."""


class InsufficientDataError(MolchanError, ValueError):
    pass


class SearchFailure(MolchanError, RuntimeError):
    pass

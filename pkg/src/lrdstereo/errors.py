"""Exception hierarchy shared by every module."""


class LRDError(Exception):
    """Base class for all errors raised by lrdstereo."""


class InvalidInputError(LRDError, ValueError):
    pass


class DegenerateInputError(LRDError, ValueError):
    """Input is well-formed but leaves nothing to compute on (e.g. an empty mask)."""


class ConfigurationError(LRDError, ValueError):
    pass


class FormatError(LRDError, ValueError):
    """A file on disk does not follow the expected byte layout."""


class NumericalError(LRDError, ArithmeticError):
    pass


class ContractViolation(LRDError, AssertionError):
    """A model or run broke an invariant it promised to keep."""


class BudgetViolation(ContractViolation):
    pass


class TrainingError(NumericalError):
    pass

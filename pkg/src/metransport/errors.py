"""Exception hierarchy.

Everything raised on purpose derives from :class:`TransportError` so callers
(the CLI in particular) can map validation problems and numerical failures to
distinct exit codes.
"""


class TransportError(Exception):
    pass


class ValidationError(TransportError, ValueError):
    """Invalid input: bad parameters, malformed configuration, mismatched grids."""


class ParameterDomainError(ValidationError):
    pass


class ConstructionError(ValidationError):
    pass


class ResolutionError(ValidationError):
    pass


class GridMismatchError(ValidationError):
    pass


class ConfigError(ValidationError):
    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class NumericalError(TransportError, ArithmeticError):
    """A computation could not produce a trustworthy number."""


class DegenerateKernelError(NumericalError):
    pass


class StabilityError(NumericalError):
    pass


class UndefinedRatioError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class FitRejectedError(NumericalError):
    pass

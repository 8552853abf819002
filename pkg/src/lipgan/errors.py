"""Exception types shared across the package."""


class LipganError(Exception):
    pass


class ConfigurationError(LipganError, ValueError):
    """Shapes or settings that cannot work together."""


class UsageError(LipganError, ValueError):
    """A call that violates an operation's preconditions."""


class DomainError(LipganError, ValueError):
    """An input outside the mathematical domain of an op (e.g. log of 0)."""


class FormatError(LipganError, ValueError):
    """A malformed input file."""


class NonFiniteError(LipganError, FloatingPointError):
    """A NaN/Inf showed up where training cannot continue."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration

"""Exception hierarchy shared by every module."""


class DeepSqueezeError(Exception):
    pass


class ParameterError(DeepSqueezeError, ValueError):
    pass


class InvalidTopologyError(DeepSqueezeError, ValueError):
    """Raised when a mixing matrix breaks one or more invariants.

    ``violations`` holds one short name per failed check, drawn from
    ``asymmetric``, ``row-sum``, ``negative-entry``, ``disconnected`` and
    ``shape``.
    """

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class NumericError(DeepSqueezeError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    """A run left the finite region. Carries the iteration and partial trace."""

    def __init__(self, iteration, message="", trace=None):
        super().__init__(message or f"diverged at iteration {iteration}")
        self.iteration = iteration
        self.trace = trace


class InfeasibleError(DeepSqueezeError, ValueError):
    pass


class ParseError(DeepSqueezeError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ConfigError(DeepSqueezeError, ValueError):
    pass

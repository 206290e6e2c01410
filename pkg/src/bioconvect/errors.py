"""Exception types raised by the solvers."""


class BioconvectError(Exception):
    """Base class of every error raised by the package."""


class DomainError(BioconvectError, ValueError):
    """An argument lies outside the domain of a function."""


class ConvergenceError(BioconvectError, RuntimeError):
    """An iterative solver failed to converge.

    ``residual`` holds the last residual measure when one is available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularSystemError(BioconvectError, RuntimeError):
    """A discretised linear system could not be factorised."""


class ConfigError(BioconvectError, ValueError):
    """A run configuration is malformed or violates a parameter constraint."""


class OutputError(BioconvectError, OSError):
    """Result file could not be written."""

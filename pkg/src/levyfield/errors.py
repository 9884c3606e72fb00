"""Exception hierarchy shared by all levyfield modules."""


class LevyFieldError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LevyFieldError, ValueError):
    """A parameter or input violates a documented precondition."""


class DivergenceError(LevyFieldError):
    """An integral or moment requested from a Levy measure is infinite."""


class QuadratureError(LevyFieldError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ShellError(LevyFieldError):
    """Jump-size shell decomposition could not meet the drift tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class GridMismatchError(LevyFieldError, ValueError):
    """Arrays or nodes are not compatible with the grid they are used on."""


class AliasingError(LevyFieldError):
    """A spectral evaluation disagrees with the closed form beyond tolerance."""


class PaddingError(LevyFieldError):
    """The noise cut-off box is too small for the requested smoothing."""


class EllipticityError(LevyFieldError, ValueError):
    """The diffusion coefficient is not strictly positive."""


class SolverError(LevyFieldError):
    """A linear or eigen solver failed or returned an inaccurate result."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonSummableError(LevyFieldError):
    """A moment series does not converge for the given configuration."""


class StudyError(LevyFieldError):
    """A Monte Carlo study aborted (too many failed samples, bad sweep)."""


class ConfigError(LevyFieldError):
    """The run configuration is malformed or out of range."""

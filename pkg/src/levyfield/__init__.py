"""Smoothed Levy random fields, their Mercer approximations and elliptic PDEs
with the transformed field as diffusion coefficient."""

__version__ = "0.1.0"

from .errors import (AliasingError, ConfigError, DivergenceError, EllipticityError,  # noqa: E402
                     GridMismatchError, LevyFieldError, NonSummableError, PaddingError,
                     QuadratureError, ShellError, SolverError, StudyError, ValidationError)
from .measure import JumpMeasure, LevyTriplet, levy_characteristic, shell_partition  # noqa: E402
from .noise import Box, CellGrid, NoiseRealization, sample_noise  # noqa: E402
from .matern import MaternKernel  # noqa: E402
from .field import FieldRealization, TransformSpec, smooth_realization  # noqa: E402
from .mercer import MercerBasis, nystrom_eig  # noqa: E402
from .experiments import StudyConfig  # noqa: E402

__all__ = [
    "AliasingError", "Box", "CellGrid", "ConfigError", "DivergenceError", "EllipticityError",
    "FieldRealization", "GridMismatchError", "JumpMeasure", "LevyFieldError", "LevyTriplet",
    "MaternKernel", "MercerBasis", "NoiseRealization", "NonSummableError", "PaddingError",
    "QuadratureError", "ShellError", "SolverError", "StudyConfig", "StudyError",
    "TransformSpec", "ValidationError", "levy_characteristic", "nystrom_eig", "sample_noise",
    "shell_partition", "smooth_realization",
]

"""
Error Types
Every failure the tool reports maps to one exception class, and every class
carries the exit code the CLI returns for it.

Exit codes:
    0  success
    1  generic failure (IO, failed gradient check)
    2  configuration error, architecture or vocabulary mismatch
    3  infeasible scene generation
    4  dataset verification violations
    5  non-finite loss or activation during training
"""


class FilmWorldError(Exception):
    """Base class for all tool errors."""
    exit_code = 1


class ConfigError(FilmWorldError):
    """Invalid run configuration, flag value or family name."""
    exit_code = 2


ConfigInvalid = ConfigError


class ArchitectureMismatch(ConfigError):
    """Checkpoint architecture, config or vocabulary does not match the target."""
    exit_code = 2


class SceneInfeasible(FilmWorldError):
    """Placement retry budget exhausted for a scene spec."""
    exit_code = 3

    def __init__(self, message, family=None):
        super().__init__(message if family is None else f"{family}: {message}")
        self.family = family


class SceneUnusable(FilmWorldError):
    """No caption with the requested truth value was found for a scene."""
    exit_code = 3


class VerifyFailed(FilmWorldError):
    """A stored dataset failed verification."""
    exit_code = 4

    def __init__(self, violations):
        super().__init__(f"{len(violations)} verification violation(s)")
        self.violations = violations


class NonFiniteLoss(FilmWorldError):
    exit_code = 5

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} at iteration {iteration}"
        super().__init__(message)
        self.iteration = iteration


class NonFiniteActivation(FilmWorldError):
    exit_code = 5


class ShapeMismatch(FilmWorldError, ValueError):
    """Operand shapes are inconsistent for an operation."""


class CorruptRecord(FilmWorldError):
    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"record {index}: {message}")
        self.index = index

"""Exception types shared across the package.

Every error raised by the library derives from FistanetError so the CLI can
catch one type and print a single-line diagnostic.
"""


class FistanetError(Exception):
    """Base class for all library errors."""


class ShapeError(FistanetError):
    """Operands have incompatible or invalid dimensions."""


class FormatError(FistanetError):
    """A file on disk is not a valid tensor/checkpoint/manifest."""


class ConfigError(FistanetError):
    """Bad configuration value or unknown configuration key."""


class ConvergenceError(FistanetError):
    """An iterative solver failed to reach its required tolerance."""


class ConditioningError(FistanetError):
    """An operator could not be built with the requested conditioning."""


class GenerationError(FistanetError):
    """Phantom or dataset generation failed (e.g. placement rejection)."""


class TrainingError(FistanetError):
    """Training aborted (e.g. non-finite loss)."""

"""Exception hierarchy shared by all routecast modules.

Every error carries a short machine-parsable ``code`` (dotted class string)
and the process exit code the CLI maps it to: 2 for I/O problems, 3 for
validation problems, 4 for training divergence.
"""

from __future__ import annotations


class RoutecastError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"
    exit_code = 3

    def __str__(self) -> str:  # pragma: no cover - trivial
        return f"{self.code}: {super().__str__()}"


# --- I/O (exit code 2) -------------------------------------------------

class MissingInputError(RoutecastError):
    code = "io.missing"
    exit_code = 2


class FormatError(RoutecastError):
    """Unreadable or wrong CSV header / file structure."""

    code = "io.format"
    exit_code = 2


class CorruptInputError(RoutecastError):
    """More than half of the data rows were rejected."""

    code = "io.corrupt"
    exit_code = 2


# --- validation (exit code 3) ------------------------------------------

class ConfigError(RoutecastError):
    code = "validation.config"


class InvalidGeometryError(RoutecastError):
    code = "validation.geometry"


class InvalidInputError(RoutecastError):
    code = "validation.input"


class InvalidCategoryError(RoutecastError):
    code = "validation.category"


class ShapeError(RoutecastError):
    code = "validation.shape"


class UndefinedStatError(RoutecastError):
    """A speed statistic has zero total dwell time in the region."""

    code = "validation.undefined_stat"


class UndefinedCorrelationError(RoutecastError):
    """Pearson correlation is undefined (zero variance)."""

    code = "validation.undefined_correlation"


class SelectionError(RoutecastError):
    """No category has a defined demand correlation."""

    code = "validation.selection"


class SplitError(RoutecastError):
    code = "validation.split"


class InferenceError(RoutecastError):
    code = "validation.inference"


class CoverageError(RoutecastError):
    """A route crosses a grid cell with no emission prediction."""

    code = "validation.coverage"


# --- training (exit code 4) --------------------------------------------

class DivergenceError(RoutecastError):
    """Training produced a non-finite loss."""

    code = "train.divergence"
    exit_code = 4

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch

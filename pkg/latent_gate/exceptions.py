"""
Latent Gate Error Hierarchy.

Every error raised by the package derives from LatentGateError and carries
the process exit code the CLI reports for it. Numerical contract errors
also derive from ValueError.
"""

from typing import Sequence


class LatentGateError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ContractError(LatentGateError, ValueError):
    """An operation was called outside its documented preconditions."""


class DimensionError(ContractError):
    """Tensor shapes do not agree."""

    def __init__(self, message: str, *shapes: Sequence[int]) -> None:
        if shapes:
            rendered = ", ".join(str(tuple(s)) for s in shapes)
            message = f"{message} (shapes: {rendered})"
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class DegenerateBatchError(ContractError):
    """Batch statistics requested on a batch of one sample."""


class InvalidSpecError(ContractError):
    """Architecture specification violates its invariants."""


class UndefinedMetricError(ContractError):
    """A metric is undefined for the given labels."""


class OptimizationDivergedError(ContractError):
    """Iterative optimisation kept increasing its objective."""


class LesionPlacementError(ContractError):
    """A lesion could not be placed on the phantom support."""


class PreconditionError(ContractError):
    """A discrete world violates the information preconditions."""


class SweepCellError(LatentGateError):
    """A sweep or comparison cell failed."""

    def __init__(self, cell: str, cause: BaseException) -> None:
        super().__init__(f"cell {cell} failed: {cause}")
        self.cell = cell


class ConfigError(LatentGateError):
    """Invalid configuration or unusable output location."""

    exit_code = 2

    def __init__(self, message: str, errors: Sequence[str] = ()) -> None:
        super().__init__(message)
        self.errors = list(errors)


class DatasetIOError(ConfigError):
    """Reading or writing dataset files failed."""


class PGMParseError(ConfigError):
    """A PGM file is malformed."""

    def __init__(self, path: str, field: str, detail: str) -> None:
        super().__init__(f"{path}: {field}: {detail}")
        self.path = path
        self.field = field


class DatasetLoadError(ConfigError):
    """A manifest references missing or invalid records."""


class ContaminationError(LatentGateError):
    """Abnormal records reached a normal-only training split."""

    exit_code = 3


class CheckpointError(LatentGateError):
    """A checkpoint file is malformed."""

    exit_code = 4


class CheckpointMismatchError(CheckpointError):
    """A checkpoint does not match the requested architecture."""


class MissingArtifactError(LatentGateError):
    """A required artifact from an earlier command is missing."""

    exit_code = 5


class TheoryCheckError(LatentGateError):
    """An exact theory check failed."""

    exit_code = 6

    def __init__(self, failures: Sequence[str]) -> None:
        super().__init__("theory checks failed: " + "; ".join(failures))
        self.failures = list(failures)

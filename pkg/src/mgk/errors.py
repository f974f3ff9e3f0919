"""Exception types shared across the package.

The error taxonomy is part of the public contract: callers (and the CLI exit
code mapping) dispatch on these classes, so library code raises them instead
of bare ValueError/RuntimeError wherever the failure mode is meaningful.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class StateError(RuntimeError):
    """An object was used in an invalid lifecycle state (e.g. a consumed tape)."""


class FormatError(ValueError):
    """A file failed structural validation.

    ``offset`` carries the byte position of the first problem when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TransferError(RuntimeError):
    """Checkpoint-to-model weight transfer failed (names or shapes disagree)."""


class CompositionError(RuntimeError):
    """Pipeline stages cannot be composed (incompatible layouts/checkpoints)."""


class TrainingError(RuntimeError):
    """A training run became invalid (e.g. non-finite loss); carries the step."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    """A run configuration failed validation before any compute started."""

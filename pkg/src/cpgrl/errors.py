"""Shared exception types."""


class ContractViolationError(ValueError):
    """An operation was called with inputs violating its contract (shape, finiteness, ...)."""


class ConfigError(ValueError):
    """Invalid or unknown configuration entry; message names the field and constraint."""


class CheckpointSchemaError(ValueError):
    """Checkpoint file has an incompatible schema version or malformed layout."""


class PhysicsFaultError(RuntimeError):
    """Non-finite values appeared in the dynamics; the episode is aborted, never silenced."""


class TrainingAbortError(RuntimeError):
    """Training stopped on a non-finite loss; carries the path of the diagnostic dump."""

    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path

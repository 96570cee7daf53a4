"""Exception hierarchy shared across the package."""


class T2RError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(T2RError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(T2RError):
    """A caller violated an operation's precondition."""


class ConfigError(T2RError):
    """A configuration value is invalid or inconsistent."""


class InputError(T2RError):
    """User-supplied data (tokens, corpus, files) is invalid."""


class TrainingError(T2RError):
    """Optimization failed (non-finite values, bad state)."""


class DivergenceError(TrainingError):
    """Training diverged; carries the step at which it was detected."""

    def __init__(self, step: int, message: str):
        super().__init__(f"{message} (step {step})")
        self.step = step


class CheckpointError(T2RError):
    """Base class for checkpoint persistence failures."""


class CorruptionError(CheckpointError):
    """Checkpoint file is truncated or structurally damaged."""

    def __init__(self, offset: int, message: str):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ValidationError(CheckpointError):
    """Checkpoint contents disagree with the model config."""

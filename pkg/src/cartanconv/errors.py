"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Input lies outside the mathematical domain of the operation."""


class SingularMatrixError(DomainError):
    """Matrix is singular or too close to singular for a stable result."""


class RangeError(ValueError):
    """Result would overflow the representable floating-point range."""


class LayerEvalError(RuntimeError):
    """A network layer failed while evaluating a kernel stencil."""


class IdxFormatError(ValueError):
    """An IDX data file is malformed; the message names the byte offset."""


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed or inconsistent with the model config."""


class ConfigError(ValueError):
    """Invalid configuration value or config-file syntax."""


class TrainingFault(RuntimeError):
    """Training aborted; carries a diagnostic payload (seed, batch index)."""

    def __init__(self, message, seed=None, batch_index=None):
        super().__init__(message)
        self.seed = seed
        self.batch_index = batch_index

"""Exception hierarchy shared across the package."""


class TorsionPinnError(Exception):
    """Base class for all package errors."""


class StructuralError(TorsionPinnError):
    """Malformed computation: mismatched jet widths, unsupported operation."""


class TrainingDivergenceError(TorsionPinnError):
    """Loss or gradient became non-finite."""

    def __init__(self, message: str, epoch: int | None = None, last_good_params=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch
        self.last_good_params = last_good_params


class CheckpointError(TorsionPinnError):
    """Base class for checkpoint read failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class SpecMismatchError(CheckpointError):
    """Checkpoint network does not fit the problem it is loaded for."""


class GeometryError(TorsionPinnError):
    """Degenerate or invalid domain description."""


class PointFileError(TorsionPinnError):
    """Malformed point CSV; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PointValidationError(TorsionPinnError):
    """Imported points violate the domain; ``indices`` lists the offenders."""

    def __init__(self, message: str, indices):
        super().__init__(f"{message}: indices {list(indices)[:20]}")
        self.indices = list(indices)


class QuadratureError(TorsionPinnError):
    """Adaptive quadrature could not reach the requested tolerance."""


class ConvergenceError(TorsionPinnError):
    """Iterative solver hit its iteration cap."""


class ConfigError(TorsionPinnError):
    """Bad configuration file or flag value."""

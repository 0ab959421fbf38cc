"""Exception types shared across the package."""


class RnfError(Exception):
    """Base class for all library errors."""


class ShapeError(RnfError, ValueError):
    """An array argument has the wrong shape or length."""


class NumericError(RnfError, ValueError):
    """An input contains NaN or infinity."""


class ConfigError(RnfError, ValueError):
    """A configuration value is out of range, unknown, or inconsistent."""


class TraceError(RnfError, ValueError):
    """A forward trace does not match the model it is replayed against."""


class DivergenceError(RnfError, RuntimeError):
    """Training produced a non-finite loss or gradient."""


class IngestError(RnfError, ValueError):
    """A data file or schema cannot be turned into a dataset."""


class InputError(RnfError, ValueError):
    """A metric was called on inputs it is not defined for (e.g. an empty group)."""


class DegenerateProjectionError(RnfError, ValueError):
    """The kernel matrix has fewer positive eigenvalues than projection dims."""


class CheckpointError(RnfError, ValueError):
    """A checkpoint file is corrupt, truncated, or has the wrong version."""

"""Exception hierarchy shared by every module in the package."""


class SaMjpfError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(SaMjpfError):
    """A CSV file or config does not match the declared schema."""


class DataError(SaMjpfError):
    """Input data violates a precondition (length, monotonicity, finiteness)."""


class SyncError(SaMjpfError):
    """Channels cannot be aligned onto a common time grid."""


class NormalizationError(SaMjpfError):
    """A channel cannot be normalized (e.g. constant column)."""


class ConfigError(SaMjpfError):
    """Invalid configuration value."""


class ModelFormatError(SaMjpfError):
    """A serialized model file is structurally invalid or version-mismatched."""


class ModelError(SaMjpfError):
    """A trained model is unusable for the requested operation."""


class FilterDivergenceError(SaMjpfError):
    """Every particle weight underflowed to zero and recovery is disabled."""


class ScenarioSpecError(SaMjpfError):
    """A scenario specification is internally inconsistent."""


class EvalError(SaMjpfError):
    """Traces and ground-truth windows cannot be evaluated together."""

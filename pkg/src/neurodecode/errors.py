"""Exception hierarchy shared by every stage of the pipeline."""


class NeurodecodeError(Exception):
    """Base class for all package errors."""


class ParameterError(NeurodecodeError, ValueError):
    """An argument is out of range or has the wrong shape."""


class DesignError(NeurodecodeError, RuntimeError):
    """Filter design produced an unusable (e.g. unstable) result."""


class FilterRuntimeError(NeurodecodeError, RuntimeError):
    """Filtering produced non-finite output."""


class UsageError(NeurodecodeError, RuntimeError):
    """API called in the wrong order, e.g. backward before forward."""


class TransplantError(NeurodecodeError, ValueError):
    """Source and destination recurrent layers are not shape compatible."""


class DataError(NeurodecodeError, ValueError):
    """Corpus content does not satisfy a training precondition."""


class SplitError(NeurodecodeError, ValueError):
    """A corpus cannot be split with the requested fractions."""


class CorpusLoadError(NeurodecodeError, ValueError):
    """A manifest or one of the files it references is invalid."""

    def __init__(self, message, example_id=None):
        super().__init__(message if example_id is None else f"{example_id}: {message}")
        self.example_id = example_id


class ConfigError(NeurodecodeError, ValueError):
    """Run configuration contains unknown keys or invalid values."""

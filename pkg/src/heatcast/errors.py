"""Exception hierarchy.

Everything raised on bad input derives from :class:`HeatcastError`, so the
CLI can map it to the data-error exit code in one place.
"""


class HeatcastError(ValueError):
    """Base class for all data and validation errors."""


# grid_data
class SchemaError(HeatcastError):
    pass


class DuplicateKeyError(HeatcastError):
    pass


class RangeError(HeatcastError):
    pass


class EmptySelectionError(HeatcastError):
    pass


class UnknownVariableError(HeatcastError, KeyError):
    pass


# design
class WindowOutOfSpanError(HeatcastError):
    pass


class NoCompleteRowsError(HeatcastError):
    pass


class LabelImbalanceError(HeatcastError):
    pass


class EmptyDatasetError(HeatcastError):
    pass


# forest / diagnostics
class DegenerateDataError(HeatcastError):
    pass


class MissingPredictorError(HeatcastError, KeyError):
    pass


class UnknownPredictorError(HeatcastError, KeyError):
    pass


class FingerprintMismatchError(HeatcastError):
    pass


class LengthMismatchError(HeatcastError):
    pass


# ga_synth
class TaskMismatchError(HeatcastError):
    pass


class PredictorSetMismatchError(HeatcastError):
    pass


# conformal / sampling / synthgen
class SplitDegenerateError(HeatcastError):
    pass


class DegeneratePriorError(HeatcastError):
    pass


class ConfigError(HeatcastError):
    pass

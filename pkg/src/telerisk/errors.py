"""Exception hierarchy shared across the pipeline.

Three branches matter for the CLI exit codes: ConfigError (2), DataError (3)
and NumericalError (4).
"""

from __future__ import annotations


class TeleriskError(Exception):
    """Base class for all package errors."""


class ConfigError(TeleriskError):
    """Invalid or inconsistent configuration."""


class DataError(TeleriskError):
    """Input data violates a precondition or file contract."""


class NumericalError(TeleriskError):
    """An estimation procedure failed or produced no usable result."""


# -- ingestion ---------------------------------------------------------------

class EmptyDataset(DataError):
    pass


class EmptyTrip(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, path, line: int, needed: int, found: int):
        super().__init__(f"{path}:{line}: need at least {needed} columns, found {found}")
        self.line = line


class UnparsableRow(DataError):
    def __init__(self, path, line: int, reason: str = "unparsable value"):
        super().__init__(f"{path}:{line}: {reason}")
        self.line = line


class TripTooShort(DataError):
    def __init__(self, trip_id: str, length: int, minimum: int):
        super().__init__(f"trip {trip_id!r}: {length} samples < required {minimum}")
        self.trip_id = trip_id
        self.length = length
        self.minimum = minimum


class InfeasibleSpec(DataError):
    pass


# -- wavelet / portfolio -----------------------------------------------------

class SeriesTooShort(DataError):
    def __init__(self, length: int, required: int):
        super().__init__(f"series length {length} < filter width {required}")
        self.length = length
        self.required = required


class ZeroVarianceSignal(DataError):
    pass


class BadWeights(DataError):
    pass


class EmptyCohort(DataError):
    pass


# -- severity mixture --------------------------------------------------------

class DegenerateClusters(NumericalError):
    pass


class NoTailPoints(NumericalError):
    pass


class NoFeasibleCandidate(NumericalError):
    pass


class AllRunsRejected(NumericalError):
    pass


class ConstraintViolatedAtInit(NumericalError):
    pass


class NonFiniteLikelihood(NumericalError):
    pass


class AllCellsFailed(NumericalError):
    pass


# -- risk engine -------------------------------------------------------------

class TooFewProfiles(DataError):
    pass


class DriverMismatch(DataError):
    pass


class NoTripsYet(DataError):
    pass


# -- classifier --------------------------------------------------------------

class SingleClassTrainSet(DataError):
    pass


class SingleClassOof(DataError):
    pass


class SingleClassLabels(DataError):
    pass


class InsufficientClassMembers(DataError):
    pass


class SingleDriver(DataError):
    pass


class ModelMissing(DataError):
    pass

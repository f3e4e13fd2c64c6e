"""Exception hierarchy.

Two families matter to callers: :class:`ValidationError` for malformed
input (bad designs, duplicate units, unknown settings) and
:class:`EstimationError` for data that is well formed but cannot support
the requested estimator. The command line maps them to exit codes 2 and 3.
"""


class PairABError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PairABError, ValueError):
    pass


class EmptyInput(ValidationError):
    pass


class DuplicateUnit(ValidationError):
    def __init__(self, unit_id):
        super().__init__(f"duplicate unit_id {unit_id!r}")
        self.unit_id = unit_id


class InvalidDesign(ValidationError):
    pass


class InvalidOutcome(ValidationError):
    pass


class MissingHeader(ValidationError):
    pass


class MalformedRow(ValidationError):
    def __init__(self, row, column, detail):
        super().__init__(f"row {row}, column {column!r}: {detail}")
        self.row = row
        self.column = column


class UnknownSetting(ValidationError):
    pass


class IndivisibleN(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class EstimationError(PairABError):
    pass


class InsufficientCell(EstimationError):
    def __init__(self, cell, count):
        super().__init__(
            f"cell {cell!r} has {count} observation(s), at least 2 are needed "
            "to estimate variance components; supply known components or "
            "fall back to the single analysis"
        )
        self.cell = cell
        self.count = count


class NoData(EstimationError):
    pass


class NoPairedData(EstimationError):
    pass


class SingularCovariance(EstimationError):
    pass


class SingularNormalEquations(EstimationError):
    pass


class SizeGuardExceeded(EstimationError):
    pass

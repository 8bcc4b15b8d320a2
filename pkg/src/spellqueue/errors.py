"""Exception types shared across the package."""


class SpellQueueError(Exception):
    """Base class for all errors raised deliberately by this package."""


class SchemaError(SpellQueueError):
    """A delimited input file is missing a mandatory column."""

    def __init__(self, column: str):
        super().__init__(f"missing mandatory column {column!r}")
        self.column = column


class RowValidationError(SpellQueueError):
    """A single input row could not be turned into a valid record."""

    def __init__(self, row_index: int, reason: str):
        super().__init__(f"row {row_index}: {reason}")
        self.row_index = row_index
        self.reason = reason


class ConfigError(SpellQueueError):
    pass


class ParameterError(SpellQueueError, ValueError):
    pass


class ContractError(SpellQueueError, ValueError):
    """Inputs violate an operation's precondition (empty sample, layout mismatch)."""


class EstimationError(SpellQueueError):
    pass


class EvaluationError(SpellQueueError):
    pass


class NormalisationError(SpellQueueError):
    pass

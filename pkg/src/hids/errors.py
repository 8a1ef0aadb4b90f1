"""Exception types raised across the toolkit.

Every error derives from :class:`HidsError` so callers (the CLI in
particular) can separate domain failures from programming errors.
"""

from __future__ import annotations


class HidsError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(HidsError, ValueError):
    """Invalid configuration or usage; the CLI maps it to exit code 2."""


class BadConfig(ConfigError):
    pass


# -- ingestion ---------------------------------------------------------------


class MissingColumn(HidsError):
    def __init__(self, column: str):
        super().__init__(f"missing column {column!r}")
        self.column = column


class NonNumericFeature(HidsError):
    def __init__(self, row: int, col: str, value: object = None):
        super().__init__(f"row {row}: column {col!r} is not a finite number ({value!r})")
        self.row = row
        self.col = col
        self.value = value


class UnknownLabel(HidsError):
    def __init__(self, row: int, value: object):
        super().__init__(f"row {row}: unknown label {value!r}")
        self.row = row
        self.value = value


class EmptyDataset(HidsError):
    pass


class DimensionMismatch(HidsError, ValueError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected {expected} features, got {got}")
        self.expected = expected
        self.got = got


class TooFewRecords(HidsError):
    def __init__(self, cls: str, have: int = 0, need: int = 1):
        super().__init__(f"class {cls!r} has {have} records, need at least {need}")
        self.cls = cls
        self.have = have
        self.need = need


class InsufficientInstances(HidsError):
    def __init__(self, cls: str, have: int, need: int):
        super().__init__(f"class {cls!r}: have {have} instances, need {need}")
        self.cls = cls
        self.have = have
        self.need = need


# -- metrics / models --------------------------------------------------------


class LengthMismatch(HidsError, ValueError):
    pass


class EmptyInput(HidsError, ValueError):
    pass


class EmptyScores(HidsError, ValueError):
    pass


class BadQuantile(HidsError, ValueError):
    pass


class EmptyFamily(HidsError, ValueError):
    pass


class ArtifactError(HidsError):
    """Corrupt or incompatible model artifact."""


# -- pipeline ----------------------------------------------------------------


class MissingBenign(HidsError):
    pass


class MissingAttacks(HidsError):
    pass


class NotTrained(HidsError):
    pass


class UnknownCategory(HidsError):
    def __init__(self, category: str):
        super().__init__(f"unknown or unusable attack category {category!r}")
        self.category = category


# -- wire protocol / tiers ---------------------------------------------------


class ProtocolError(HidsError):
    pass


class FrameTooLarge(ProtocolError):
    pass


class MalformedJson(ProtocolError):
    pass


class BadVersion(ProtocolError):
    pass


class UnknownKind(ProtocolError):
    pass


class UpstreamUnavailable(HidsError):
    pass


class ArtifactMismatch(HidsError):
    pass


class ConnectionLost(HidsError):
    pass

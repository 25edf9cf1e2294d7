"""Exception types shared by every module.

Each error carries a short machine-readable ``code`` that the command line
prints verbatim, so scripts can branch on the failure class.
"""


class DzError(Exception):
    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class NotOnLegError(DzError):
    code = "not-on-leg"


class NotCirculatingError(DzError):
    code = "not-circulating"


class SchemaError(DzError):
    code = "schema"


class InsufficientHistoryError(DzError):
    code = "insufficient-history"


class HorizonMismatchError(DzError):
    code = "horizon-mismatch"


class DegenerateLabelsError(DzError):
    code = "degenerate-labels"


class EmptyMiningResultError(DzError):
    code = "empty-mining-result"


class SampleShortfallError(DzError):
    code = "sample-shortfall"

"""Exception hierarchy. Everything raised on purpose derives from OdForgeError."""


class OdForgeError(Exception):
    pass


class ValidationError(OdForgeError, ValueError):
    """Input violates a documented precondition."""


class TooFewInliers(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class FormatError(OdForgeError):
    """Malformed dataset file; carries the offending position when known."""

    def __init__(self, message, path=None, row=None, column=None):
        self.path = path
        self.row = row
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where) + ": " if where else ""
        super().__init__(prefix + message)


class SingularCovariance(OdForgeError):
    pass


class RejectionBudgetExceeded(OdForgeError):
    pass


class PerturbationBudgetExceeded(OdForgeError):
    pass


class InvalidCorrelation(ValidationError):
    pass


class UnsupportedParameter(ValidationError):
    pass


class NonConvergence(OdForgeError):
    pass


class KTooLarge(ValidationError):
    pass


class SingleClass(ValidationError):
    pass


class AllTies(ValidationError):
    pass


class SubsetTooLarge(ValidationError):
    pass


class MissingScores(OdForgeError):
    def __init__(self, missing):
        self.missing = list(missing)
        head = ", ".join(f"{m}/{d}" for m, d in self.missing[:5])
        more = "" if len(self.missing) <= 5 else f" (+{len(self.missing) - 5} more)"
        super().__init__(f"missing score files for {len(self.missing)} cells: {head}{more}")


class PrivateLabels(OdForgeError):
    pass


class EmNonConvergenceWarning(UserWarning):
    pass

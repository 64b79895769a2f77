"""Exception hierarchy shared across the package."""


class FusionError(Exception):
    """Base class for all package errors."""


class DataError(FusionError):
    """Problems with input data (parse, schema, degenerate samples)."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(DataError):
    pass


class DegenerateDatasetError(DataError):
    pass


class ValidationError(DataError):
    """Raised when a dataset does not carry what a setting requires."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{v.rule}: {len(v.indices)} record(s), first {v.indices[:5]}" for v in self.violations]
        super().__init__("; ".join(lines))


class NumericalError(FusionError):
    """Fits that fail beyond their guards."""


class InsufficientDataError(NumericalError):
    pass


class DegenerateLabelsError(NumericalError):
    pass


class FoldStarvationError(NumericalError):
    def __init__(self, subpopulation, fold=None):
        self.subpopulation = subpopulation
        self.fold = fold
        where = f" (fold {fold})" if fold is not None else ""
        super().__init__(f"training complement lacks usable '{subpopulation}' records{where}")


class RatioUnavailable(FusionError):
    """Signal that a variance ratio cannot be estimated for an arm."""


class ContextIncompleteError(FusionError):
    pass


class NotIdentifiableError(FusionError):
    pass


class BootstrapUnstableError(NumericalError):
    pass


class RangeUnavailableError(DataError):
    pass

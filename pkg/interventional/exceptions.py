"""Interventional Exceptions"""


class InterventionalError(Exception):
    """Base class for every error raised by the package.

    The class name doubles as the machine-parseable error class printed by the CLI.
    """

    @property
    def error_class(self) -> str:
        """The name reported on the CLI error line"""
        return type(self).__name__


class DataValidationError(InterventionalError):
    """The dataset breaks one or more Dataset invariants"""

    def __init__(self, violations: list[str]) -> None:
        self.violations = violations
        super().__init__("; ".join(violations))


class RankDeficiencyError(InterventionalError):
    """The design matrix is not of full column rank"""

    def __init__(self, column: int, name: str = None) -> None:
        self.column = column
        label = name if name is not None else f"column {column}"
        super().__init__(f"design matrix is rank deficient: {label} is linearly dependent on earlier columns")


class SeparationError(InterventionalError):
    """Logistic fit is degenerate: constant labels or complete separation"""


class EffectiveSampleError(InterventionalError):
    """Too few distinct training inputs inside a kernel window"""


class DomainError(InterventionalError, ValueError):
    """An argument lies outside the domain of the operation"""


class KinkError(DomainError):
    """A derivative was requested exactly at a cap point of a min{} family"""


class MissingDerivativeError(InterventionalError):
    """The intervention family does not provide lambda'"""


class DegenerateWeightsError(InterventionalError):
    """Estimator weights sum to (numerically) zero"""


class ZeroDenominatorError(InterventionalError):
    """Residualized treatment has no variation"""


class EmptySampleError(InterventionalError):
    """Trimming left no observations"""


class SupportError(InterventionalError):
    """Evaluation requested outside the support of the fitted propensity"""

    def __init__(self, message: str, rows: list[int] = None) -> None:
        self.rows = rows or []
        super().__init__(message)


class DegenerateDensityError(InterventionalError):
    """The location-shift residuals have (numerically) zero spread"""


class ConvergenceError(InterventionalError):
    """An iterative fit failed to converge"""


class ExcessiveDropError(InterventionalError):
    """Too many bootstrap replicates failed"""


class FoldError(InterventionalError):
    """Cross-fitting folds cannot be formed"""


class ParseError(InterventionalError):
    """A CSV cell could not be parsed"""

    def __init__(self, row: int, column: str, value: object) -> None:
        self.row = row
        self.column = column
        super().__init__(f"cannot parse value {value!r} at row {row}, column {column!r}")


class RoleError(InterventionalError):
    """Column roles are inconsistent with each other or with the data"""


class EmptyFileError(InterventionalError):
    """The input file has no data rows"""


class FetchError(InterventionalError):
    """Downloading a public dataset failed"""


class DigestMismatchError(FetchError):
    """A downloaded file does not match its recorded digest"""

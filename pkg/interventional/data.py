"""Dataset container, validation and the estimate report shared by all estimators"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

from interventional.exceptions import DataValidationError

logger = logging.getLogger(__name__)


def _frozen_array(values: Any, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True)
    if ndim == 2 and array.ndim == 1:
        array = array.reshape(-1, 1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Dataset:
    """
    The observed data O=(X, A, Y) and, optionally, the instruments-plus-covariates Z.

    The arrays are copied and made read-only on construction, so a Dataset can be
    shared between concurrent estimator runs.

    Attributes:
        x: covariates (n x d_x), no intercept column
        a: binary treatment (n)
        y: outcome (n)
        z: instruments plus covariates (n x d_z), or None
        x_columns_in_z: indices of the columns of z that hold x, in x's column order
        x_names: labels of the x columns
        z_names: labels of the z columns
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    z: Optional[np.ndarray] = None
    x_columns_in_z: Optional[tuple[int, ...]] = None
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", _frozen_array(self.x, 2))
        object.__setattr__(self, "a", _frozen_array(self.a, 1).ravel())
        object.__setattr__(self, "y", _frozen_array(self.y, 1).ravel())
        if self.z is not None:
            object.__setattr__(self, "z", _frozen_array(self.z, 2))
            if self.x_columns_in_z is None:
                object.__setattr__(self, "x_columns_in_z", tuple(range(self.x.shape[1])))
            else:
                object.__setattr__(self, "x_columns_in_z", tuple(int(c) for c in self.x_columns_in_z))
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{j + 1}" for j in range(self.x.shape[1])))
        if self.z is not None and not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"z{j + 1}" for j in range(self.z.shape[1])))

    @property
    def n(self) -> int:
        """Number of rows"""
        return int(self.a.shape[0])

    @property
    def has_instruments(self) -> bool:
        """True when z carries at least one column that is not in x"""
        return self.z is not None and self.z.shape[1] > len(self.x_columns_in_z or ())

    def subset(self, rows: Sequence[int]) -> "Dataset":
        """A new Dataset with the given rows (repetitions allowed)"""
        rows = np.asarray(rows, dtype=int)
        return replace(
            self,
            x=self.x[rows],
            a=self.a[rows],
            y=self.y[rows],
            z=None if self.z is None else self.z[rows],
        )

    def with_outcome(self, y: Any) -> "Dataset":
        """A new Dataset with a replaced outcome vector"""
        return replace(self, y=y)


def validate(dataset: Dataset) -> list[str]:
    """
    Check the Dataset invariants.

    Args:
        dataset (Dataset): The dataset to check

    Returns:
        list[str]: One message per violation, naming the offending row or column. Empty when valid.
    """
    violations = []
    n = dataset.a.shape[0]
    if n < 2:
        violations.append(f"dataset has {n} rows, at least 2 are required")
    arrays = {"x": dataset.x, "y": dataset.y}
    if dataset.z is not None:
        arrays["z"] = dataset.z
    for name, array in arrays.items():
        if array.shape[0] != n:
            violations.append(f"{name} has {array.shape[0]} rows but the treatment has {n}")

    finite_a = np.isfinite(dataset.a)
    for row in np.flatnonzero(~finite_a):
        violations.append(f"non-finite treatment at row {row}")
    for row in np.flatnonzero(finite_a & (dataset.a != 0) & (dataset.a != 1)):
        violations.append(f"non-binary treatment at row {row}")
    for row in np.flatnonzero(~np.isfinite(dataset.y)):
        violations.append(f"non-finite outcome at row {row}")
    for name, array, names in (("x", dataset.x, dataset.x_names), ("z", dataset.z, dataset.z_names)):
        if array is None:
            continue
        for row, column in zip(*np.nonzero(~np.isfinite(array))):
            label = names[column] if column < len(names) else column
            violations.append(f"non-finite {name} value at row {row}, column {label}")

    if dataset.z is not None:
        columns = dataset.x_columns_in_z or ()
        d_z = dataset.z.shape[1]
        if len(set(columns)) != len(columns):
            violations.append(f"x_columns_in_z has duplicated indices {list(columns)}")
        if len(columns) != dataset.x.shape[1]:
            violations.append(f"x_columns_in_z declares {len(columns)} columns but x has {dataset.x.shape[1]}")
        invalid = [c for c in columns if not 0 <= c < d_z]
        if invalid:
            violations.append(f"x_columns_in_z indices {invalid} are outside z's {d_z} columns")
        elif len(columns) == dataset.x.shape[1] and dataset.z.shape[0] == n:
            for j, c in enumerate(columns):
                if not np.array_equal(dataset.x[:, j], dataset.z[:, c]):
                    violations.append(f"x column {dataset.x_names[j]} differs from z column {c}")
    return violations


def require_valid(dataset: Dataset, both_arms: bool = True, instruments: bool = False) -> None:
    """
    Raise if the dataset cannot be used by an estimator.

    Args:
        dataset (Dataset): The dataset to check
        both_arms (bool): Require at least one treated and one untreated row
        instruments (bool): Require z with at least one column beyond x

    Raises:
        DataValidationError: with every violation found
    """
    violations = validate(dataset)
    if not violations and both_arms:
        treated = int(dataset.a.sum())
        if treated == 0 or treated == dataset.n:
            violations.append(f"both arms are required, found {treated} treated out of {dataset.n}")
    if not violations and instruments and not dataset.has_instruments:
        violations.append("instruments are required: z must contain columns that are not in x")
    if violations:
        raise DataValidationError(violations)


class Estimand(Enum):
    """The target effect"""

    IE = "IE"
    MIE = "MIE"


class Regime(Enum):
    """The identification regime"""

    UNCONFOUNDED = "unconfounded"
    IV_LATENT_INDEX = "iv-latent-index"


@dataclass(frozen=True)
class EstimandKind:
    """IE(delta) or MIE under an identification regime"""

    estimand: Estimand
    regime: Regime
    delta: Optional[float] = None

    def __post_init__(self) -> None:
        if self.estimand is Estimand.IE:
            if self.delta is None or not self.delta > 0:
                raise ValueError(f"IE requires delta > 0, got {self.delta}")
        elif self.delta is not None:
            raise ValueError("MIE carries no delta")

    def label(self, family_name: str) -> str:
        """A human label such as 'MIE[ipsi] (unconfounded)'"""
        target = self.estimand.value if self.delta is None else f"IE(delta={self.delta:g})"
        return f"{target}[{family_name}] ({self.regime.value})"


@dataclass(frozen=True)
class EstimateReport:
    """
    One estimate with its inference and metadata.

    Attributes:
        estimand: label of the target, e.g. "MIE[ipsi] (unconfounded)"
        point: point estimate
        std_error: standard error, when computed
        ci_lower: lower confidence bound
        ci_upper: upper confidence bound
        n_used: rows used after trimming
        method: estimator identifier
        seed: seed of any randomness involved (folds, bootstrap)
        diagnostics: named scalar diagnostics
    """

    estimand: str
    point: float
    n_used: int
    method: str
    std_error: Optional[float] = None
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None
    seed: Optional[int] = None
    diagnostics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.std_error is not None and not self.std_error >= 0:
            raise ValueError(f"std_error must be non-negative, got {self.std_error}")
        if (self.ci_lower is None) != (self.ci_upper is None):
            raise ValueError("ci_lower and ci_upper must be given together")
        if self.ci_lower is not None and not self.ci_lower <= self.point <= self.ci_upper:
            raise ValueError(f"CI [{self.ci_lower}, {self.ci_upper}] does not contain the point {self.point}")

    def with_inference(
        self, std_error: float, ci: Optional[tuple[float, float]] = None, **diagnostics: float
    ) -> "EstimateReport":
        """
        A copy carrying a standard error and, optionally, a confidence interval.

        A percentile interval that misses the point estimate is widened to include it; the
        widening is recorded in the diagnostics.
        """
        extra = dict(self.diagnostics)
        extra.update(diagnostics)
        ci_lower = ci_upper = None
        if ci is not None:
            ci_lower, ci_upper = ci
            if not ci_lower <= self.point <= ci_upper:
                extra["ci_widened"] = 1.0
                ci_lower, ci_upper = min(ci_lower, self.point), max(ci_upper, self.point)
        return replace(self, std_error=std_error, ci_lower=ci_lower, ci_upper=ci_upper, diagnostics=extra)

    def scaled(self, factor: float) -> "EstimateReport":
        """The report with point, SE and CI multiplied by a positive factor"""

        def scale(value: Optional[float]) -> Optional[float]:
            return None if value is None else value * factor

        diagnostics = dict(self.diagnostics)
        diagnostics["scale"] = factor
        return replace(
            self,
            point=self.point * factor,
            std_error=scale(self.std_error),
            ci_lower=scale(self.ci_lower),
            ci_upper=scale(self.ci_upper),
            diagnostics=diagnostics,
        )

    def to_record(self) -> dict[str, Any]:
        """A JSON-ready record"""

        def clean(value: Any) -> Any:
            if isinstance(value, float) and not math.isfinite(value):
                return str(value)
            return value

        return {
            "estimand": self.estimand,
            "point": clean(float(self.point)),
            "std_error": None if self.std_error is None else clean(float(self.std_error)),
            "ci_lower": None if self.ci_lower is None else clean(float(self.ci_lower)),
            "ci_upper": None if self.ci_upper is None else clean(float(self.ci_upper)),
            "n_used": int(self.n_used),
            "method": self.method,
            "seed": self.seed,
            "diagnostics": {k: clean(float(v)) for k, v in sorted(self.diagnostics.items())},
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "EstimateReport":
        """Rebuild a report from to_record's output"""

        def parse(value: Any) -> Any:
            return float(value) if isinstance(value, str) else value

        return cls(
            estimand=record["estimand"],
            point=parse(record["point"]),
            std_error=parse(record.get("std_error")),
            ci_lower=parse(record.get("ci_lower")),
            ci_upper=parse(record.get("ci_upper")),
            n_used=record["n_used"],
            method=record["method"],
            seed=record.get("seed"),
            diagnostics={k: parse(v) for k, v in record.get("diagnostics", {}).items()},
        )

"""User-supplied lambda families"""

from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from interventional.exceptions import DomainError, MissingDerivativeError
from interventional.interventions.family import InterventionFamily

Weight = Callable[[np.ndarray], np.ndarray]


class CustomLambda(InterventionFamily):
    """
    A family defined directly by its MIE weight lambda(p0).

    pi_delta is the first-order policy clip(p0 + delta * lambda(p0), 0, 1), so lambda is its
    derivative at delta=0. lambda' must be supplied explicitly; without it the family still
    supports plug-in and weighting estimators but not the doubly robust one.
    """

    family_name = "custom"

    def __init__(
        self,
        lam: Weight,
        lam_prime: Optional[Weight] = None,
        name: str = "custom",
        delta_max: Optional[float] = None,
        table: Optional[dict[str, list[float]]] = None,
    ) -> None:
        super().__init__(delta_max)
        self._lam = lam
        self._lam_prime = lam_prime
        self.name = name
        self._table = table

    def __repr__(self) -> str:
        return f"CustomLambda(name={self.name!r})"

    def __hash__(self) -> int:
        return hash((type(self), self.name))

    @property
    def has_derivative(self) -> bool:
        """True when lambda' was supplied"""
        return self._lam_prime is not None

    def _pi_delta(self, p0: np.ndarray, delta: float) -> np.ndarray:
        return p0 + delta * self._lambda(p0)

    def _lambda(self, p0: np.ndarray) -> np.ndarray:
        return np.asarray(self._lam(p0), dtype=float) * np.ones_like(p0)

    def _lambda_prime(self, p0: np.ndarray) -> np.ndarray:
        if self._lam_prime is None:
            raise MissingDerivativeError(f"intervention family {self.name!r} does not provide lambda'")
        return np.asarray(self._lam_prime(p0), dtype=float) * np.ones_like(p0)

    def to_spec(self) -> dict[str, Any]:
        spec: dict[str, Any] = {"family": self.family_name, "name": self.name}
        if self._table is not None:
            spec["lambda_table"] = self._table
        return spec

    @classmethod
    def from_table(
        cls,
        p: Sequence[float],
        lam: Sequence[float],
        lam_prime: Optional[Sequence[float]] = None,
        name: str = "custom",
        delta_max: Optional[float] = None,
    ) -> "CustomLambda":
        """
        Build a family from tabulated lambda (and optionally lambda') values.

        Values between the grid points are interpolated by a shape-preserving cubic, so a
        non-negative table gives a non-negative lambda.

        Args:
            p (Sequence[float]): Increasing grid of propensities covering [0, 1]
            lam (Sequence[float]): lambda at the grid points
            lam_prime (Sequence[float]): lambda' at the grid points, optional
            name (str): Label of the family
            delta_max (float): Upper bound of delta

        Returns:
            CustomLambda: The tabulated family
        """
        grid = np.asarray(p, dtype=float)
        values = np.asarray(lam, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or grid.shape != values.shape:
            raise DomainError("lambda table needs matching p and lambda lists with at least 2 entries")
        if np.any(np.diff(grid) <= 0):
            raise DomainError("lambda table grid must be strictly increasing")
        if grid[0] > 0 or grid[-1] < 1:
            raise DomainError(f"lambda table grid must cover [0, 1], got [{grid[0]:g}, {grid[-1]:g}]")
        if np.any(values < 0):
            raise DomainError("lambda table values must be non-negative")
        table = {"p": grid.tolist(), "lambda": values.tolist()}
        derivative = None
        if lam_prime is not None:
            slopes = np.asarray(lam_prime, dtype=float)
            if slopes.shape != grid.shape:
                raise DomainError("lambda_prime table must match the p grid")
            derivative = PchipInterpolator(grid, slopes)
            table["lambda_prime"] = slopes.tolist()
        return cls(PchipInterpolator(grid, values), derivative, name=name, delta_max=delta_max, table=table)

    @classmethod
    def from_parameters(cls, **parameters: Any) -> "CustomLambda":
        table = parameters.pop("lambda_table", None)
        if table is None:
            raise DomainError("a custom family in a config file needs a lambda_table")
        return cls.from_table(
            table["p"],
            table["lambda"],
            table.get("lambda_prime"),
            name=parameters.get("name", "custom"),
            delta_max=parameters.get("delta_max"),
        )

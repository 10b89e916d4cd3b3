"""Parent class of the delta-indexed intervention families"""

import logging
from typing import Any, Optional, Union

import numpy as np

from interventional.config import Config
from interventional.exceptions import DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def _returning(value: np.ndarray, like: Any) -> ArrayLike:
    """Return a float when the caller passed a scalar"""
    if np.ndim(like) == 0:
        return float(value)
    return value


class InterventionFamily:
    """InterventionFamily base class

    An intervention family maps the baseline propensity p0 to the intervened propensity pi_delta(p0)
    for every delta in [0, delta_max]. lambda(p0) is the derivative of pi_delta at delta=0 and
    lambda'(p0) its derivative with respect to p0.

    Subclasses set ``family_name``, the identifier used in config files, and implement the
    ``_pi_delta``, ``_lambda`` and ``_lambda_prime`` methods on validated arrays.
    """

    family_name: Optional[str] = None
    # the classical weighting estimand the MIE of this family reduces to, when any
    weight_scheme: Optional[str] = None

    def __init__(self, delta_max: Optional[float] = None) -> None:
        self.delta_max = float(Config.interventions.delta_max if delta_max is None else delta_max)

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"

    @property
    def label(self) -> str:
        """The name shown in estimand labels and result tables"""
        return getattr(self, "name", None) or self.family_name

    def __eq__(self, other: object) -> bool:
        return type(self) is type(other) and self.to_spec() == other.to_spec()

    def __hash__(self) -> int:
        return hash(type(self))

    @staticmethod
    def _check_p0(p0: ArrayLike) -> np.ndarray:
        values = np.asarray(p0, dtype=float)
        if not np.all((values >= 0) & (values <= 1)):
            bad = values[~((values >= 0) & (values <= 1))].ravel()[0]
            raise DomainError(f"baseline propensity must lie in [0, 1], got {bad}")
        return values

    def _check_delta(self, delta: float) -> float:
        if not 0 <= delta <= self.delta_max:
            raise DomainError(f"delta must lie in [0, {self.delta_max:g}], got {delta}")
        return float(delta)

    def pi_delta(self, p0: ArrayLike, delta: float) -> ArrayLike:
        """
        The intervened propensity.

        Args:
            p0: Baseline propensity, scalar or array, in [0, 1]
            delta (float): Intervention index in [0, delta_max]

        Returns:
            The intervened propensity in [0, 1], same shape as p0

        Raises:
            DomainError: If p0 or delta is outside its domain
        """
        values = self._check_p0(p0)
        delta = self._check_delta(delta)
        if delta == 0:
            return _returning(values.copy(), p0)
        return _returning(np.clip(self._pi_delta(values, delta), 0.0, 1.0), p0)

    def lam(self, p0: ArrayLike) -> ArrayLike:
        """The MIE weight lambda(p0), the derivative of pi_delta(p0) at delta=0"""
        values = self._check_p0(p0)
        return _returning(self._lambda(values), p0)

    def lam_prime(self, p0: ArrayLike) -> ArrayLike:
        """The derivative of lambda with respect to p0"""
        values = self._check_p0(p0)
        return _returning(self._lambda_prime(values), p0)

    def finite_difference_check(self, p0: ArrayLike, h: float) -> ArrayLike:
        """(pi_h(p0) - p0) / h, which approximates lambda(p0) up to O(h)"""
        if not h > 0:
            raise DomainError(f"the step must be positive, got {h}")
        values = self._check_p0(p0)
        return _returning((np.asarray(self.pi_delta(values, h)) - values) / h, p0)

    def to_spec(self) -> dict[str, Any]:
        """The config-file representation"""
        return {"family": self.family_name}

    def _pi_delta(self, p0: np.ndarray, delta: float) -> np.ndarray:
        raise NotImplementedError

    def _lambda(self, p0: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _lambda_prime(self, p0: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @classmethod
    def _all_subclasses(cls) -> list[type["InterventionFamily"]]:
        found = []
        for subclass in cls.__subclasses__():
            found.append(subclass)
            found.extend(subclass._all_subclasses())
        return found

    @classmethod
    def from_spec(cls, spec: Union[str, dict[str, Any]]) -> "InterventionFamily":
        """
        Build a family from its config-file representation.

        Args:
            spec: A family name (e.g. "ipsi") or a mapping with a "family" key and the family's parameters

        Returns:
            InterventionFamily: The family instance

        Raises:
            DomainError: If no family matches the name
        """
        if isinstance(spec, str):
            spec = {"family": spec}
        spec = dict(spec)
        name = str(spec.pop("family", "")).lower()
        for family in cls._all_subclasses():
            if family.family_name == name:
                return family.from_parameters(**spec)
        known = sorted(f.family_name for f in cls._all_subclasses() if f.family_name)
        raise DomainError(f"unknown intervention family {name!r}, expected one of {known}")

    @classmethod
    def from_parameters(cls, **parameters: Any) -> "InterventionFamily":
        """Build the family from the parameters of its config mapping"""
        return cls(**parameters)

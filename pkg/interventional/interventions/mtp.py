"""Modified treatment policies marginalized over the natural treatment"""

from typing import Any, Callable, Optional

import numpy as np

from interventional.exceptions import DomainError, MissingDerivativeError
from interventional.interventions.family import InterventionFamily

Channel = Callable[[np.ndarray, float], np.ndarray]
Rate = Callable[[np.ndarray], np.ndarray]

_CONGRUITY_GRID = np.linspace(0.0, 1.0, 11)


class MTP(InterventionFamily):
    """
    A modified treatment policy.

    ``stay(p0, delta)`` is Pr[A_delta=1 | A=1] and ``join(p0, delta)`` is Pr[A_delta=1 | A=0].
    Marginalizing over the natural treatment gives pi_delta = p0 stay + (1 - p0) join. The rates are
    the derivatives of the channels at delta=0 and determine lambda.

    The channels depend on the unit only through p0.
    """

    family_name = "mtp"

    def __init__(
        self,
        stay: Channel,
        join: Channel,
        stay_rate: Rate,
        join_rate: Rate,
        lam_prime: Optional[Rate] = None,
        name: str = "mtp",
        delta_max: Optional[float] = None,
    ) -> None:
        super().__init__(delta_max)
        self.stay = stay
        self.join = join
        self.stay_rate = stay_rate
        self.join_rate = join_rate
        self._lam_prime = lam_prime
        self.name = name
        if not np.allclose(stay(_CONGRUITY_GRID, 0.0), 1.0) or not np.allclose(join(_CONGRUITY_GRID, 0.0), 0.0):
            raise DomainError("a treatment policy at delta=0 must keep everyone's natural treatment")

    def __repr__(self) -> str:
        return f"MTP(name={self.name!r})"

    def __hash__(self) -> int:
        return hash((type(self), self.name))

    def _pi_delta(self, p0: np.ndarray, delta: float) -> np.ndarray:
        return p0 * self.stay(p0, delta) + (1.0 - p0) * self.join(p0, delta)

    def _lambda(self, p0: np.ndarray) -> np.ndarray:
        return p0 * self.stay_rate(p0) + (1.0 - p0) * self.join_rate(p0)

    def _lambda_prime(self, p0: np.ndarray) -> np.ndarray:
        if self._lam_prime is None:
            raise MissingDerivativeError(f"treatment policy {self.name!r} does not provide lambda'")
        return np.asarray(self._lam_prime(p0), dtype=float) * np.ones_like(p0)

    def to_spec(self) -> dict[str, Any]:
        return {"family": self.family_name, "policy": self.name}

    @classmethod
    def uniform_join(cls, delta_max: Optional[float] = None) -> "MTP":
        """Treated units stay treated; each untreated unit joins with probability delta"""
        return cls(
            stay=lambda p0, delta: np.ones_like(p0),
            join=lambda p0, delta: np.minimum(1.0, delta) * np.ones_like(p0),
            stay_rate=np.zeros_like,
            join_rate=np.ones_like,
            lam_prime=lambda p0: -np.ones_like(p0),
            name="uniform-join",
            delta_max=delta_max,
        )

    @classmethod
    def propensity_join(cls, delta_max: Optional[float] = None) -> "MTP":
        """Treated units stay treated; untreated units join with probability delta * p0"""
        return cls(
            stay=lambda p0, delta: np.ones_like(p0),
            join=lambda p0, delta: np.minimum(1.0, delta * p0),
            stay_rate=np.zeros_like,
            join_rate=lambda p0: np.asarray(p0, dtype=float),
            lam_prime=lambda p0: 1.0 - 2.0 * p0,
            name="propensity-join",
            delta_max=delta_max,
        )

    @classmethod
    def from_parameters(cls, **parameters: Any) -> "MTP":
        policy = parameters.get("policy", "uniform-join")
        builders = {"uniform-join": cls.uniform_join, "propensity-join": cls.propensity_join}
        if policy not in builders:
            raise DomainError(f"unknown treatment policy {policy!r}, expected one of {sorted(builders)}")
        return builders[policy](delta_max=parameters.get("delta_max"))

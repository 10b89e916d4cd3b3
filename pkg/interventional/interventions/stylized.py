"""The four stylized intervention families"""

import numpy as np

from interventional.exceptions import KinkError
from interventional.interventions.family import InterventionFamily


def _reject_cap(p0: np.ndarray, family: str) -> None:
    if np.any(p0 == 1):
        raise KinkError(f"{family} lambda' is undefined at the cap point p0=1")


class Additive(InterventionFamily):
    """Shift every propensity by delta: min{1, p0 + delta}"""

    family_name = "additive"
    weight_scheme = "ATE"

    def _pi_delta(self, p0: np.ndarray, delta: float) -> np.ndarray:
        return np.minimum(1.0, p0 + delta)

    def _lambda(self, p0: np.ndarray) -> np.ndarray:
        return (p0 < 1).astype(float)

    def _lambda_prime(self, p0: np.ndarray) -> np.ndarray:
        _reject_cap(p0, "additive")
        return np.zeros_like(p0)


class Multiplicative(InterventionFamily):
    """Scale every propensity by e^delta: min{1, p0 e^delta}"""

    family_name = "multiplicative"
    weight_scheme = "ATT"

    def _pi_delta(self, p0: np.ndarray, delta: float) -> np.ndarray:
        return np.minimum(1.0, p0 * np.exp(delta))

    def _lambda(self, p0: np.ndarray) -> np.ndarray:
        return np.where(p0 < 1, p0, 0.0)

    def _lambda_prime(self, p0: np.ndarray) -> np.ndarray:
        _reject_cap(p0, "multiplicative")
        return np.ones_like(p0)


class Equalizing(InterventionFamily):
    """Shrink the propensity of not being treated by e^-delta: 1 - (1 - p0) e^-delta"""

    family_name = "equalizing"
    weight_scheme = "ATU"

    def _pi_delta(self, p0: np.ndarray, delta: float) -> np.ndarray:
        return np.minimum(1.0, 1.0 - (1.0 - p0) * np.exp(-delta))

    def _lambda(self, p0: np.ndarray) -> np.ndarray:
        return 1.0 - p0

    def _lambda_prime(self, p0: np.ndarray) -> np.ndarray:
        return np.full_like(p0, -1.0)


class IPSI(InterventionFamily):
    """
    Incremental propensity score intervention: multiply the odds of treatment by e^delta.

    Units with p0 in {0, 1} are left unchanged.
    """

    family_name = "ipsi"
    weight_scheme = "ATO"

    def _pi_delta(self, p0: np.ndarray, delta: float) -> np.ndarray:
        scaled = np.exp(delta) * p0
        return scaled / (1.0 - p0 + scaled)

    def _lambda(self, p0: np.ndarray) -> np.ndarray:
        return p0 * (1.0 - p0)

    def _lambda_prime(self, p0: np.ndarray) -> np.ndarray:
        return 1.0 - 2.0 * p0


STYLIZED_FAMILIES = (Additive, Multiplicative, Equalizing, IPSI)

"""Intervention families

Each family maps the baseline propensity p0 to an intervened propensity pi_delta(p0) and exposes the
MIE weight lambda(p0) with its derivative. ``InterventionFamily.from_spec`` builds a family from its
config-file representation, e.g. ``{"family": "ipsi"}``.
"""

from .custom import CustomLambda
from .family import InterventionFamily
from .mtp import MTP
from .stylized import IPSI, STYLIZED_FAMILIES, Additive, Equalizing, Multiplicative

__all__ = [
    "InterventionFamily",
    "Additive",
    "Multiplicative",
    "Equalizing",
    "IPSI",
    "CustomLambda",
    "MTP",
    "STYLIZED_FAMILIES",
]

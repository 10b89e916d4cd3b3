"""MTE models and IE/MIE estimators under the latent-index instrumental-variable model"""

from interventional.iv.estimators import (
    MTEFit,
    estimate_ie_mte,
    estimate_mie_doubly_robust,
    estimate_mie_plugin,
    fit_mte,
)
from interventional.iv.liv import LocationShiftDensity, SemiparamMTEFit, fit_location_shift, fit_semiparametric_liv
from interventional.iv.roy import RoySwitchingModel, check_gradient, fit_normal_switching_mle, mte_normal

__all__ = [
    "LocationShiftDensity",
    "MTEFit",
    "RoySwitchingModel",
    "SemiparamMTEFit",
    "check_gradient",
    "estimate_ie_mte",
    "estimate_mie_doubly_robust",
    "estimate_mie_plugin",
    "fit_location_shift",
    "fit_mte",
    "fit_normal_switching_mle",
    "fit_semiparametric_liv",
    "mte_normal",
]

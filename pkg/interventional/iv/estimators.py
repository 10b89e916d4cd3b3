"""Plug-in, interval and doubly robust IE/MIE estimators built on a fitted MTE"""

import logging
from typing import Optional, Union

import numpy as np
from scipy.integrate import quad_vec

from interventional.config import Config
from interventional.data import Dataset, Estimand, EstimandKind, EstimateReport, Regime, require_valid
from interventional.exceptions import (
    DegenerateDensityError,
    DegenerateWeightsError,
    DomainError,
    EmptySampleError,
    SupportError,
)
from interventional.interventions import InterventionFamily
from interventional.iv.liv import LocationShiftDensity, SemiparamMTEFit, fit_location_shift, fit_semiparametric_liv
from interventional.iv.roy import RoySwitchingModel, fit_normal_switching_mle

logger = logging.getLogger(__name__)

MTEFit = Union[RoySwitchingModel, SemiparamMTEFit]

DEGENERATE_WEIGHT = 1e-10
QUADRATURE_TOLERANCE = 1e-8
SUPPORT_POLICIES = ("error", "drop")

MIE_LABEL = EstimandKind(Estimand.MIE, Regime.IV_LATENT_INDEX)


def fit_mte(dataset: Dataset, kind: str = "normal") -> MTEFit:
    """
    Fit the MTE of a dataset with instruments.

    Args:
        dataset (Dataset): The data
        kind (str): "normal" for the switching-regression MLE, "semiparametric" for local IV

    Returns:
        The fitted MTE model
    """
    if kind == RoySwitchingModel.kind:
        return fit_normal_switching_mle(dataset)
    if kind == SemiparamMTEFit.kind:
        return fit_semiparametric_liv(dataset)
    raise DomainError(f"unknown MTE model {kind!r}, expected normal or semiparametric")


def _normalized_weights(family: InterventionFamily, p0: np.ndarray) -> tuple[np.ndarray, float]:
    lam = np.asarray(family.lam(p0), dtype=float)
    mean = float(lam.mean())
    if mean < DEGENERATE_WEIGHT:
        raise DegenerateWeightsError(f"the mean lambda weight is {mean:.3g}, which is numerically zero")
    return lam / mean, mean


def _base_diagnostics(fit: MTEFit, p0: np.ndarray) -> dict[str, float]:
    diagnostics = {k: float(v) for k, v in fit.diagnostics.items()}
    diagnostics.update(min_p0=float(p0.min()), max_p0=float(p0.max()))
    return diagnostics


def estimate_mie_plugin(fit: MTEFit, dataset: Dataset, family: InterventionFamily) -> EstimateReport:
    """
    Plug-in MIE: the lambda-weighted mean of the fitted MTE at each row's fitted propensity.

    Args:
        fit: A fitted normal or semiparametric MTE
        dataset (Dataset): The data to average over
        family (InterventionFamily): The intervention family

    Returns:
        EstimateReport: The estimate, method "iv-plugin-normal" or "iv-plugin-semiparametric"

    Raises:
        DegenerateWeightsError: If the lambda weights average to numerically zero
    """
    require_valid(dataset, both_arms=False, instruments=True)
    p0 = fit.propensity(dataset)
    weights, mean_lambda = _normalized_weights(family, p0)
    effects = fit.mte(dataset.x, p0)
    point = float(np.mean(weights * effects))
    diagnostics = _base_diagnostics(fit, p0)
    diagnostics["mean_lambda"] = mean_lambda
    method = f"iv-plugin-{fit.kind}"
    return EstimateReport(MIE_LABEL.label(family.label), point, dataset.n, method, diagnostics=diagnostics)


def _evaluable(fit: MTEFit) -> tuple[float, float]:
    low, high = fit.support
    if fit.kind == RoySwitchingModel.kind:
        return float(np.nextafter(low, 1.0)), float(np.nextafter(high, 0.0))
    return low, high


def estimate_ie_mte(
    fit: MTEFit,
    dataset: Dataset,
    family: InterventionFamily,
    delta: float,
    on_support_violation: Optional[str] = None,
) -> EstimateReport:
    """
    IE(delta) as the ratio of the mean MTE integral over [p0, pi_delta(p0)] to the mean propensity shift.

    Each row's integral runs over t in [0, 1] with u = p0 + t (pi_delta - p0), by adaptive
    15-point Gauss-Kronrod quadrature vectorized over rows.

    Args:
        fit: A fitted normal or semiparametric MTE
        dataset (Dataset): The data to average over
        family (InterventionFamily): The intervention family
        delta (float): The intervention index, > 0
        on_support_violation (str): "error" (default Config.iv.on_support_violation) or "drop"

    Returns:
        EstimateReport: The estimate, method "iv-ie-normal" or "iv-ie-semiparametric"

    Raises:
        SupportError: If an integration interval leaves the fitted MTE's support, with the offending rows
    """
    kind = EstimandKind(Estimand.IE, Regime.IV_LATENT_INDEX, delta)
    policy = on_support_violation or Config.iv.on_support_violation
    if policy not in SUPPORT_POLICIES:
        raise DomainError(f"on_support_violation must be one of {SUPPORT_POLICIES}, got {policy!r}")
    require_valid(dataset, both_arms=False, instruments=True)

    p0 = fit.propensity(dataset)
    target = np.asarray(family.pi_delta(p0, delta), dtype=float)
    low, high = fit.support
    outside = (np.minimum(p0, target) < low) | (np.maximum(p0, target) > high)
    diagnostics = _base_diagnostics(fit, p0)
    x = dataset.x
    if np.any(outside):
        rows = np.flatnonzero(outside).tolist()
        if policy == "error":
            raise SupportError(
                f"{len(rows)} rows shift their propensity outside the MTE support [{low:.4g}, {high:.4g}]", rows
            )
        logger.warning("IE: dropping %d rows whose propensity shift leaves [%.4g, %.4g]", len(rows), low, high)
        keep = ~outside
        if not np.any(keep):
            raise EmptySampleError("every row shifts its propensity outside the MTE support")
        p0, target, x = p0[keep], target[keep], x[keep]
        diagnostics["support_dropped"] = float(len(rows))

    shift = target - p0
    if abs(float(shift.mean())) < DEGENERATE_WEIGHT:
        raise DegenerateWeightsError(f"the mean propensity shift at delta={delta:g} is numerically zero")
    moving = shift != 0
    bounds = _evaluable(fit)

    def integrand(t: float) -> np.ndarray:
        u = np.clip(p0[moving] + t * shift[moving], *bounds)
        return fit.mte(x[moving], u) * shift[moving]

    integrals, error = quad_vec(integrand, 0.0, 1.0, epsabs=QUADRATURE_TOLERANCE, norm="max", quadrature="gk15")
    point = float(np.sum(integrals) / np.sum(shift))
    diagnostics.update(mean_shift=float(shift.mean()), quadrature_error=float(error))
    return EstimateReport(kind.label(family.label), point, int(len(p0)), f"iv-ie-{fit.kind}", diagnostics=diagnostics)


def estimate_mie_doubly_robust(
    dataset: Dataset,
    family: InterventionFamily,
    fit: MTEFit,
    density: Optional[LocationShiftDensity] = None,
) -> EstimateReport:
    """
    Doubly robust MIE from the efficient influence function.

    mean(w dm/dp + l (Y - m)) with w = lambda / mean(lambda), dm/dp the fitted MTE at the fitted
    propensity, m the fitted E[Y | X, p0(Z)] and l = -lambda' / mean(lambda) - w dlog f(p | X)/dp.

    Args:
        dataset (Dataset): The data
        family (InterventionFamily): A family providing lambda'
        fit: A fitted normal or semiparametric MTE
        density (LocationShiftDensity): The location-shift model of the propensity given X,
            fitted on the spot with Config.iv.density when omitted

    Returns:
        EstimateReport: The estimate, method "iv-dr"

    Raises:
        DegenerateDensityError: If the propensity residuals have no spread
        MissingDerivativeError: If the family has no lambda'
    """
    require_valid(dataset, both_arms=False, instruments=True)
    p0 = fit.propensity(dataset)
    if density is None:
        density = fit_location_shift(dataset, p0)
    if density.degenerate:
        raise DegenerateDensityError(
            f"the propensity residual SD is {density.sigma_eps_hat:.2e}: the instruments do not move p0 given X"
        )
    weights, mean_lambda = _normalized_weights(family, p0)
    lam_prime = np.asarray(family.lam_prime(p0), dtype=float)
    l_term = -lam_prime / mean_lambda - weights * density.log_density_derivative()
    residual = dataset.y - fit.conditional_mean(dataset.x, p0)
    plugin = weights * fit.mte(dataset.x, p0)
    correction = l_term * residual
    point = float(np.mean(plugin + correction))

    diagnostics = _base_diagnostics(fit, p0)
    diagnostics.update(
        mean_lambda=mean_lambda,
        sigma_eps_hat=density.sigma_eps_hat,
        plugin_part=float(plugin.mean()),
        correction_part=float(correction.mean()),
    )
    logger.info("DR MIE: plug-in part %.4g, correction %.4g", plugin.mean(), correction.mean())
    return EstimateReport(MIE_LABEL.label(family.label), point, dataset.n, "iv-dr", diagnostics=diagnostics)

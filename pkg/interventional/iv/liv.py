"""
Semiparametric MTE by local instrumental variables, and the location-shift model of the propensity.

The MTE is separable: MTE(x, u) = (beta1 - beta0)'x + K'(u), where K collects the unobserved gain
heterogeneity (and the intercepts). It is fitted in four steps:

1. logistic propensity of A on Z;
2. local-linear residualization of Y, each X column and each X p column on the fitted propensity;
3. no-intercept OLS of the Y residual on the X and X p residuals, giving beta0 and beta1 - beta0;
4. local-quadratic regression of the partialed-out outcome on the propensity, giving K and K'.
"""

import logging
from dataclasses import dataclass, field
from typing import ClassVar, Optional, Sequence

import numpy as np
import statsmodels.api as sm
from scipy.interpolate import CubicSpline, PPoly

from interventional.config import Config
from interventional.data import Dataset, require_valid
from interventional.exceptions import DomainError, SupportError
from interventional.learners import (
    KernelDensityModel,
    LocalPolyFit,
    LogisticModel,
    fit_kernel_density,
    fit_local_poly,
    fit_logistic_irls,
    fit_ols,
    kernel_density_derivative,
    local_poly_eval,
)

logger = logging.getLogger(__name__)

MIN_SUPPORT_WIDTH = 0.05
K_GRID_SIZE = 401
DEGENERATE_SPREAD = 1e-8


@dataclass(frozen=True)
class SemiparamMTEFit:
    """
    A fitted semiparametric MTE.

    K' is tabulated from the local-quadratic fit on a grid over the support and interpolated by a
    cubic spline; K is the spline's antiderivative anchored at the local-quadratic level at the
    median propensity. The p-derivative of ``conditional_mean`` is therefore exactly ``mte``.

    Attributes:
        propensity_model: logistic regression of A on [1, Z]
        beta0_hat: coefficients of X in the untreated outcome
        beta_diff_hat: coefficients of X in the gain; zero for columns left out of the interaction
        kprime: the step-4 local-quadratic fit
        support: observed range of the fitted propensity
    """

    propensity_model: LogisticModel
    beta0_hat: np.ndarray
    beta_diff_hat: np.ndarray
    kprime: LocalPolyFit
    support: tuple[float, float]
    residual_bandwidth: float
    kprime_spline: CubicSpline
    k_antiderivative: PPoly
    k_offset: float
    diagnostics: dict[str, float] = field(default_factory=dict)

    kind: ClassVar[str] = "semiparametric"

    def propensity(self, dataset: Dataset) -> np.ndarray:
        """Fitted p0(Z) from the step-1 logistic regression"""
        return self.propensity_model.predict(dataset.z)

    def _check_support(self, u: np.ndarray) -> None:
        low, high = self.support
        outside = (u < low) | (u > high)
        if np.any(outside):
            rows = np.flatnonzero(np.broadcast_to(outside, np.shape(u))).tolist()
            raise SupportError(
                f"the semiparametric MTE is only evaluable on [{low:.4g}, {high:.4g}], {len(rows)} points are outside",
                rows,
            )

    def kprime_at(self, u: np.ndarray) -> np.ndarray:
        """K'(u) on the support"""
        u = np.asarray(u, dtype=float)
        self._check_support(u)
        return self.kprime_spline(u)

    def k_at(self, u: np.ndarray) -> np.ndarray:
        """K(u) on the support"""
        u = np.asarray(u, dtype=float)
        self._check_support(u)
        return self.k_offset + self.k_antiderivative(u)

    def mte(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """beta_diff'x + K'(u)"""
        return np.atleast_2d(x) @ self.beta_diff_hat + self.kprime_at(u)

    def conditional_mean(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        """E[Y | X=x, p0(Z)=p] = beta0'x + p beta_diff'x + K(p)"""
        x = np.atleast_2d(x)
        p = np.asarray(p, dtype=float)
        return x @ self.beta0_hat + p * (x @ self.beta_diff_hat) + self.k_at(p)


def fit_semiparametric_liv(
    dataset: Dataset,
    residual_bandwidth: Optional[float] = None,
    k_bandwidth: Optional[float] = None,
    interaction_columns: Optional[Sequence[int]] = None,
) -> SemiparamMTEFit:
    """
    Fit the semiparametric MTE in four steps.

    Args:
        dataset (Dataset): Valid data whose z holds excluded instruments
        residual_bandwidth (float): Step-2 bandwidth, default Config.iv.residual_bandwidth or Silverman's rule
        k_bandwidth (float): Step-4 bandwidth, default Config.iv.k_bandwidth or Silverman's rule
        interaction_columns (Sequence[int]): X columns whose effect varies with treatment,
            default all of them

    Returns:
        SemiparamMTEFit: The fitted MTE

    Raises:
        SupportError: If the fitted propensity spans less than 0.05
    """
    require_valid(dataset, instruments=True)
    residual_bandwidth = Config.iv.residual_bandwidth if residual_bandwidth is None else residual_bandwidth
    k_bandwidth = Config.iv.k_bandwidth if k_bandwidth is None else k_bandwidth
    d_x = dataset.x.shape[1]
    columns = list(range(d_x)) if interaction_columns is None else [int(c) for c in interaction_columns]
    if any(not 0 <= c < d_x for c in columns):
        raise DomainError(f"interaction columns {columns} are outside the {d_x} covariates")

    propensity_model = fit_logistic_irls(dataset.z, dataset.a, intercept=True)
    p = propensity_model.predict(dataset.z)
    low, high = float(p.min()), float(p.max())
    if high - low < MIN_SUPPORT_WIDTH:
        raise SupportError(f"the fitted propensity spans only [{low:.4g}, {high:.4g}], too little to smooth on")

    interactions = dataset.x[:, columns] * p[:, None]
    responses = np.column_stack([dataset.y, dataset.x, interactions])
    smoother = fit_local_poly(p, responses, degree=1, bandwidth=residual_bandwidth)
    fitted, _ = local_poly_eval(smoother, p)
    residuals = responses - fitted
    regression = fit_ols(residuals[:, 1:], residuals[:, 0])
    beta0_hat = regression.coefficients[:d_x]
    beta_diff_hat = np.zeros(d_x)
    beta_diff_hat[columns] = regression.coefficients[d_x:]

    partialed = dataset.y - dataset.x @ beta0_hat - p * (dataset.x @ beta_diff_hat)
    kprime = fit_local_poly(p, partialed, degree=2, bandwidth=k_bandwidth)
    grid = np.linspace(low, high, K_GRID_SIZE)
    _, slopes = local_poly_eval(kprime, grid)
    spline = CubicSpline(grid, slopes, extrapolate=False)
    antiderivative = spline.antiderivative()
    anchor = float(np.median(p))
    level, _ = local_poly_eval(kprime, np.array([anchor]))
    k_offset = float(level[0] - antiderivative(anchor))

    logger.info(
        "semiparametric MTE: support [%.4g, %.4g], bandwidths %.4g and %.4g",
        low,
        high,
        smoother.bandwidth,
        kprime.bandwidth,
    )
    return SemiparamMTEFit(
        propensity_model=propensity_model,
        beta0_hat=beta0_hat,
        beta_diff_hat=beta_diff_hat,
        kprime=kprime,
        support=(low, high),
        residual_bandwidth=smoother.bandwidth,
        kprime_spline=spline,
        k_antiderivative=antiderivative,
        k_offset=k_offset,
        diagnostics={
            "support_low": low,
            "support_high": high,
            "residual_bandwidth": smoother.bandwidth,
            "k_bandwidth": kprime.bandwidth,
            "propensity_converged": float(propensity_model.converged),
        },
    )


@dataclass(frozen=True)
class LocationShiftDensity:
    """
    p0(Z) = E[p0(Z) | X] + eps with eps independent of X.

    Attributes:
        mean_model: the logistic-link quasi-likelihood GLM of p0(Z) on [1, X]
        sigma_eps_hat: SD of the residuals
        residuals: p0(Z) - E[p0(Z) | X] per row
        density: "normal" or "kernel"
        kernel: the residual kernel density, for the kernel option
        kernel_score: phi'/phi of the kernel density at every residual, computed once at fit time

    The normal option's -eps/sigma^2 is the exact score only for normal residuals. It still
    removes an error in E[Y | X, p] that is linear in p under the additive family, but a
    propensity that piles up near 0 or 1 needs the kernel option.
    """

    mean_model: object
    sigma_eps_hat: float
    residuals: np.ndarray
    density: str = "normal"
    kernel: Optional[KernelDensityModel] = None
    kernel_score: Optional[np.ndarray] = None

    @property
    def degenerate(self) -> bool:
        """True when the propensity is (numerically) a function of X"""
        return self.sigma_eps_hat < DEGENERATE_SPREAD

    def log_density_derivative(self) -> np.ndarray:
        """d/dp log f(p | X) at every row's fitted propensity"""
        if self.density == "normal":
            return -self.residuals / self.sigma_eps_hat**2
        if self.kernel_score is not None:
            return self.kernel_score
        phi, phi_prime = kernel_density_derivative(self.kernel, self.residuals)
        return phi_prime / phi


def fit_location_shift(
    dataset: Dataset, fitted_p0: np.ndarray, density: Optional[str] = None
) -> LocationShiftDensity:
    """
    Fit the location-shift model of the fitted propensity given X.

    Args:
        dataset (Dataset): The data
        fitted_p0 (np.ndarray): Fitted propensities in (0, 1)
        density (str): "normal" (shortcut -eps/sigma^2) or "kernel", default Config.iv.density

    Returns:
        LocationShiftDensity: The fitted model; ``degenerate`` flags residuals without spread
    """
    density = density or Config.iv.density
    if density not in ("normal", "kernel"):
        raise DomainError(f"density must be normal or kernel, got {density!r}")
    fitted_p0 = np.asarray(fitted_p0, dtype=float)
    if np.any((fitted_p0 <= 0) | (fitted_p0 >= 1)):
        raise DomainError("fitted propensities must lie strictly inside (0, 1)")
    design = sm.add_constant(dataset.x, has_constant="add")
    mean_model = sm.GLM(fitted_p0, design, family=sm.families.Binomial()).fit()
    residuals = fitted_p0 - np.asarray(mean_model.fittedvalues)
    sigma = float(np.std(residuals, ddof=1))
    kernel, kernel_score = None, None
    if sigma < DEGENERATE_SPREAD:
        logger.warning("location-shift residuals have SD %.2e: the propensity does not vary given X", sigma)
    elif density == "kernel":
        kernel = fit_kernel_density(residuals)
        phi, phi_prime = kernel_density_derivative(kernel, residuals)
        kernel_score = phi_prime / phi
    return LocationShiftDensity(mean_model, sigma, residuals, density, kernel, kernel_score)

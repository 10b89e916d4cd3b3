"""Normal switching-regression (generalized Roy) model fitted by maximum likelihood"""

import logging
from dataclasses import dataclass, field
from typing import ClassVar, Optional

import numpy as np
import statsmodels.api as sm
from scipy.special import log_ndtr, ndtri
from scipy.stats import norm
from statsmodels.base.model import GenericLikelihoodModel
from statsmodels.tools.numdiff import approx_fprime

from interventional.config import Config
from interventional.data import Dataset, require_valid
from interventional.exceptions import ConvergenceError, DomainError
from interventional.learners import add_intercept, fit_ols

logger = logging.getLogger(__name__)

GRADIENT_STEP = 1e-5
GRADIENT_AGREEMENT = 1e-4
# accept a BFGS run that stopped on precision loss when the mean score is this small
SCORE_TOLERANCE = 1e-4


def _inverse_mills(argument: np.ndarray) -> np.ndarray:
    """phi(q) / Phi(q), stable in both tails"""
    return np.exp(norm.logpdf(argument) - log_ndtr(argument))


class NormalSwitchingLikelihood(GenericLikelihoodModel):
    """
    Likelihood of the normal switching regression with probit selection.

    For a row in arm a the outcome residual u_a = Y - beta_a'[1, X] is normal with SD sigma_a and
    correlation rho_a with the selection error V, and A = 1{gamma'[1, Z] >= V}. The row contributes
    the density of u_a times the conditional probability of its realized treatment.

    Parameters are ordered as beta0, beta1, gamma, log sigma0, atanh rho0, log sigma1, atanh rho1.
    """

    def __init__(self, endog, exog, selection_exog, treatment, **kwds):
        self.selection_exog = np.asarray(selection_exog, dtype=float)
        self.treatment = np.asarray(treatment, dtype=float)
        self.k_outcome = exog.shape[1]
        self.k_selection = self.selection_exog.shape[1]
        names = [f"beta1_{j}" for j in range(self.k_outcome)]
        names += [f"gamma_{j}" for j in range(self.k_selection)]
        names += ["log_sigma0", "atanh_rho0", "log_sigma1", "atanh_rho1"]
        super().__init__(endog, exog, extra_params_names=names, **kwds)

    def unpack(self, params: np.ndarray) -> tuple[np.ndarray, ...]:
        """Split a parameter vector into beta0, beta1, gamma and the four error parameters"""
        k, s = self.k_outcome, self.k_selection
        beta0, beta1, gamma = params[:k], params[k : 2 * k], params[2 * k : 2 * k + s]
        log_sigma0, atanh_rho0, log_sigma1, atanh_rho1 = params[2 * k + s :]
        return beta0, beta1, gamma, log_sigma0, atanh_rho0, log_sigma1, atanh_rho1

    def _arm_terms(self, params: np.ndarray):
        beta0, beta1, gamma, log_sigma0, atanh_rho0, log_sigma1, atanh_rho1 = self.unpack(params)
        treated = self.treatment == 1
        beta = np.where(treated[:, None], beta1, beta0)
        log_sigma = np.where(treated, log_sigma1, log_sigma0)
        rho = np.tanh(np.where(treated, atanh_rho1, atanh_rho0))
        sigma = np.exp(log_sigma)
        sign = np.where(treated, 1.0, -1.0)
        residual = (self.endog - np.sum(self.exog * beta, axis=1)) / sigma
        index = self.selection_exog @ gamma
        root = np.sqrt(1.0 - rho**2)
        argument = sign * (index - rho * residual) / root
        return treated, sigma, log_sigma, rho, sign, residual, index, root, argument

    def loglikeobs(self, params: np.ndarray) -> np.ndarray:
        _, _, log_sigma, _, _, residual, _, _, argument = self._arm_terms(params)
        return norm.logpdf(residual) - log_sigma + log_ndtr(argument)

    def score_obs(self, params: np.ndarray) -> np.ndarray:
        treated, sigma, _, rho, sign, residual, index, root, argument = self._arm_terms(params)
        mills = sign * _inverse_mills(argument)
        d_beta = (self.exog / sigma[:, None]) * (residual + mills * rho / root)[:, None]
        d_gamma = self.selection_exog * (mills / root)[:, None]
        d_log_sigma = -1.0 + residual**2 + mills * rho * residual / root
        d_atanh_rho = mills * (rho * index - residual) / root
        k = self.k_outcome
        scores = np.zeros((self.endog.shape[0], 2 * k + self.k_selection + 4))
        scores[:, :k] = np.where(treated[:, None], 0.0, d_beta)
        scores[:, k : 2 * k] = np.where(treated[:, None], d_beta, 0.0)
        scores[:, 2 * k : 2 * k + self.k_selection] = d_gamma
        offset = 2 * k + self.k_selection
        scores[:, offset] = np.where(treated, 0.0, d_log_sigma)
        scores[:, offset + 1] = np.where(treated, 0.0, d_atanh_rho)
        scores[:, offset + 2] = np.where(treated, d_log_sigma, 0.0)
        scores[:, offset + 3] = np.where(treated, d_atanh_rho, 0.0)
        return scores

    def score(self, params: np.ndarray) -> np.ndarray:
        return self.score_obs(params).sum(axis=0)


def check_gradient(likelihood: NormalSwitchingLikelihood, params: np.ndarray) -> float:
    """
    Largest relative disagreement between the analytic score and central differences.

    The relative error is measured against max(1, |numeric|) per coordinate.
    """
    analytic = likelihood.score(params)
    numeric = approx_fprime(params, likelihood.loglike, epsilon=GRADIENT_STEP, centered=True)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


@dataclass(frozen=True)
class RoySwitchingModel:
    """
    A fitted normal generalized Roy model.

    The selection error V is standard normal. ``sigma_eps`` and ``rho_eps_v`` describe the untreated
    outcome error, ``sigma_treated`` and ``rho_treated_v`` the treated one (eps + eta). Only their
    combination ``sigma_eta_v`` = Cov(eta, V) enters the MTE.

    Attributes:
        beta0, beta1: outcome coefficients on [1, X]
        gamma: selection coefficients on [1, Z]
        x_columns_in_z: where the X columns sit in Z
        covariance: covariance of the raw (transformed) parameter vector
    """

    beta0: np.ndarray
    beta1: np.ndarray
    gamma: np.ndarray
    sigma_eps: float
    rho_eps_v: float
    sigma_treated: float
    rho_treated_v: float
    log_likelihood: float
    converged: bool
    n_iterations: int
    covariance: np.ndarray
    x_columns_in_z: tuple[int, ...] = ()
    diagnostics: dict[str, float] = field(default_factory=dict)

    kind: ClassVar[str] = "normal"

    @property
    def sigma_eta_v(self) -> float:
        """Cov(eta, V) = rho_treated_v sigma_treated - rho_eps_v sigma_eps"""
        return self.rho_treated_v * self.sigma_treated - self.rho_eps_v * self.sigma_eps

    @property
    def sigma_eta_v_se(self) -> float:
        """Delta-method standard error of sigma_eta_v"""
        tail = self.covariance[-4:, -4:]
        gradient = np.array(
            [
                -self.rho_eps_v * self.sigma_eps,
                -(1 - self.rho_eps_v**2) * self.sigma_eps,
                self.rho_treated_v * self.sigma_treated,
                (1 - self.rho_treated_v**2) * self.sigma_treated,
            ]
        )
        return float(np.sqrt(max(gradient @ tail @ gradient, 0.0)))

    @property
    def std_errors(self) -> np.ndarray:
        """Standard errors of the raw parameter vector"""
        return np.sqrt(np.diag(self.covariance))

    @property
    def beta_difference(self) -> np.ndarray:
        """beta1 - beta0"""
        return self.beta1 - self.beta0

    @property
    def beta_difference_se(self) -> np.ndarray:
        """Standard errors of beta1 - beta0 from the beta0 and beta1 covariance blocks"""
        k = self.beta0.size
        control = np.diag(self.covariance[:k, :k])
        treated = np.diag(self.covariance[k : 2 * k, k : 2 * k])
        cross = np.diag(self.covariance[:k, k : 2 * k])
        return np.sqrt(np.clip(control + treated - 2 * cross, 0.0, None))

    @property
    def support(self) -> tuple[float, float]:
        """The normal MTE is defined on the whole open unit interval"""
        return 0.0, 1.0

    def propensity(self, dataset: Dataset) -> np.ndarray:
        """Fitted p0(Z) = Phi(gamma'[1, Z])"""
        return norm.cdf(add_intercept(dataset.z) @ self.gamma)

    def mte(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """The fitted marginal treatment effect"""
        return mte_normal(self, x, u)

    def conditional_mean(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        """E[Y | X=x, p0(Z)=p] = beta0'x + p (beta1 - beta0)'x - sigma_eta_v phi(Phi^-1(p))"""
        design = add_intercept(x)
        p = np.asarray(p, dtype=float)
        return design @ self.beta0 + p * (design @ self.beta_difference) - self.sigma_eta_v * norm.pdf(ndtri(p))


def mte_normal(model: RoySwitchingModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    The marginal treatment effect of a fitted normal Roy model.

    (beta1 - beta0)'[1, x] + sigma_eta_v Phi^-1(u)

    Args:
        model (RoySwitchingModel): The fitted model
        x (np.ndarray): Covariate rows (n x d_x), no intercept
        u (np.ndarray): Unobserved resistance quantiles in (0, 1), one per row or a scalar

    Returns:
        np.ndarray: The MTE per row

    Raises:
        DomainError: If any u lies outside (0, 1)
    """
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise DomainError("the MTE is defined for u strictly inside (0, 1)")
    return add_intercept(x) @ model.beta_difference + model.sigma_eta_v * ndtri(u)


def _start_parameters(dataset: Dataset, outcome_design: np.ndarray, selection_design: np.ndarray) -> np.ndarray:
    treated = dataset.a == 1
    control_fit = fit_ols(outcome_design[~treated], dataset.y[~treated])
    treated_fit = fit_ols(outcome_design[treated], dataset.y[treated])
    probit = sm.Probit(dataset.a, selection_design).fit(disp=0)
    return np.concatenate(
        [
            control_fit.coefficients,
            treated_fit.coefficients,
            np.asarray(probit.params),
            [0.5 * np.log(control_fit.residual_variance), 0.0, 0.5 * np.log(treated_fit.residual_variance), 0.0],
        ]
    )


def fit_normal_switching_mle(dataset: Dataset, max_iter: Optional[int] = None) -> RoySwitchingModel:
    """
    Fit the normal switching regression by maximum likelihood.

    Starts from per-arm OLS and a probit of A on Z, checks the analytic score against central
    differences at the start, then runs BFGS. Correlations are optimized on the inverse-tanh scale;
    a correlation that ends beyond Config.iv.rho_boundary is clamped and flagged.

    Args:
        dataset (Dataset): Valid data whose z holds excluded instruments
        max_iter (int): BFGS iteration limit, default Config.iv.mle_max_iter

    Returns:
        RoySwitchingModel: The fitted model

    Raises:
        ConvergenceError: If the optimizer stops away from a stationary point
    """
    require_valid(dataset, instruments=True)
    max_iter = Config.iv.mle_max_iter if max_iter is None else max_iter
    outcome_design = add_intercept(dataset.x)
    selection_design = add_intercept(dataset.z)
    likelihood = NormalSwitchingLikelihood(dataset.y, outcome_design, selection_design, dataset.a)
    start = _start_parameters(dataset, outcome_design, selection_design)

    diagnostics: dict[str, float] = {}
    disagreement = check_gradient(likelihood, start)
    diagnostics["gradient_check"] = disagreement
    if disagreement > GRADIENT_AGREEMENT:
        logger.warning("analytic score differs from central differences by %.2e", disagreement)

    result = likelihood.fit(start_params=start, method="bfgs", maxiter=max_iter, disp=0)
    params = np.asarray(result.params)
    mean_score = float(np.max(np.abs(likelihood.score(params))) / dataset.n)
    converged = bool(result.mle_retvals.get("converged", False)) or mean_score < SCORE_TOLERANCE
    if not converged:
        raise ConvergenceError(
            f"switching-regression MLE did not converge after {max_iter} iterations (mean score {mean_score:.2e})"
        )
    iterations = int(result.mle_retvals.get("iterations", result.mle_retvals.get("gcalls", 0)))
    logger.info("switching-regression MLE converged: log-likelihood %.6g after %d iterations", result.llf, iterations)

    beta0, beta1, gamma, log_sigma0, atanh_rho0, log_sigma1, atanh_rho1 = likelihood.unpack(params)
    bound = Config.iv.rho_boundary
    rho0, rho1 = float(np.tanh(atanh_rho0)), float(np.tanh(atanh_rho1))
    if max(abs(rho0), abs(rho1)) > bound:
        logger.warning("a correlation with the selection error reached the boundary, clamping to %g", bound)
        diagnostics["rho_boundary"] = 1.0
        rho0, rho1 = float(np.clip(rho0, -bound, bound)), float(np.clip(rho1, -bound, bound))

    try:
        covariance = np.asarray(result.cov_params())
    except (np.linalg.LinAlgError, ValueError):
        covariance = np.full((params.size, params.size), np.nan)
    diagnostics.update(log_likelihood=float(result.llf), mle_converged=1.0, mle_iterations=float(iterations))
    return RoySwitchingModel(
        beta0=beta0,
        beta1=beta1,
        gamma=gamma,
        sigma_eps=float(np.exp(log_sigma0)),
        rho_eps_v=rho0,
        sigma_treated=float(np.exp(log_sigma1)),
        rho_treated_v=rho1,
        log_likelihood=float(result.llf),
        converged=converged,
        n_iterations=iterations,
        covariance=covariance,
        x_columns_in_z=tuple(dataset.x_columns_in_z or ()),
        diagnostics=diagnostics,
    )

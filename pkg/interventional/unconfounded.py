"""
IE and MIE estimation when treatment is unconfounded given the covariates.

Provides regression imputation, Hajek weighting, Robinson's partialing-out estimator, cross-fitted
augmented IPW and propensity trimming. Every estimator validates its dataset first and returns an
EstimateReport whose diagnostics carry the propensity range, clip counts, convergence flags and,
when trimming is on, the trim bounds and counts.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

import numpy as np

from interventional.config import Config
from interventional.data import Dataset, Estimand, EstimandKind, EstimateReport, Regime, require_valid
from interventional.exceptions import DegenerateWeightsError, DomainError, EmptySampleError, ZeroDenominatorError
from interventional.inference import FoldPlan, cross_fit, eif_variance
from interventional.interventions import InterventionFamily
from interventional.learners import LinearModel, LogisticModel, fit_logistic_irls, fit_ols

logger = logging.getLogger(__name__)

DEGENERATE_WEIGHT = 1e-10
OutcomeModel = Union[LinearModel, LogisticModel]


class WeightScheme(Enum):
    """The weighting schemes whose MIE is a classical estimand"""

    ATE = "ATE"
    ATT = "ATT"
    ATU = "ATU"
    ATO = "ATO"

    @property
    def family_name(self) -> str:
        """The stylized intervention family with this MIE"""
        return {"ATE": "additive", "ATT": "multiplicative", "ATU": "equalizing", "ATO": "ipsi"}[self.value]

    def weights(self, p0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unnormalized (treated, control) weights as functions of the propensity"""
        if self is WeightScheme.ATE:
            return 1.0 / p0, 1.0 / (1.0 - p0)
        if self is WeightScheme.ATT:
            return np.ones_like(p0), p0 / (1.0 - p0)
        if self is WeightScheme.ATU:
            return (1.0 - p0) / p0, np.ones_like(p0)
        return 1.0 - p0, p0.copy()


def _is_binary(y: np.ndarray) -> bool:
    return bool(np.all((y == 0) | (y == 1)) and 0 < y.sum() < y.size)


def _resolve_outcome_type(y: np.ndarray, outcome_type: Optional[str]) -> bool:
    outcome_type = outcome_type or Config.estimation.outcome_type
    if outcome_type == "auto":
        return _is_binary(y)
    if outcome_type not in ("binary", "continuous"):
        raise DomainError(f"outcome_type must be auto, binary or continuous, got {outcome_type!r}")
    return outcome_type == "binary"


def _fit_outcome(design: np.ndarray, y: np.ndarray, binary: bool) -> OutcomeModel:
    if binary:
        return fit_logistic_irls(design, y, intercept=True)
    return fit_ols(design, y, intercept=True)


@dataclass(frozen=True)
class UnconfoundedFit:
    """
    Fitted propensity and outcome models with their in-sample predictions.

    With the pooled outcome model a single regression of Y on (A, X) replaces the two arm
    regressions and is stored as ``outcome_pooled``.
    """

    propensity: LogisticModel
    outcome_treated: Optional[OutcomeModel]
    outcome_control: Optional[OutcomeModel]
    fitted_p0: np.ndarray
    fitted_mu1: np.ndarray
    fitted_mu0: np.ndarray
    floor: float
    outcome_pooled: Optional[OutcomeModel] = None
    trimming_bounds: Optional[tuple[float, float]] = None
    diagnostics: dict[str, float] = field(default_factory=dict)

    @property
    def cate(self) -> np.ndarray:
        """Fitted conditional effects mu1 - mu0"""
        return self.fitted_mu1 - self.fitted_mu0

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Propensity (clipped to the floor) and both outcome regressions at new covariate rows"""
        p0 = np.clip(self.propensity.predict(x), self.floor, 1 - self.floor)
        if self.outcome_pooled is not None:
            ones = np.ones((x.shape[0], 1))
            mu1 = self.outcome_pooled.predict(np.column_stack([ones, x]))
            mu0 = self.outcome_pooled.predict(np.column_stack([np.zeros_like(ones), x]))
        else:
            mu1 = self.outcome_treated.predict(x)
            mu0 = self.outcome_control.predict(x)
        return p0, mu1, mu0


def fit_propensity(dataset: Dataset, floor: Optional[float] = None) -> tuple[LogisticModel, np.ndarray, int]:
    """
    Logistic regression of treatment on the covariates (with intercept).

    Returns:
        tuple: the model, the fitted propensities clipped to [floor, 1 - floor] and the clip count
    """
    floor = Config.estimation.probability_floor if floor is None else floor
    model = fit_logistic_irls(dataset.x, dataset.a, intercept=True)
    raw = model.predict(dataset.x)
    clipped = int(np.sum((raw < floor) | (raw > 1 - floor)))
    if clipped:
        logger.warning("%d fitted propensities were clipped to [%g, %g]", clipped, floor, 1 - floor)
    return model, np.clip(raw, floor, 1 - floor), clipped


def fit_unconfounded(
    dataset: Dataset,
    outcome_model: Optional[str] = None,
    outcome_type: Optional[str] = None,
    floor: Optional[float] = None,
) -> UnconfoundedFit:
    """
    Fit the propensity model and the outcome regressions.

    Args:
        dataset (Dataset): Valid data with both arms
        outcome_model (str): "separate" (one regression per arm) or "pooled" (Y on A and X),
            default Config.estimation.outcome_model
        outcome_type (str): "auto", "binary" or "continuous", default Config.estimation.outcome_type;
            binary outcomes use logistic regressions
        floor (float): Probability floor, default Config.estimation.probability_floor

    Returns:
        UnconfoundedFit: The fitted nuisances
    """
    require_valid(dataset)
    floor = Config.estimation.probability_floor if floor is None else floor
    outcome_model = outcome_model or Config.estimation.outcome_model
    binary = _resolve_outcome_type(dataset.y, outcome_type)
    propensity, p0, clipped = fit_propensity(dataset, floor)

    treated = dataset.a == 1
    outcome_treated = outcome_control = outcome_pooled = None
    if outcome_model == "pooled":
        outcome_pooled = _fit_outcome(np.column_stack([dataset.a, dataset.x]), dataset.y, binary)
    elif outcome_model == "separate":
        outcome_treated = _fit_outcome(dataset.x[treated], dataset.y[treated], binary)
        outcome_control = _fit_outcome(dataset.x[~treated], dataset.y[~treated], binary)
    else:
        raise DomainError(f"outcome_model must be separate or pooled, got {outcome_model!r}")

    fit = UnconfoundedFit(
        propensity,
        outcome_treated,
        outcome_control,
        p0,
        np.empty(0),
        np.empty(0),
        floor,
        outcome_pooled=outcome_pooled,
    )
    _, mu1, mu0 = fit.predict(dataset.x)
    outcomes = [m for m in (outcome_treated, outcome_control, outcome_pooled) if isinstance(m, LogisticModel)]
    diagnostics = {
        "min_p0": float(p0.min()),
        "max_p0": float(p0.max()),
        "clipped": float(clipped),
        "propensity_converged": float(propensity.converged),
        "ridge_used": float(propensity.ridge_used or any(m.ridge_used for m in outcomes)),
    }
    if outcomes:
        diagnostics["outcome_converged"] = float(all(m.converged for m in outcomes))
    logger.info(
        "fitted unconfounded nuisances on %d rows (%s outcome model, %s outcome)",
        dataset.n,
        outcome_model,
        "binary" if binary else "continuous",
    )
    return replace(fit, fitted_mu1=mu1, fitted_mu0=mu0, diagnostics=diagnostics)


def trim_by_propensity(dataset: Dataset, fitted_p0: np.ndarray) -> tuple[Dataset, tuple[float, float]]:
    """
    Keep the rows whose propensity lies between the smallest treated and the largest control propensity.

    Args:
        dataset (Dataset): The data
        fitted_p0 (np.ndarray): Fitted propensities of its rows

    Returns:
        tuple: the trimmed Dataset and the (low, high) bounds

    Raises:
        EmptySampleError: If the interval is empty or keeps no rows
    """
    fitted_p0 = np.asarray(fitted_p0, dtype=float)
    treated = dataset.a == 1
    if not treated.any() or treated.all():
        raise EmptySampleError("trimming needs treated and control rows")
    low = float(fitted_p0[treated].min())
    high = float(fitted_p0[~treated].max())
    keep = (fitted_p0 >= low) & (fitted_p0 <= high)
    if low > high or not keep.any():
        raise EmptySampleError(f"the propensity overlap interval [{low:.4g}, {high:.4g}] keeps no rows")
    logger.info("trimmed %d of %d rows outside [%.4g, %.4g]", int((~keep).sum()), dataset.n, low, high)
    return dataset.subset(np.flatnonzero(keep)), (low, high)


def _apply_trim(dataset: Dataset, trim: Optional[bool]) -> tuple[Dataset, dict[str, float]]:
    """Trim on a freshly fitted propensity when requested, returning the trim diagnostics"""
    trim = Config.estimation.trim if trim is None else trim
    if not trim:
        return dataset, {}
    _, p0, _ = fit_propensity(dataset)
    trimmed, (low, high) = trim_by_propensity(dataset, p0)
    return trimmed, {"trim_low": low, "trim_high": high, "trimmed": float(dataset.n - trimmed.n)}


@dataclass(frozen=True)
class _Prepared:
    dataset: Dataset
    fit: UnconfoundedFit
    diagnostics: dict[str, float]


def _prepare(
    dataset: Dataset,
    trim: Optional[bool],
    outcome_model: Optional[str] = None,
    outcome_type: Optional[str] = None,
) -> _Prepared:
    require_valid(dataset)
    dataset, diagnostics = _apply_trim(dataset, trim)
    fit = fit_unconfounded(dataset, outcome_model, outcome_type)
    if "trim_low" in diagnostics:
        fit = replace(fit, trimming_bounds=(diagnostics["trim_low"], diagnostics["trim_high"]))
    diagnostics.update(fit.diagnostics)
    return _Prepared(dataset, fit, diagnostics)


def _mie_label(family_name: str) -> str:
    return EstimandKind(Estimand.MIE, Regime.UNCONFOUNDED).label(family_name)


def _weighted_mean(weights: np.ndarray, values: np.ndarray, n: int) -> float:
    total = float(np.sum(weights))
    if total < DEGENERATE_WEIGHT * n:
        raise DegenerateWeightsError(f"the weights sum to {total:.3g}, which is numerically zero for {n} rows")
    return float(np.sum(weights * values) / total)


def estimate_mie_ri(
    dataset: Dataset,
    family: InterventionFamily,
    trim: Optional[bool] = None,
    outcome_model: Optional[str] = None,
    outcome_type: Optional[str] = None,
) -> EstimateReport:
    """
    Regression-imputation estimate of the MIE.

    The lambda(p0)-weighted mean of the fitted conditional effects mu1(X) - mu0(X).

    Raises:
        DegenerateWeightsError: If the lambda weights sum to numerically zero
    """
    prepared = _prepare(dataset, trim, outcome_model, outcome_type)
    fit = prepared.fit
    weights = np.asarray(family.lam(fit.fitted_p0))
    point = _weighted_mean(weights, fit.cate, prepared.dataset.n)
    return EstimateReport(
        _mie_label(family.label), point, prepared.dataset.n, "ri", diagnostics=prepared.diagnostics
    )


def estimate_ie(
    dataset: Dataset,
    family: InterventionFamily,
    delta: float,
    trim: Optional[bool] = None,
    outcome_model: Optional[str] = None,
    outcome_type: Optional[str] = None,
) -> EstimateReport:
    """
    Plug-in estimate of IE(delta): the conditional effects weighted by pi_delta(p0) - p0.

    Rows whose pi_delta is capped at 1 keep their capped value.
    """
    kind = EstimandKind(Estimand.IE, Regime.UNCONFOUNDED, delta)
    prepared = _prepare(dataset, trim, outcome_model, outcome_type)
    fit = prepared.fit
    weights = np.asarray(family.pi_delta(fit.fitted_p0, delta)) - fit.fitted_p0
    point = _weighted_mean(weights, fit.cate, prepared.dataset.n)
    return EstimateReport(
        kind.label(family.label), point, prepared.dataset.n, "ie-plugin", diagnostics=prepared.diagnostics
    )


def estimate_ipw(
    dataset: Dataset,
    scheme: Union[WeightScheme, str],
    trim: Optional[bool] = None,
) -> EstimateReport:
    """
    Hajek (normalized) weighting estimate of the ATE, ATT, ATU or ATO.

    Each arm's weighted outcome mean is normalized by the arm's weight total. A normalized weight
    above Config.estimation.extreme_weight is reported in the diagnostics.
    """
    scheme = WeightScheme(scheme)
    require_valid(dataset)
    dataset, diagnostics = _apply_trim(dataset, trim)
    propensity, p0, clipped = fit_propensity(dataset)
    diagnostics.update(
        min_p0=float(p0.min()),
        max_p0=float(p0.max()),
        clipped=float(clipped),
        propensity_converged=float(propensity.converged),
        ridge_used=float(propensity.ridge_used),
    )

    treated = dataset.a == 1
    weight_treated, weight_control = scheme.weights(p0)
    weight_treated = np.where(treated, weight_treated, 0.0)
    weight_control = np.where(treated, 0.0, weight_control)
    mean_treated = _weighted_mean(weight_treated, dataset.y, dataset.n)
    mean_control = _weighted_mean(weight_control, dataset.y, dataset.n)

    largest = max(
        float(weight_treated.max() / weight_treated.sum()), float(weight_control.max() / weight_control.sum())
    )
    diagnostics["max_normalized_weight"] = largest
    if largest > Config.estimation.extreme_weight:
        diagnostics["extreme_weights"] = 1.0
        logger.warning("IPW %s: a single row carries %.1f%% of its arm's weight", scheme.value, 100 * largest)
    return EstimateReport(
        _mie_label(scheme.family_name), mean_treated - mean_control, dataset.n, "ipw", diagnostics=diagnostics
    )


def _residual_nuisances(binary: bool):
    def fit_predict(train: Dataset, test: Dataset) -> np.ndarray:
        treatment = fit_logistic_irls(train.x, train.a, intercept=True)
        outcome = _fit_outcome(train.x, train.y, binary)
        return np.column_stack([outcome.predict(test.x), treatment.predict(test.x)])

    return fit_predict


def estimate_robinson(
    dataset: Dataset,
    crossfit_folds: Optional[int] = None,
    seed: int = 0,
    trim: Optional[bool] = None,
    outcome_type: Optional[str] = None,
    threads: int = 1,
) -> EstimateReport:
    """
    Robinson's partialing-out estimator, which targets the overlap-weighted effect (ATO).

    Regresses the outcome residual Y - E[Y|X] on the treatment residual A - E[A|X]. With two or
    more folds the nuisances are cross-fitted. The standard error comes from the estimated
    influence function.

    Args:
        dataset (Dataset): Valid data with both arms
        crossfit_folds (int): Number of folds, default Config.estimation.crossfit_folds; 1 disables cross-fitting
        seed (int): Seed of the fold assignment
        trim (bool): Trim on the propensity first, default Config.estimation.trim
        outcome_type (str): "auto", "binary" or "continuous"
        threads (int): Folds fitted concurrently

    Returns:
        EstimateReport: The estimate with its influence-function SE

    Raises:
        ZeroDenominatorError: If the treatment residuals have no variation
    """
    require_valid(dataset)
    dataset, diagnostics = _apply_trim(dataset, trim)
    plan = FoldPlan(crossfit_folds, seed)
    binary = _resolve_outcome_type(dataset.y, outcome_type)
    nuisances = cross_fit(dataset, plan, _residual_nuisances(binary), threads)
    residual_y = dataset.y - nuisances[:, 0]
    residual_a = dataset.a - nuisances[:, 1]
    denominator = float(residual_a @ residual_a)
    if denominator < DEGENERATE_WEIGHT:
        raise ZeroDenominatorError(f"the treatment residuals sum of squares is {denominator:.3g}")
    point = float(residual_y @ residual_a / denominator)
    scores = residual_a * (residual_y - point * residual_a) / np.mean(residual_a**2)
    diagnostics.update(
        folds=float(plan.folds), min_p0=float(nuisances[:, 1].min()), max_p0=float(nuisances[:, 1].max())
    )
    report = EstimateReport(_mie_label("ipsi"), point, dataset.n, "robinson", seed=seed, diagnostics=diagnostics)
    return report.with_inference(eif_variance(scores))


def _aipw_nuisances(outcome_model: Optional[str], outcome_type: Optional[str]):
    def fit_predict(train: Dataset, test: Dataset) -> np.ndarray:
        fit = fit_unconfounded(train, outcome_model, outcome_type)
        return np.column_stack(fit.predict(test.x))

    return fit_predict


def aipw_scores(
    scheme: WeightScheme, a: np.ndarray, y: np.ndarray, p0: np.ndarray, mu1: np.ndarray, mu0: np.ndarray
) -> tuple[float, np.ndarray]:
    """
    Augmented IPW point estimate and influence scores.

    Returns:
        tuple: the estimate and the per-row influence scores
    """
    if scheme is WeightScheme.ATE:
        phi = mu1 - mu0 + a * (y - mu1) / p0 - (1 - a) * (y - mu0) / (1 - p0)
        point = float(np.mean(phi))
        return point, phi - point
    if scheme is WeightScheme.ATT:
        share = float(np.mean(a))
        numerator = a * (y - mu0) - (1 - a) * p0 / (1 - p0) * (y - mu0)
        point = float(np.mean(numerator) / share)
        return point, (numerator - a * point) / share
    if scheme is WeightScheme.ATU:
        share = float(np.mean(1 - a))
        numerator = (1 - a) * (mu1 - y) + a * (1 - p0) / p0 * (y - mu1)
        point = float(np.mean(numerator) / share)
        return point, (numerator - (1 - a) * point) / share
    raise DomainError(f"augmented IPW covers ATE, ATT and ATU, got {scheme.value}")


def estimate_aipw(
    dataset: Dataset,
    scheme: Union[WeightScheme, str],
    crossfit_folds: Optional[int] = None,
    seed: int = 0,
    trim: Optional[bool] = None,
    outcome_model: Optional[str] = None,
    outcome_type: Optional[str] = None,
    threads: int = 1,
) -> EstimateReport:
    """
    Cross-fitted augmented IPW estimate of the ATE, ATT or ATU with its influence-function SE.

    The ATT and ATU scores put the propensity odds on the opposite arm only.
    """
    scheme = WeightScheme(scheme)
    if scheme is WeightScheme.ATO:
        raise DomainError("augmented IPW covers ATE, ATT and ATU; use estimate_robinson for ATO")
    require_valid(dataset)
    dataset, diagnostics = _apply_trim(dataset, trim)
    plan = FoldPlan(crossfit_folds, seed)
    nuisances = cross_fit(dataset, plan, _aipw_nuisances(outcome_model, outcome_type), threads)
    p0, mu1, mu0 = nuisances[:, 0], nuisances[:, 1], nuisances[:, 2]
    point, scores = aipw_scores(scheme, dataset.a, dataset.y, p0, mu1, mu0)
    diagnostics.update(folds=float(plan.folds), min_p0=float(p0.min()), max_p0=float(p0.max()))
    report = EstimateReport(
        _mie_label(scheme.family_name), point, dataset.n, "aipw", seed=seed, diagnostics=diagnostics
    )
    return report.with_inference(eif_variance(scores))

"""Bootstrap, influence-function variance and cross-fitting folds"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from interventional.config import Config
from interventional.data import Dataset
from interventional.exceptions import ExcessiveDropError, FoldError, InterventionalError
from interventional.rng import stream

logger = logging.getLogger(__name__)

Estimator = Callable[[Dataset], float]
FitPredict = Callable[[Dataset, Dataset], np.ndarray]


class CIMethod(Enum):
    """How bootstrap confidence intervals are formed"""

    PERCENTILE = "percentile"
    NORMAL = "normal"


@dataclass(frozen=True)
class BootstrapPlan:
    """
    Settings of a nonparametric bootstrap.

    Unset fields take their values from ``Config.bootstrap``.
    """

    seed: int = 0
    replications: Optional[int] = None
    level: Optional[float] = None
    ci_method: Optional[CIMethod] = None
    max_drop_fraction: Optional[float] = None
    threads: int = 1

    def __post_init__(self) -> None:
        defaults = Config.bootstrap
        if self.replications is None:
            object.__setattr__(self, "replications", int(defaults.replications))
        if self.level is None:
            object.__setattr__(self, "level", float(defaults.level))
        if self.ci_method is None:
            object.__setattr__(self, "ci_method", CIMethod(defaults.ci_method))
        elif not isinstance(self.ci_method, CIMethod):
            object.__setattr__(self, "ci_method", CIMethod(self.ci_method))
        if self.max_drop_fraction is None:
            object.__setattr__(self, "max_drop_fraction", float(defaults.max_drop_fraction))
        if self.replications < 2:
            raise ValueError(f"the bootstrap needs at least 2 replications, got {self.replications}")
        if not 0 < self.level < 1:
            raise ValueError(f"confidence level must lie in (0, 1), got {self.level}")


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate estimates and their summaries"""

    point: float
    std_error: float
    ci: tuple[float, float]
    replicates: np.ndarray
    dropped: int


def _replicate(estimator: Estimator, dataset: Dataset, seed: int, index: int) -> Optional[float]:
    rows = stream(seed, "bootstrap", index).integers(0, dataset.n, size=dataset.n)
    try:
        value = float(estimator(dataset.subset(rows)))
    except (InterventionalError, ValueError, ArithmeticError) as error:
        logger.info("bootstrap replicate %d dropped: %s: %s", index, type(error).__name__, error)
        return None
    if not np.isfinite(value):
        logger.info("bootstrap replicate %d dropped: non-finite estimate", index)
        return None
    return value


def bootstrap(
    estimator: Estimator, dataset: Dataset, plan: BootstrapPlan, point: Optional[float] = None
) -> BootstrapResult:
    """
    Nonparametric (case-resampling) bootstrap of an estimator.

    Replicate b resamples rows from its own random stream, so the set of replicate estimates
    depends only on the dataset and the plan, not on the number of threads. A replicate is dropped
    when its estimate is not finite or the estimator raises an InterventionalError, a ValueError
    (numpy's LinAlgError and scipy's input checks included) or an ArithmeticError; any other
    exception aborts the bootstrap.

    Args:
        estimator (Callable): Maps a Dataset to a point estimate; refits every nuisance model
        dataset (Dataset): The observed data
        plan (BootstrapPlan): Replications, seed, level and CI method
        point (float): The full-sample estimate, computed when not given

    Returns:
        BootstrapResult: SE (sample SD of the replicates), CI and the sorted replicates

    Raises:
        ExcessiveDropError: If more than max_drop_fraction of the replicates fail
    """
    if point is None:
        point = float(estimator(dataset))
    outcomes = Parallel(n_jobs=plan.threads, prefer="threads")(
        delayed(_replicate)(estimator, dataset, plan.seed, index) for index in range(plan.replications)
    )
    replicates = np.sort(np.array([value for value in outcomes if value is not None], dtype=float))
    dropped = plan.replications - replicates.size
    if dropped > plan.max_drop_fraction * plan.replications or replicates.size < 2:
        raise ExcessiveDropError(
            f"{dropped} of {plan.replications} bootstrap replicates failed, "
            f"at most {plan.max_drop_fraction:.0%} are allowed"
        )
    if dropped:
        logger.warning("%d of %d bootstrap replicates were dropped", dropped, plan.replications)

    if np.ptp(replicates) == 0:
        std_error = 0.0
    else:
        std_error = float(np.std(replicates, ddof=1))
    alpha = 1 - plan.level
    if plan.ci_method is CIMethod.PERCENTILE:
        lower, upper = np.quantile(replicates, [alpha / 2, 1 - alpha / 2])
        ci = (float(lower), float(upper))
    else:
        half_width = norm.ppf(1 - alpha / 2) * std_error
        ci = (point - half_width, point + half_width)
    logger.info("bootstrap: %d replicates, SE %.4g", replicates.size, std_error)
    return BootstrapResult(point, std_error, ci, replicates, dropped)


def eif_variance(scores: np.ndarray) -> float:
    """
    Standard error of an estimator from its estimated influence-function scores.

    Args:
        scores (np.ndarray): Per-row influence scores, centred at the estimate

    Returns:
        float: sqrt(mean(score^2) / n)
    """
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0 or not np.all(np.isfinite(scores)):
        raise ValueError("influence scores must be a non-empty finite vector")
    return float(np.sqrt(np.mean(scores**2) / scores.size))


@dataclass(frozen=True)
class FoldPlan:
    """
    A partition of the rows into cross-fitting folds.

    ``assignments[i]`` is the fold of row i, or None before ``make_folds``.
    """

    folds: Optional[int] = None
    seed: int = 0
    assignments: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.folds is None:
            object.__setattr__(self, "folds", int(Config.estimation.crossfit_folds))
        if self.folds < 1:
            raise FoldError(f"the number of folds must be at least 1, got {self.folds}")

    def fold_sizes(self) -> list[int]:
        """Number of rows in every fold"""
        if self.assignments is None:
            raise FoldError("the folds have not been assigned, call make_folds first")
        return np.bincount(self.assignments, minlength=self.folds).tolist()


def make_folds(n: int, plan: FoldPlan) -> FoldPlan:
    """
    Assign n rows to folds by a seeded shuffle.

    Args:
        n (int): Number of rows
        plan (FoldPlan): The number of folds and the seed

    Returns:
        FoldPlan: A copy carrying the assignments; fold sizes differ by at most one

    Raises:
        FoldError: If n is smaller than the number of folds
    """
    if n < plan.folds:
        raise FoldError(f"cannot split {n} rows into {plan.folds} non-empty folds")
    permutation = stream(plan.seed, "folds").permutation(n)
    assignments = np.empty(n, dtype=int)
    assignments[permutation] = np.arange(n) % plan.folds
    assignments.setflags(write=False)
    return replace(plan, assignments=assignments)


def cross_fit(dataset: Dataset, plan: FoldPlan, fit_predict: FitPredict, threads: int = 1) -> np.ndarray:
    """
    Out-of-fold nuisance predictions.

    ``fit_predict(train, test)`` fits nuisance models on ``train`` and returns their predictions
    for the rows of ``test`` (one row per test row). With a single fold the models are fitted and
    evaluated on the whole dataset.

    Returns:
        np.ndarray: Predictions for every row of the dataset, in the original row order
    """
    if plan.folds == 1:
        return np.asarray(fit_predict(dataset, dataset), dtype=float)
    if plan.assignments is None or plan.assignments.size != dataset.n:
        plan = make_folds(dataset.n, plan)

    def run_fold(fold: int) -> tuple[np.ndarray, np.ndarray]:
        test_rows = np.flatnonzero(plan.assignments == fold)
        train_rows = np.flatnonzero(plan.assignments != fold)
        predictions = fit_predict(dataset.subset(train_rows), dataset.subset(test_rows))
        return test_rows, np.asarray(predictions, dtype=float)

    results = Parallel(n_jobs=threads, prefer="threads")(delayed(run_fold)(fold) for fold in range(plan.folds))
    first = results[0][1]
    out = np.empty((dataset.n,) + first.shape[1:])
    for rows, predictions in results:
        out[rows] = predictions
    logger.info("cross-fitted nuisances over %d folds", plan.folds)
    return out

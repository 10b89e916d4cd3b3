"""
Regression and smoothing primitives used by every estimator.

All learners are deterministic given their inputs. Models are frozen dataclasses and can be
shared between threads.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import expit
from scipy.stats import norm

from interventional.config import Config
from interventional.exceptions import EffectiveSampleError, RankDeficiencyError, SeparationError

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10
PINNED_PROBABILITY = 1e-10
PINNED_PATIENCE = 5
# kernel weights below this count as outside the window
WINDOW_WEIGHT = 1e-8
EVALUATION_BLOCK = 64


def add_intercept(design: np.ndarray) -> np.ndarray:
    """Prepend a column of ones"""
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design.reshape(-1, 1)
    return np.column_stack([np.ones(design.shape[0]), design])


def _as_design(design: np.ndarray, intercept: bool) -> np.ndarray:
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design.reshape(-1, 1)
    return add_intercept(design) if intercept else design


def _pivoted_qr(design: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Economic QR with column pivoting, raising on rank deficiency"""
    q, r, pivot = linalg.qr(design, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(r))
    if diagonal.size and diagonal[0] > 0:
        dependent = np.flatnonzero(diagonal <= RANK_TOLERANCE * diagonal[0])
    else:
        dependent = np.arange(diagonal.size)
    if design.shape[0] < design.shape[1]:
        raise RankDeficiencyError(int(pivot[design.shape[0]]))
    if dependent.size:
        raise RankDeficiencyError(int(pivot[dependent[0]]))
    return q, r, pivot


def _solve_least_squares(design: np.ndarray, response: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least squares via pivoted QR. Returns the coefficients and (X'X)^-1."""
    q, r, pivot = _pivoted_qr(design)
    coefficients = np.empty(design.shape[1])
    coefficients[pivot] = linalg.solve_triangular(r, q.T @ response)
    r_inverse = linalg.solve_triangular(r, np.eye(r.shape[0]))
    unscaled = np.empty_like(r_inverse)
    gram_inverse = r_inverse @ r_inverse.T
    unscaled[np.ix_(pivot, pivot)] = gram_inverse
    return coefficients, unscaled


@dataclass(frozen=True)
class LinearModel:
    """
    An ordinary least squares fit.

    Attributes:
        coefficients: intercept first when intercept is True
        residual_variance: RSS / (n - p)
        covariance: estimated covariance of the coefficients
        intercept: whether predict prepends a column of ones
    """

    coefficients: np.ndarray
    residual_variance: float
    covariance: np.ndarray
    intercept: bool = False

    def predict(self, design: np.ndarray) -> np.ndarray:
        """Fitted values for new rows"""
        return _as_design(design, self.intercept) @ self.coefficients

    @property
    def std_errors(self) -> np.ndarray:
        """Conventional standard errors of the coefficients"""
        return np.sqrt(np.diag(self.covariance))


def fit_ols(design: np.ndarray, response: np.ndarray, intercept: bool = False) -> LinearModel:
    """
    Fit an ordinary least squares regression.

    Args:
        design (np.ndarray): Regressors (n x d)
        response (np.ndarray): Outcome (n)
        intercept (bool): Prepend a column of ones to the design

    Returns:
        LinearModel: The fitted model

    Raises:
        RankDeficiencyError: naming the first linearly dependent column
    """
    design = _as_design(design, intercept)
    response = np.asarray(response, dtype=float).ravel()
    if design.shape[0] != response.shape[0]:
        raise ValueError(f"design has {design.shape[0]} rows but the response has {response.shape[0]}")
    coefficients, unscaled = _solve_least_squares(design, response)
    residuals = response - design @ coefficients
    dof = max(design.shape[0] - design.shape[1], 1)
    residual_variance = float(residuals @ residuals / dof)
    return LinearModel(coefficients, residual_variance, residual_variance * unscaled, intercept)


@dataclass(frozen=True)
class LogisticModel:
    """
    A logistic regression fitted by iteratively reweighted least squares.

    Attributes:
        coefficients: intercept first when intercept is True
        converged: False when max_iter was reached
        n_iterations: IRLS iterations performed
        covariance: inverse Fisher information at the last iterate
        intercept: whether predict prepends a column of ones
        ridge_used: True when the ridge fallback was needed
    """

    coefficients: np.ndarray
    converged: bool
    n_iterations: int
    covariance: np.ndarray
    intercept: bool = False
    ridge_used: bool = False

    def linear_predictor(self, design: np.ndarray) -> np.ndarray:
        """The log-odds for new rows"""
        return _as_design(design, self.intercept) @ self.coefficients

    def predict(self, design: np.ndarray) -> np.ndarray:
        """Fitted probabilities for new rows"""
        return expit(self.linear_predictor(design))

    @property
    def std_errors(self) -> np.ndarray:
        """Standard errors from the inverse Fisher information"""
        return np.sqrt(np.diag(self.covariance))


def fit_logistic_irls(
    design: np.ndarray,
    labels: np.ndarray,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
    intercept: bool = False,
) -> LogisticModel:
    """
    Fit a logistic regression by Newton-Raphson / IRLS.

    Iterates until the largest coefficient change, relative to max(|coefficient|, 1), is below tol
    or max_iter is reached. Non-convergence is reported through the ``converged`` flag.

    Args:
        design (np.ndarray): Regressors (n x d)
        labels (np.ndarray): Binary labels (n)
        max_iter (int): Maximum IRLS iterations, default Config.learners.irls_max_iter
        tol (float): Convergence tolerance, default Config.learners.irls_tol
        intercept (bool): Prepend a column of ones to the design

    Returns:
        LogisticModel: The fitted model

    Raises:
        SeparationError: If labels are constant or the classes are completely separated
        RankDeficiencyError: If the design is not of full column rank
    """
    max_iter = Config.learners.irls_max_iter if max_iter is None else max_iter
    tol = Config.learners.irls_tol if tol is None else tol
    design = _as_design(design, intercept)
    labels = np.asarray(labels, dtype=float).ravel()
    if design.shape[0] != labels.shape[0]:
        raise ValueError(f"design has {design.shape[0]} rows but the labels have {labels.shape[0]}")
    if labels.min() == labels.max():
        raise SeparationError(f"labels are all equal to {labels[0]:g}; both classes are required")
    _pivoted_qr(design)

    coefficients = np.zeros(design.shape[1])
    ridge_used = False
    converged = False
    previous_step = np.inf
    pinned_iterations = 0
    iteration = 0
    information = design.T @ design
    for iteration in range(1, max_iter + 1):
        probabilities = expit(design @ coefficients)
        weights = probabilities * (1 - probabilities)
        information = design.T @ (design * weights[:, None])
        score = design.T @ (labels - probabilities)
        try:
            step = linalg.solve(information, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            information = information + Config.learners.ridge * np.eye(information.shape[0])
            step = linalg.solve(information, score, assume_a="sym")
            if not ridge_used:
                logger.warning("IRLS information matrix is singular, adding a ridge of %g", Config.learners.ridge)
            ridge_used = True
        coefficients = coefficients + step
        step_norm = float(np.linalg.norm(step))
        logger.debug("IRLS iteration %d: step norm %.3e", iteration, step_norm)

        fitted = expit(design @ coefficients)
        pinned = np.all((fitted < PINNED_PROBABILITY) | (fitted > 1 - PINNED_PROBABILITY))
        pinned_iterations = pinned_iterations + 1 if pinned else 0
        if pinned and (step_norm > previous_step or pinned_iterations >= PINNED_PATIENCE):
            raise SeparationError("complete separation: fitted probabilities are pinned to 0/1 and the steps diverge")
        previous_step = step_norm

        if np.max(np.abs(step) / np.maximum(np.abs(coefficients), 1.0)) < tol:
            converged = True
            break

    if not converged:
        logger.warning("IRLS did not converge after %d iterations", max_iter)
    probabilities = expit(design @ coefficients)
    weights = probabilities * (1 - probabilities)
    information = design.T @ (design * weights[:, None])
    try:
        covariance = linalg.inv(information)
    except linalg.LinAlgError:
        covariance = np.full(information.shape, np.nan)
    return LogisticModel(coefficients, converged, iteration, covariance, intercept, ridge_used)


def silverman_bandwidth(values: np.ndarray) -> float:
    """Silverman's rule-of-thumb bandwidth for a Gaussian kernel"""
    values = np.asarray(values, dtype=float).ravel()
    spread = np.std(values, ddof=1)
    q75, q25 = np.percentile(values, [75, 25])
    iqr_spread = (q75 - q25) / 1.34
    scale = min(spread, iqr_spread) if iqr_spread > 0 else spread
    if not scale > 0:
        raise EffectiveSampleError("cannot choose a bandwidth for a constant running variable")
    return float(1.06 * scale * values.size ** (-1 / 5))


@dataclass(frozen=True)
class LocalPolyFit:
    """
    A local polynomial regression with Gaussian kernel weights.

    Attributes:
        degree: 1 (local linear) or 2 (local quadratic)
        bandwidth: kernel standard deviation
        inputs: training running variable
        outputs: training responses, one column per response
        kernel: kernel identifier
    """

    degree: int
    bandwidth: float
    inputs: np.ndarray
    outputs: np.ndarray
    kernel: str = "gaussian"


def fit_local_poly(
    inputs: np.ndarray, outputs: np.ndarray, degree: int, bandwidth: Optional[float] = None
) -> LocalPolyFit:
    """
    Store the training data of a local polynomial regression.

    Args:
        inputs (np.ndarray): Running variable (n)
        outputs (np.ndarray): Responses (n) or (n x q)
        degree (int): 1 or 2
        bandwidth (float): Kernel bandwidth, default Config.learners.bandwidth or Silverman's rule

    Returns:
        LocalPolyFit: The fit, evaluated lazily by local_poly_eval
    """
    if degree not in (1, 2):
        raise ValueError(f"degree must be 1 or 2, got {degree}")
    inputs = np.array(inputs, dtype=float).ravel()
    outputs = np.array(outputs, dtype=float)
    if outputs.shape[0] != inputs.shape[0]:
        raise ValueError(f"inputs have {inputs.shape[0]} rows but the outputs have {outputs.shape[0]}")
    if bandwidth is None:
        bandwidth = Config.learners.bandwidth
    if bandwidth is None:
        bandwidth = silverman_bandwidth(inputs)
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    inputs.setflags(write=False)
    outputs.setflags(write=False)
    return LocalPolyFit(degree, float(bandwidth), inputs, outputs)


def local_poly_eval(fit: LocalPolyFit, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Evaluate a local polynomial fit and its first derivative.

    At each point solves the kernel-weighted least squares problem in the centred and
    bandwidth-scaled running variable; the intercept is the fitted value and the linear
    coefficient (divided by the bandwidth) the first derivative.

    Args:
        fit (LocalPolyFit): The fit
        points (np.ndarray): Evaluation points (m)

    Returns:
        tuple: values and derivatives, each (m) for a single response or (m x q)

    Raises:
        EffectiveSampleError: If a window holds fewer than degree+1 distinct training inputs
    """
    points = np.asarray(points, dtype=float).ravel()
    outputs = fit.outputs if fit.outputs.ndim == 2 else fit.outputs[:, None]
    size = fit.degree + 1
    values = np.empty((points.size, outputs.shape[1]))
    derivatives = np.empty_like(values)
    unique_inputs, inverse = np.unique(fit.inputs, return_inverse=True)

    for start in range(0, points.size, EVALUATION_BLOCK):
        block = points[start : start + EVALUATION_BLOCK]
        scaled = (fit.inputs[None, :] - block[:, None]) / fit.bandwidth
        weights = np.exp(-0.5 * scaled**2)

        in_window = np.zeros((block.size, unique_inputs.size), dtype=bool)
        rows = np.repeat(np.arange(block.size), fit.inputs.size)
        in_window[rows, np.tile(inverse, block.size)] = (weights > WINDOW_WEIGHT).ravel()
        distinct = in_window.sum(axis=1)
        if np.any(distinct < size):
            bad = block[np.argmin(distinct)]
            raise EffectiveSampleError(
                f"the kernel window at {bad:g} holds {distinct.min()} distinct inputs, {size} are required"
            )

        powers = [np.ones_like(scaled)]
        for _ in range(2 * fit.degree):
            powers.append(powers[-1] * scaled)
        moments = np.stack([(weights * power).sum(axis=1) for power in powers], axis=1)
        gram = np.empty((block.size, size, size))
        for i in range(size):
            for j in range(size):
                gram[:, i, j] = moments[:, i + j]
        rhs = np.stack([(weights * powers[k]) @ outputs for k in range(size)], axis=1)
        solution = np.linalg.solve(gram, rhs)
        values[start : start + block.size] = solution[:, 0, :]
        derivatives[start : start + block.size] = solution[:, 1, :] / fit.bandwidth

    if fit.outputs.ndim == 1:
        return values[:, 0], derivatives[:, 0]
    return values, derivatives


@dataclass(frozen=True)
class KernelDensityModel:
    """A Gaussian kernel density estimate"""

    sample: np.ndarray
    bandwidth: float


def fit_kernel_density(sample: np.ndarray, bandwidth: Optional[float] = None) -> KernelDensityModel:
    """Store a sample for kernel density estimation (bandwidth defaults to Silverman's rule)"""
    sample = np.asarray(sample, dtype=float).ravel()
    if sample.size < 2:
        raise ValueError(f"kernel density needs at least 2 observations, got {sample.size}")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(sample)
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return KernelDensityModel(sample, float(bandwidth))


def kernel_density_derivative(model: KernelDensityModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Gaussian kernel density and its analytic first derivative.

    Args:
        model (KernelDensityModel): The density model
        points (np.ndarray): Evaluation points

    Returns:
        tuple: (phi, phi_prime) at the points
    """
    points = np.asarray(points, dtype=float).ravel()
    phi = np.empty(points.size)
    phi_prime = np.empty(points.size)
    h = model.bandwidth
    for start in range(0, points.size, EVALUATION_BLOCK):
        block = points[start : start + EVALUATION_BLOCK]
        scaled = (block[:, None] - model.sample[None, :]) / h
        kernel = norm.pdf(scaled)
        phi[start : start + block.size] = kernel.mean(axis=1) / h
        phi_prime[start : start + block.size] = -(scaled * kernel).mean(axis=1) / h**2
    return phi, phi_prime

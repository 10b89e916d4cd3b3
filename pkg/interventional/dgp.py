"""
Synthetic data generators with known effects, and the oracle IE/MIE they imply.

Two families of data-generating processes are provided: an unconfounded one, where the propensity
and the conditional effect are known functions of the covariates, and a normal generalized Roy
model with an excluded instrument. Oracles integrate the identification formulas under the true
DGP, by product quadrature when the covariate dimension is at most 3 and by blocked Monte-Carlo
otherwise.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Union

import numpy as np
from joblib import Parallel, delayed
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import expit, ndtri
from scipy.stats import norm

from interventional.config import Config
from interventional.data import Dataset
from interventional.exceptions import DomainError
from interventional.interventions import InterventionFamily
from interventional.rng import stream

logger = logging.getLogger(__name__)

MAX_QUADRATURE_DIMENSION = 3


@dataclass(frozen=True)
class CovariateSpec:
    """
    Distribution of one covariate or instrument column.

    Attributes:
        distribution: "uniform" on [low, high], "normal" with mean and sd, or "bernoulli" with p
    """

    distribution: str = "uniform"
    low: float = 0.0
    high: float = 1.0
    mean: float = 0.0
    sd: float = 1.0
    p: float = 0.5

    def __post_init__(self) -> None:
        if self.distribution not in ("uniform", "normal", "bernoulli"):
            raise DomainError(f"unknown covariate distribution {self.distribution!r}")
        if self.distribution == "uniform" and not self.low < self.high:
            raise DomainError(f"uniform covariate needs low < high, got [{self.low}, {self.high}]")
        if self.distribution == "normal" and not self.sd > 0:
            raise DomainError(f"normal covariate needs sd > 0, got {self.sd}")
        if self.distribution == "bernoulli" and not 0 < self.p < 1:
            raise DomainError(f"bernoulli covariate needs 0 < p < 1, got {self.p}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n independent draws"""
        if self.distribution == "uniform":
            return rng.uniform(self.low, self.high, size=n)
        if self.distribution == "normal":
            return rng.normal(self.mean, self.sd, size=n)
        return (rng.random(size=n) < self.p).astype(float)

    def quadrature(self, nodes: int, breakpoints: tuple[float, ...] = ()) -> tuple[np.ndarray, np.ndarray]:
        """
        Nodes and probability weights integrating against this distribution.

        Uniform columns are split at the breakpoints so step functions are integrated exactly.
        """
        if self.distribution == "bernoulli":
            return np.array([0.0, 1.0]), np.array([1 - self.p, self.p])
        if self.distribution == "normal":
            points, weights = hermegauss(nodes)
            return self.mean + self.sd * points, weights / np.sqrt(2 * np.pi)
        edges = [self.low] + sorted(b for b in breakpoints if self.low < b < self.high) + [self.high]
        points, weights = leggauss(nodes)
        all_points, all_weights = [], []
        for left, right in zip(edges[:-1], edges[1:]):
            half = (right - left) / 2
            all_points.append(left + half * (points + 1))
            all_weights.append(weights * half / (self.high - self.low))
        return np.concatenate(all_points), np.concatenate(all_weights)

    def to_dict(self) -> dict[str, Any]:
        """The config-file representation"""
        keys = {"uniform": ("low", "high"), "normal": ("mean", "sd"), "bernoulli": ("p",)}[self.distribution]
        return {"distribution": self.distribution, **{key: getattr(self, key) for key in keys}}


@dataclass(frozen=True)
class FunctionSpec:
    """
    A closed-form function of the covariates.

    Attributes:
        kind: "constant" (intercept), "linear" (intercept + coefficients'x),
            "quadratic" (linear + squares'x^2) or "step" (intercept + jump 1{x[column] > threshold})
    """

    kind: str = "constant"
    intercept: float = 0.0
    coefficients: tuple[float, ...] = ()
    squares: tuple[float, ...] = ()
    column: int = 0
    threshold: float = 0.0
    jump: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "linear", "quadratic", "step"):
            raise DomainError(f"unknown function kind {self.kind!r}")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        object.__setattr__(self, "squares", tuple(float(c) for c in self.squares))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        value = np.full(x.shape[0], float(self.intercept))
        if self.kind in ("linear", "quadratic") and self.coefficients:
            value = value + x[:, : len(self.coefficients)] @ np.asarray(self.coefficients)
        if self.kind == "quadratic" and self.squares:
            value = value + x[:, : len(self.squares)] ** 2 @ np.asarray(self.squares)
        if self.kind == "step":
            value = value + self.jump * (x[:, self.column] > self.threshold)
        return value

    @property
    def breakpoints(self) -> dict[int, float]:
        """Discontinuities, by column"""
        return {self.column: self.threshold} if self.kind == "step" else {}

    def to_dict(self) -> dict[str, Any]:
        """The config-file representation"""
        data = {key: value for key, value in asdict(self).items() if value not in ((), 0, 0.0)}
        data["kind"] = self.kind
        data["intercept"] = self.intercept
        return {key: list(value) if isinstance(value, tuple) else value for key, value in data.items()}

    @classmethod
    def from_dict(cls, data: Union[float, dict[str, Any]]) -> "FunctionSpec":
        """Build from the config-file representation; a bare number is a constant"""
        if isinstance(data, (int, float)):
            return cls("constant", float(data))
        return cls(**{key: tuple(value) if isinstance(value, list) else value for key, value in data.items()})


def _covariates_from_dict(items: list[dict[str, Any]]) -> tuple[CovariateSpec, ...]:
    return tuple(CovariateSpec(**item) for item in items)


@dataclass(frozen=True)
class UnconfoundedDgp:
    """
    X from independent column samplers, A ~ Bernoulli(p0(X)), Y = mu0(X) + tau(X) A + noise.

    Attributes:
        covariates: one sampler per X column
        propensity_coefficients: intercept first, then one coefficient per X column
        tau: the conditional effect
        mu0: the untreated conditional mean
        noise_sd: SD of the normal outcome noise
        link: "logit" or "identity"; the identity link requires the index to stay in (0, 1)
    """

    covariates: tuple[CovariateSpec, ...]
    propensity_coefficients: tuple[float, ...]
    tau: FunctionSpec = field(default_factory=FunctionSpec)
    mu0: FunctionSpec = field(default_factory=FunctionSpec)
    noise_sd: float = 1.0
    link: str = "logit"

    def __post_init__(self) -> None:
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "propensity_coefficients", tuple(float(c) for c in self.propensity_coefficients))
        if len(self.propensity_coefficients) != len(self.covariates) + 1:
            raise DomainError(
                f"propensity needs {len(self.covariates) + 1} coefficients (intercept first), "
                f"got {len(self.propensity_coefficients)}"
            )
        if self.link not in ("logit", "identity"):
            raise DomainError(f"propensity link must be logit or identity, got {self.link!r}")
        if self.noise_sd < 0:
            raise DomainError(f"noise_sd must be non-negative, got {self.noise_sd}")

    @property
    def dimension(self) -> int:
        """Number of covariate columns"""
        return len(self.covariates)

    @property
    def distributions(self) -> tuple[CovariateSpec, ...]:
        """Samplers of every column the oracle integrates over"""
        return self.covariates

    def propensity(self, x: np.ndarray) -> np.ndarray:
        """The true p0(x)"""
        gamma = np.asarray(self.propensity_coefficients)
        index = gamma[0] + np.atleast_2d(x) @ gamma[1:]
        if self.link == "logit":
            return expit(index)
        if np.any((index <= 0) | (index >= 1)):
            raise DomainError("the identity-link propensity leaves (0, 1)")
        return index

    def breakpoints(self) -> dict[int, tuple[float, ...]]:
        """Discontinuities of tau and mu0, by column"""
        found: dict[int, tuple[float, ...]] = {}
        for function in (self.tau, self.mu0):
            for column, threshold in function.breakpoints.items():
                found[column] = found.get(column, ()) + (threshold,)
        return found

    def to_dict(self) -> dict[str, Any]:
        """The config-file representation"""
        return {
            "kind": "unconfounded",
            "covariates": [c.to_dict() for c in self.covariates],
            "propensity": {"link": self.link, "coefficients": list(self.propensity_coefficients)},
            "tau": self.tau.to_dict(),
            "mu0": self.mu0.to_dict(),
            "noise_sd": self.noise_sd,
        }


@dataclass(frozen=True)
class RoyDgp:
    """
    Normal generalized Roy model.

    Y0 = beta0'[1, X] + eps, Y1 = beta1'[1, X] + eps + eta, A = 1{gamma'[1, X, W] >= V} with
    (eps, eta, V) jointly normal, V standard normal and W the excluded instruments.

    Attributes:
        covariates: samplers of the X columns
        instruments: samplers of the excluded instrument columns
        gamma: selection coefficients on [1, X, W]
        beta0, beta1: outcome coefficients on [1, X]
        sigma_eps, sigma_eta: SDs of eps and eta
        rho_eps_v, rho_eta_v, rho_eps_eta: correlations
    """

    covariates: tuple[CovariateSpec, ...]
    instruments: tuple[CovariateSpec, ...]
    gamma: tuple[float, ...]
    beta0: tuple[float, ...]
    beta1: tuple[float, ...]
    sigma_eps: float = 1.0
    sigma_eta: float = 1.0
    rho_eps_v: float = 0.0
    rho_eta_v: float = 0.0
    rho_eps_eta: float = 0.0

    def __post_init__(self) -> None:
        for name in ("covariates", "instruments"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("gamma", "beta0", "beta1"):
            object.__setattr__(self, name, tuple(float(c) for c in getattr(self, name)))
        d_x, d_w = len(self.covariates), len(self.instruments)
        if len(self.gamma) != 1 + d_x + d_w:
            raise DomainError(f"gamma needs {1 + d_x + d_w} coefficients on [1, X, W], got {len(self.gamma)}")
        if len(self.beta0) != 1 + d_x or len(self.beta1) != 1 + d_x:
            raise DomainError(f"beta0 and beta1 need {1 + d_x} coefficients on [1, X]")
        if d_w == 0 or not np.any(np.asarray(self.gamma[1 + d_x :]) != 0):
            raise DomainError("the selection equation needs a relevant excluded instrument")
        if not (self.sigma_eps > 0 and self.sigma_eta >= 0):
            raise DomainError("sigma_eps must be positive and sigma_eta non-negative")
        for name in ("rho_eps_v", "rho_eta_v", "rho_eps_eta"):
            if not -1 < getattr(self, name) < 1:
                raise DomainError(f"{name} must lie in (-1, 1), got {getattr(self, name)}")
        if np.linalg.eigvalsh(self.covariance).min() < -1e-12:
            raise DomainError("the covariance of (eps, eta, V) is not positive semidefinite")

    @property
    def covariance(self) -> np.ndarray:
        """Covariance of (eps, eta, V)"""
        s_e, s_n = self.sigma_eps, self.sigma_eta
        return np.array(
            [
                [s_e**2, self.rho_eps_eta * s_e * s_n, self.rho_eps_v * s_e],
                [self.rho_eps_eta * s_e * s_n, s_n**2, self.rho_eta_v * s_n],
                [self.rho_eps_v * s_e, self.rho_eta_v * s_n, 1.0],
            ]
        )

    @property
    def sigma_eta_v(self) -> float:
        """Cov(eta, V), the slope of the MTE in the normal quantile of u"""
        return self.rho_eta_v * self.sigma_eta

    @property
    def dimension(self) -> int:
        """Number of covariate plus instrument columns"""
        return len(self.covariates) + len(self.instruments)

    @property
    def distributions(self) -> tuple[CovariateSpec, ...]:
        """Samplers of every column the oracle integrates over"""
        return self.covariates + self.instruments

    def breakpoints(self) -> dict[int, tuple[float, ...]]:
        """The MTE is smooth in the covariates"""
        return {}

    def index(self, z: np.ndarray) -> np.ndarray:
        """gamma'[1, X, W] for rows of [X, W]"""
        gamma = np.asarray(self.gamma)
        return gamma[0] + np.atleast_2d(z) @ gamma[1:]

    def true_propensity(self, z: np.ndarray) -> np.ndarray:
        """The true p0(z) = Phi(gamma'[1, z])"""
        return norm.cdf(self.index(z))

    def effect_slope(self, x: np.ndarray) -> np.ndarray:
        """(beta1 - beta0)'[1, x]"""
        difference = np.asarray(self.beta1) - np.asarray(self.beta0)
        return difference[0] + np.atleast_2d(x) @ difference[1:]

    def mte(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """The true marginal treatment effect"""
        return self.effect_slope(x) + self.sigma_eta_v * ndtri(u)

    def to_dict(self) -> dict[str, Any]:
        """The config-file representation"""
        return {
            "kind": "roy",
            "covariates": [c.to_dict() for c in self.covariates],
            "instruments": [c.to_dict() for c in self.instruments],
            "gamma": list(self.gamma),
            "beta0": list(self.beta0),
            "beta1": list(self.beta1),
            "sigma_eps": self.sigma_eps,
            "sigma_eta": self.sigma_eta,
            "rho_eps_v": self.rho_eps_v,
            "rho_eta_v": self.rho_eta_v,
            "rho_eps_eta": self.rho_eps_eta,
        }


Dgp = Union[UnconfoundedDgp, RoyDgp]


def dgp_from_dict(data: dict[str, Any]) -> Dgp:
    """
    Build a DGP from its config-file representation.

    Args:
        data (dict): A mapping with ``kind`` "unconfounded" or "roy"

    Returns:
        The DGP
    """
    data = dict(data)
    kind = data.pop("kind", "unconfounded")
    if kind == "unconfounded":
        propensity = data.get("propensity", {})
        return UnconfoundedDgp(
            covariates=_covariates_from_dict(data.get("covariates", [])),
            propensity_coefficients=tuple(propensity.get("coefficients", ())),
            tau=FunctionSpec.from_dict(data.get("tau", 0.0)),
            mu0=FunctionSpec.from_dict(data.get("mu0", 0.0)),
            noise_sd=float(data.get("noise_sd", 1.0)),
            link=propensity.get("link", "logit"),
        )
    if kind == "roy":
        return RoyDgp(
            covariates=_covariates_from_dict(data.pop("covariates", [])),
            instruments=_covariates_from_dict(data.pop("instruments", [])),
            **{key: tuple(value) if isinstance(value, list) else value for key, value in data.items()},
        )
    raise DomainError(f"unknown DGP kind {kind!r}, expected unconfounded or roy")


def _draw_columns(specs: tuple[CovariateSpec, ...], n: int, seed: int, stream_name: str) -> np.ndarray:
    columns = [spec.sample(stream(seed, stream_name, j), n) for j, spec in enumerate(specs)]
    return np.column_stack(columns) if columns else np.empty((n, 0))


def generate_unconfounded(dgp: UnconfoundedDgp, n: int, seed: int) -> Dataset:
    """
    Draw n rows from an unconfounded DGP.

    Identical (dgp, n, seed) give bit-identical datasets.
    """
    if n < 2:
        raise DomainError(f"n must be at least 2, got {n}")
    x = _draw_columns(dgp.covariates, n, seed, "covariate")
    p0 = dgp.propensity(x)
    a = (stream(seed, "treatment").random(n) < p0).astype(float)
    noise = dgp.noise_sd * stream(seed, "noise").standard_normal(n)
    y = dgp.mu0(x) + dgp.tau(x) * a + noise
    return Dataset(x, a, y)


def generate_roy(dgp: RoyDgp, n: int, seed: int) -> Dataset:
    """
    Draw n rows from a normal generalized Roy model.

    The dataset's z holds [X, W] with X in the leading columns; the true propensity of a row is
    ``dgp.true_propensity(dataset.z)``.
    """
    if n < 2:
        raise DomainError(f"n must be at least 2, got {n}")
    x = _draw_columns(dgp.covariates, n, seed, "covariate")
    w = _draw_columns(dgp.instruments, n, seed, "instrument")
    z = np.column_stack([x, w])
    values, vectors = np.linalg.eigh(dgp.covariance)
    factor = vectors * np.sqrt(np.clip(values, 0.0, None))
    errors = stream(seed, "errors").standard_normal((n, 3)) @ factor.T
    eps, eta, v = errors[:, 0], errors[:, 1], errors[:, 2]
    a = (dgp.index(z) >= v).astype(float)
    beta0 = np.asarray(dgp.beta0)
    y = beta0[0] + x @ beta0[1:] + dgp.effect_slope(x) * a + eps + eta * a
    d_x = x.shape[1]
    x_names = tuple(f"x{j + 1}" for j in range(d_x))
    z_names = x_names + tuple(f"w{j + 1}" for j in range(w.shape[1]))
    return Dataset(x, a, y, z=z, x_columns_in_z=tuple(range(d_x)), x_names=x_names, z_names=z_names)


@dataclass(frozen=True)
class OracleResult:
    """An oracle value; mc_se is present exactly when the value is a Monte-Carlo estimate"""

    value: float
    method: str
    mc_draws: int = 0
    mc_se: Optional[float] = None

    def __post_init__(self) -> None:
        if self.method not in ("quadrature", "monte-carlo"):
            raise ValueError(f"oracle method must be quadrature or monte-carlo, got {self.method!r}")
        if (self.mc_se is not None) != (self.method == "monte-carlo"):
            raise ValueError("mc_se must be given for Monte-Carlo oracles only")

    def to_record(self) -> dict[str, Any]:
        """A JSON-ready record"""
        return asdict(self)


# maps the columns of a DGP draw to per-row (weight, weight * effect)
Integrand = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def _quadrature_ratio(dgp: Dgp, integrand: Integrand, nodes: int) -> OracleResult:
    breakpoints = dgp.breakpoints()
    grids = [spec.quadrature(nodes, breakpoints.get(j, ())) for j, spec in enumerate(dgp.distributions)]
    if grids:
        mesh = np.meshgrid(*[points for points, _ in grids], indexing="ij")
        points = np.column_stack([m.ravel() for m in mesh])
        weight_mesh = np.meshgrid(*[weights for _, weights in grids], indexing="ij")
        probability = np.prod(np.column_stack([m.ravel() for m in weight_mesh]), axis=1)
    else:
        points, probability = np.empty((1, 0)), np.ones(1)
    weights, weighted = integrand(points)
    return OracleResult(float(probability @ weighted / (probability @ weights)), "quadrature")


def _block_moments(dgp: Dgp, integrand: Integrand, seed: int, block: int, size: int) -> np.ndarray:
    columns = [spec.sample(stream(seed, "oracle", block, j), size) for j, spec in enumerate(dgp.distributions)]
    points = np.column_stack(columns) if columns else np.empty((size, 0))
    weights, weighted = integrand(points)
    return np.array(
        [
            weights.sum(),
            weighted.sum(),
            (weights**2).sum(),
            (weighted**2).sum(),
            (weights * weighted).sum(),
        ]
    )


def _monte_carlo_ratio(dgp: Dgp, integrand: Integrand, draws: int, seed: int, threads: int) -> OracleResult:
    block_size = int(Config.oracle.block_size)
    sizes = [block_size] * (draws // block_size)
    if draws % block_size:
        sizes.append(draws % block_size)
    moments = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_block_moments)(dgp, integrand, seed, block, size) for block, size in enumerate(sizes)
    )
    s_w, s_wt, s_ww, s_tt, s_wwt = np.sum(np.stack(moments), axis=0) / draws
    ratio = s_wt / s_w
    # variance of w (t - ratio), the linearization of the ratio estimator
    spread = max(s_tt - 2 * ratio * s_wwt + ratio**2 * s_ww, 0.0)
    mc_se = float(np.sqrt(spread / draws) / s_w)
    logger.info("Monte-Carlo oracle: %d draws in %d blocks, value %.6g (mc_se %.2g)", draws, len(sizes), ratio, mc_se)
    return OracleResult(float(ratio), "monte-carlo", draws, mc_se)


def _oracle(
    dgp: Dgp,
    integrand: Integrand,
    method: str,
    draws: Optional[int],
    seed: int,
    threads: int,
) -> OracleResult:
    if method not in ("auto", "quadrature", "monte-carlo"):
        raise DomainError(f"oracle method must be auto, quadrature or monte-carlo, got {method!r}")
    smooth_on_normals = all(
        spec.distribution != "normal" or j not in dgp.breakpoints() for j, spec in enumerate(dgp.distributions)
    )
    small = dgp.dimension <= MAX_QUADRATURE_DIMENSION
    if method == "quadrature" or (method == "auto" and small and smooth_on_normals):
        if not small:
            raise DomainError(f"product quadrature supports at most {MAX_QUADRATURE_DIMENSION} columns")
        return _quadrature_ratio(dgp, integrand, int(Config.oracle.quadrature_nodes))
    draws = int(Config.oracle.draws if draws is None else draws)
    return _monte_carlo_ratio(dgp, integrand, draws, seed, threads)


def _safe_product(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    """weights * values with zero-weight rows contributing 0 even where values are infinite"""
    return np.where(weights != 0, weights * np.where(weights != 0, values, 0.0), 0.0)


def _normal_quantile_integral(u: np.ndarray) -> np.ndarray:
    """An antiderivative of the standard normal quantile function: -phi(Phi^-1(u))"""
    return -norm.pdf(ndtri(u))


def _roy_arrays(dgp: RoyDgp, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d_x = len(dgp.covariates)
    p0 = np.clip(dgp.true_propensity(points), 0.0, 1.0)
    return points[:, :d_x], p0


def oracle_mie_unconfounded(
    dgp: UnconfoundedDgp,
    family: InterventionFamily,
    method: str = "auto",
    draws: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
) -> OracleResult:
    """
    The true MIE: E[lambda(p0(X)) tau(X)] / E[lambda(p0(X))].

    Args:
        dgp (UnconfoundedDgp): The DGP
        family (InterventionFamily): The intervention family
        method (str): "auto" (quadrature up to 3 columns), "quadrature" or "monte-carlo"
        draws (int): Monte-Carlo draws, default Config.oracle.draws
        seed (int): Monte-Carlo seed
        threads (int): Blocks evaluated concurrently

    Returns:
        OracleResult: The oracle value
    """

    def integrand(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        weights = np.asarray(family.lam(dgp.propensity(x)))
        return weights, weights * dgp.tau(x)

    return _oracle(dgp, integrand, method, draws, seed, threads)


def oracle_mie_iv(
    dgp: RoyDgp,
    family: InterventionFamily,
    method: str = "auto",
    draws: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
) -> OracleResult:
    """
    The true MIE under a Roy DGP: the lambda(p0(Z))-weighted mean of MTE(X, p0(Z)).

    Uses the closed form MTE(x, u) = (beta1 - beta0)'[1, x] + sigma_eta_v Phi^-1(u).
    """

    def integrand(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, p0 = _roy_arrays(dgp, points)
        weights = np.asarray(family.lam(p0))
        return weights, _safe_product(weights, dgp.mte(x, p0))

    return _oracle(dgp, integrand, method, draws, seed, threads)


def oracle_ie(
    dgp: Dgp,
    family: InterventionFamily,
    delta: float,
    method: str = "auto",
    draws: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
) -> OracleResult:
    """
    The true IE(delta).

    Unconfounded DGPs weight tau(X) by pi_delta(p0) - p0. Roy DGPs integrate the MTE over
    [p0, pi_delta(p0)] in closed form and divide by E[pi_delta - p0].
    """
    if not delta > 0:
        raise DomainError(f"IE requires delta > 0, got {delta}")

    if isinstance(dgp, UnconfoundedDgp):

        def integrand(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            p0 = dgp.propensity(x)
            shift = np.asarray(family.pi_delta(p0, delta)) - p0
            return shift, shift * dgp.tau(x)

    else:

        def integrand(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            x, p0 = _roy_arrays(dgp, points)
            target = np.asarray(family.pi_delta(p0, delta))
            shift = target - p0
            area = dgp.effect_slope(x) * shift + dgp.sigma_eta_v * (
                _normal_quantile_integral(target) - _normal_quantile_integral(p0)
            )
            return shift, area

    return _oracle(dgp, integrand, method, draws, seed, threads)


def oracle_mie(dgp: Dgp, family: InterventionFamily, **options: Any) -> OracleResult:
    """The true MIE of either kind of DGP"""
    if isinstance(dgp, UnconfoundedDgp):
        return oracle_mie_unconfounded(dgp, family, **options)
    return oracle_mie_iv(dgp, family, **options)


def conditional_effect(
    dgp: Dgp, dataset: Dataset, family: InterventionFamily, delta: Optional[float] = None
) -> np.ndarray:
    """
    Per-row true policy-relevant effects.

    Under an unconfounded DGP both PRTE_delta(x) and MPRTE(x) equal tau(x). Under a Roy DGP the MPRTE
    of a row is MTE(x, p0(z)) and PRTE_delta its average over [p0, pi_delta(p0)].

    Args:
        dgp: The DGP that generated the dataset
        dataset (Dataset): Rows at which to evaluate
        family (InterventionFamily): The intervention family
        delta (float): None for the marginal effect, otherwise the intervention index

    Returns:
        np.ndarray: One effect per row
    """
    if isinstance(dgp, UnconfoundedDgp):
        return dgp.tau(dataset.x)
    if dataset.z is None:
        raise DomainError("a Roy DGP effect needs the instruments of the dataset")
    x, p0 = _roy_arrays(dgp, dataset.z)
    if delta is None:
        return dgp.mte(x, p0)
    target = np.asarray(family.pi_delta(p0, delta))
    shift = target - p0
    area = dgp.effect_slope(x) * shift + dgp.sigma_eta_v * (
        _normal_quantile_integral(target) - _normal_quantile_integral(p0)
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(shift > 0, area / np.where(shift > 0, shift, 1.0), dgp.mte(x, p0))

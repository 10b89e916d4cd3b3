from dataclasses import replace

import numpy as np
import pytest

from interventional import Config
from interventional.data import Dataset
from interventional.dgp import generate_roy, oracle_ie, oracle_mie_iv
from interventional.exceptions import (
    DataValidationError,
    DegenerateDensityError,
    DegenerateWeightsError,
    DomainError,
    MissingDerivativeError,
    SupportError,
)
from interventional.interventions import IPSI, STYLIZED_FAMILIES, Additive, CustomLambda
from interventional.iv import (
    LocationShiftDensity,
    estimate_ie_mte,
    estimate_mie_doubly_robust,
    estimate_mie_plugin,
    fit_location_shift,
    fit_mte,
    fit_semiparametric_liv,
)
from interventional.iv import estimators as iv_estimators
from interventional.unconfounded import estimate_mie_ri
from tests.mocks import roy_dgp, roy_model

# a propensity that ignores X, with a bell-shaped density vanishing at 0 and 1
BELL_GAMMA = (0.0, 0.0, 0.6)
# shifting beta1 adds 0.5 + 0.3 x to the MTE and p (0.5 + 0.3 x) to E[Y | X, p]
MISSPECIFICATION = np.array([0.5, 0.3])


@pytest.fixture(scope="module")
def large():
    return generate_roy(roy_dgp(), 20_000, seed=41)


@pytest.fixture(scope="module")
def small():
    return generate_roy(roy_dgp(), 3000, seed=42)


@pytest.fixture
def constant_gain():
    """the true propensity with an MTE of 1.5 everywhere"""
    model = roy_model(roy_dgp(rho_eta_v=0.0))
    return replace(model, beta1=model.beta0 + np.array([1.5, 0.0]))


@pytest.mark.parametrize("family", [family() for family in STYLIZED_FAMILIES], ids=repr)
def test_constant_gain_is_recovered(constant_gain, small, family):
    assert constant_gain.sigma_eta_v == pytest.approx(0.0, abs=1e-12)
    assert estimate_mie_plugin(constant_gain, small, family).point == pytest.approx(1.5, abs=1e-8)
    assert estimate_ie_mte(constant_gain, small, family, 0.3).point == pytest.approx(1.5, abs=1e-8)


@pytest.mark.parametrize("family", [family() for family in STYLIZED_FAMILIES], ids=repr)
def test_plugin_with_the_true_model_matches_the_oracle(large, family):
    report = estimate_mie_plugin(roy_model(), large, family)

    assert report.point == pytest.approx(oracle_mie_iv(roy_dgp(), family).value, abs=0.03)
    assert report.method == "iv-plugin-normal"
    assert report.estimand == f"MIE[{family.family_name}] (iv-latent-index)"
    assert report.diagnostics["mean_lambda"] > 0


@pytest.mark.parametrize("delta", [0.1, 1.0])
def test_ie_with_the_true_model_matches_the_oracle(large, delta):
    report = estimate_ie_mte(roy_model(), large, IPSI(), delta)

    assert report.point == pytest.approx(oracle_ie(roy_dgp(), IPSI(), delta).value, abs=0.03)
    assert report.method == "iv-ie-normal"
    assert report.estimand == f"IE(delta={delta:g})[ipsi] (iv-latent-index)"
    assert report.diagnostics["quadrature_error"] < 1e-6


def test_ie_with_a_capped_family(small):
    report = estimate_ie_mte(roy_model(), small, Additive(), 0.5)

    assert np.isfinite(report.point)
    assert report.n_used == small.n


def test_ie_tends_to_the_mie(small):
    model = roy_model()
    plugin = estimate_mie_plugin(model, small, IPSI()).point

    assert estimate_ie_mte(model, small, IPSI(), 1e-4).point == pytest.approx(plugin, abs=1e-3)


def test_ie_needs_a_positive_delta(small):
    with pytest.raises(ValueError):
        estimate_ie_mte(roy_model(), small, IPSI(), 0.0)


def test_ie_support_policy(small):
    fit = fit_semiparametric_liv(small)
    with pytest.raises(SupportError) as err:
        estimate_ie_mte(fit, small, Additive(), 0.3)
    assert err.value.rows

    report = estimate_ie_mte(fit, small, Additive(), 0.3, on_support_violation="drop")

    assert report.diagnostics["support_dropped"] == len(err.value.rows)
    assert report.n_used == small.n - len(err.value.rows)
    assert report.method == "iv-ie-semiparametric"


def test_ie_unknown_support_policy(small):
    with pytest.raises(DomainError):
        estimate_ie_mte(roy_model(), small, IPSI(), 0.1, on_support_violation="clip")


def test_zero_lambda_weights(small):
    with pytest.raises(DegenerateWeightsError):
        estimate_mie_plugin(roy_model(), small, CustomLambda(np.zeros_like))


def test_plugin_needs_instruments(small):
    with pytest.raises(DataValidationError):
        estimate_mie_plugin(roy_model(), replace(small, z=small.x, z_names=()), IPSI())


def test_doubly_robust_with_the_true_model(large):
    model = roy_model()
    report = estimate_mie_doubly_robust(large, IPSI(), model)
    plugin = estimate_mie_plugin(model, large, IPSI())

    assert report.method == "iv-dr"
    assert report.diagnostics["plugin_part"] == pytest.approx(plugin.point)
    assert report.point == pytest.approx(oracle_mie_iv(roy_dgp(), IPSI()).value, abs=0.2)
    assert report.diagnostics["sigma_eps_hat"] > 0


def test_doubly_robust_fits_the_configured_density(small, mocker):
    mocker.patch.object(Config.iv, "density", "kernel")
    fit_density = mocker.spy(iv_estimators, "fit_location_shift")

    report = estimate_mie_doubly_robust(small, IPSI(), roy_model())

    fit_density.assert_called_once()
    assert fit_density.spy_return.density == "kernel"
    assert fit_density.spy_return.kernel_score.shape == (small.n,)
    assert np.isfinite(report.point)


@pytest.mark.parametrize("family", [Additive(), IPSI()], ids=repr)
def test_doubly_robust_corrects_a_misspecified_mte(family):
    dgp = roy_dgp(gamma=BELL_GAMMA)
    truth = oracle_mie_iv(dgp, family).value
    wrong = replace(roy_model(dgp), beta1=np.asarray(dgp.beta1) + MISSPECIFICATION)
    plugin_bias, dr_bias = [], []
    for seed in range(5):
        dataset = generate_roy(dgp, 20_000, seed=300 + seed)
        density = fit_location_shift(dataset, wrong.propensity(dataset), density="kernel")
        plugin_bias.append(estimate_mie_plugin(wrong, dataset, family).point - truth)
        dr_bias.append(estimate_mie_doubly_robust(dataset, family, wrong, density).point - truth)

    assert np.median(plugin_bias) == pytest.approx(0.5, abs=0.1)
    assert abs(np.median(dr_bias)) <= 0.5 * abs(np.median(plugin_bias))


def test_normal_density_corrects_a_linear_misspecification_of_the_additive_mie(mocker):
    dgp = roy_dgp(gamma=BELL_GAMMA)
    dataset = generate_roy(dgp, 20_000, seed=305)
    wrong = replace(roy_model(dgp), beta1=np.asarray(dgp.beta1) + MISSPECIFICATION)
    fit_density = mocker.spy(iv_estimators, "fit_location_shift")
    truth = oracle_mie_iv(dgp, Additive()).value

    report = estimate_mie_doubly_robust(dataset, Additive(), wrong)

    assert fit_density.spy_return.density == "normal"
    assert report.diagnostics["plugin_part"] - truth == pytest.approx(0.5, abs=0.05)
    assert abs(report.point - truth) <= 0.25


def test_doubly_robust_on_a_semiparametric_fit_without_interactions():
    dgp = roy_dgp(gamma=BELL_GAMMA)
    dataset = generate_roy(dgp, 20_000, seed=306)
    fit = fit_semiparametric_liv(dataset, interaction_columns=[])
    density = fit_location_shift(dataset, fit.propensity(dataset), density="kernel")

    report = estimate_mie_doubly_robust(dataset, IPSI(), fit, density)

    assert fit.beta_diff_hat.tolist() == [0.0]
    assert report.method == "iv-dr"
    assert report.point == pytest.approx(oracle_mie_iv(dgp, IPSI()).value, abs=0.2)


def test_doubly_robust_needs_lambda_prime(small):
    family = CustomLambda(lambda p: p * (1 - p))
    with pytest.raises(MissingDerivativeError):
        estimate_mie_doubly_robust(small, family, roy_model())


def test_doubly_robust_degenerate_density(small):
    density = LocationShiftDensity(None, 0.0, np.zeros(small.n))
    with pytest.raises(DegenerateDensityError) as err:
        estimate_mie_doubly_robust(small, IPSI(), roy_model(), density)
    assert "do not move p0 given X" in str(err.value)


def test_fit_mte_dispatch(small):
    assert fit_mte(small, "semiparametric").kind == "semiparametric"
    with pytest.raises(DomainError):
        fit_mte(small, "probit")


def test_fitted_normal_model_end_to_end(small):
    fit = fit_mte(small)
    report = estimate_mie_plugin(fit, small, IPSI())

    assert report.point == pytest.approx(oracle_mie_iv(roy_dgp(), IPSI()).value, abs=0.2)
    assert report.diagnostics["mle_converged"] == 1.0


def test_equalizing_has_the_largest_mie_under_selection_on_gains():
    # rho_eta_v < 0: units with a low resistance u gain the most
    dgp = roy_dgp(rho_eta_v=-0.5)
    dataset = generate_roy(dgp, 20_000, seed=44)
    fit = fit_mte(dataset)
    oracle = {family.family_name: oracle_mie_iv(dgp, family()).value for family in STYLIZED_FAMILIES}
    plugin = {family.family_name: estimate_mie_plugin(fit, dataset, family()).point for family in STYLIZED_FAMILIES}

    assert max(oracle, key=oracle.get) == "equalizing"
    assert min(oracle, key=oracle.get) == "multiplicative"
    assert max(plugin, key=plugin.get) == "equalizing"
    assert min(plugin, key=plugin.get) == "multiplicative"


def test_iv_plugin_reduces_to_regression_imputation_without_selection_on_unobservables():
    # gamma ignores X, so both target E[tau(X)] whatever their propensity link
    dgp = roy_dgp(gamma=(0.0, 0.0, 1.2), rho_eps_v=0.0, rho_eta_v=0.0)
    sizes = (2000, 8000, 32_000)
    gaps = {family: {n: [] for n in sizes} for family in ("additive", "ipsi")}
    for seed in range(5):
        full = generate_roy(dgp, sizes[-1], seed=400 + seed)
        for n in sizes:
            dataset = full.subset(np.arange(n))
            observed = Dataset(dataset.z, dataset.a, dataset.y)
            fit = fit_mte(dataset)
            for family in (Additive(), IPSI()):
                gap = estimate_mie_plugin(fit, dataset, family).point - estimate_mie_ri(observed, family).point
                gaps[family.family_name][n].append(gap)
        # x averages to zero, so the gain intercept carries the plug-in's sampling error
        error = fit.beta_difference_se[0]
        for by_size in gaps.values():
            assert abs(by_size[sizes[-1]][-1]) <= 3 * error

    for by_size in gaps.values():
        spread = {n: np.sqrt(np.mean(np.square(values))) for n, values in by_size.items()}
        assert spread[32_000] < spread[2000]

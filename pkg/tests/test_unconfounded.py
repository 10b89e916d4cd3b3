from functools import partial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interventional import Config
from interventional.data import Dataset
from interventional.dgp import generate_unconfounded, oracle_mie_unconfounded
from interventional.exceptions import DataValidationError, DegenerateWeightsError, DomainError, EmptySampleError
from interventional.inference import BootstrapPlan, bootstrap
from interventional.interventions import IPSI, STYLIZED_FAMILIES, Additive, CustomLambda
from interventional.unconfounded import (
    WeightScheme,
    aipw_scores,
    estimate_aipw,
    estimate_ie,
    estimate_ipw,
    estimate_mie_ri,
    estimate_robinson,
    fit_propensity,
    fit_unconfounded,
    trim_by_propensity,
)
from tests.mocks import heterogeneous_dgp, logit_dgp, stratum_oracle, uniform_dgp

# MIE of each weighting scheme on the two-stratum data
STRATA_TRUTH = {"ATE": 2.0, "ATT": 2.4, "ATU": 1.6, "ATO": 2.0}
COEFFICIENTS = st.floats(min_value=-5.0, max_value=5.0)


@pytest.fixture
def noiseless():
    """constant effect 1.7 and outcomes exactly linear in the covariates"""
    return generate_unconfounded(logit_dgp(tau=1.7, noise_sd=0.0), 2000, seed=11)


@pytest.mark.parametrize("family", [family() for family in STYLIZED_FAMILIES], ids=repr)
def test_ri_matches_the_stratum_oracle(strata, family):
    report = estimate_mie_ri(strata, family)

    assert report.point == pytest.approx(stratum_oracle(family.lam), abs=1e-6)
    assert report.point == pytest.approx(STRATA_TRUTH[family.weight_scheme], abs=1e-6)
    assert report.method == "ri"
    assert report.n_used == 400
    assert report.estimand == f"MIE[{family.family_name}] (unconfounded)"
    assert report.diagnostics["min_p0"] == pytest.approx(0.3)
    assert report.diagnostics["propensity_converged"] == 1.0


@pytest.mark.parametrize("scheme", list(WeightScheme), ids=lambda scheme: scheme.value)
def test_ipw_matches_the_stratum_oracle(strata, scheme):
    report = estimate_ipw(strata, scheme)

    assert report.point == pytest.approx(STRATA_TRUTH[scheme.value], abs=1e-6)
    assert report.method == "ipw"
    assert report.estimand == f"MIE[{scheme.family_name}] (unconfounded)"
    assert "extreme_weights" not in report.diagnostics


def test_ipw_accepts_scheme_names(strata):
    assert estimate_ipw(strata, "ATT").point == pytest.approx(2.4, abs=1e-6)


def test_ipw_flags_extreme_weights(strata, mocker):
    mocker.patch.object(Config.estimation, "extreme_weight", 0.001)
    report = estimate_ipw(strata, WeightScheme.ATE)

    assert report.diagnostics["extreme_weights"] == 1.0
    assert report.diagnostics["max_normalized_weight"] == pytest.approx(1 / 120, rel=1e-6)


@pytest.mark.parametrize("scheme", ["ATE", "ATT", "ATU"])
def test_aipw_without_cross_fitting_matches_the_stratum_oracle(strata, scheme):
    report = estimate_aipw(strata, scheme, crossfit_folds=1)

    assert report.point == pytest.approx(STRATA_TRUTH[scheme], abs=1e-6)
    assert report.method == "aipw"
    assert report.std_error > 0
    assert report.diagnostics["folds"] == 1.0


def test_aipw_does_not_cover_the_overlap_weights(strata):
    with pytest.raises(DomainError) as err:
        estimate_aipw(strata, "ATO")
    assert "estimate_robinson" in str(err.value)


def test_aipw_scores_reject_ato():
    ones = np.ones(3)
    with pytest.raises(DomainError):
        aipw_scores(WeightScheme.ATO, ones, ones, ones / 2, ones, ones)


def test_aipw_scores_are_centred():
    a = np.array([1.0, 0.0, 1.0, 0.0])
    y = np.array([3.0, 1.0, 2.0, 0.0])
    point, scores = aipw_scores(WeightScheme.ATE, a, y, np.full(4, 0.5), np.full(4, 2.5), np.full(4, 0.5))

    assert point == pytest.approx(2.0)
    assert scores.mean() == pytest.approx(0.0)


def test_robinson_without_cross_fitting_matches_the_overlap_oracle(strata):
    report = estimate_robinson(strata, crossfit_folds=1)

    assert report.point == pytest.approx(STRATA_TRUTH["ATO"], abs=1e-6)
    assert report.estimand == "MIE[ipsi] (unconfounded)"
    assert report.method == "robinson"
    assert report.std_error > 0
    assert report.ci_lower is None


def test_robinson_is_reproducible_across_threads():
    dataset = generate_unconfounded(logit_dgp(), 1000, seed=5)
    single = estimate_robinson(dataset, crossfit_folds=5, seed=9, threads=1)
    threaded = estimate_robinson(dataset, crossfit_folds=5, seed=9, threads=3)

    assert single.point == threaded.point
    assert single.std_error == threaded.std_error
    assert single.seed == 9
    assert single.diagnostics["folds"] == 5.0


@pytest.mark.parametrize("family", [family() for family in STYLIZED_FAMILIES], ids=repr)
def test_constant_effect_is_recovered_by_every_family(noiseless, family):
    assert estimate_mie_ri(noiseless, family).point == pytest.approx(1.7, abs=1e-8)
    assert estimate_ie(noiseless, family, 0.5).point == pytest.approx(1.7, abs=1e-8)


def test_pooled_outcome_model(noiseless):
    assert estimate_mie_ri(noiseless, IPSI(), outcome_model="pooled").point == pytest.approx(1.7, abs=1e-8)


def test_constant_effect_augmented_ipw(noiseless):
    assert estimate_aipw(noiseless, "ATE", crossfit_folds=2).point == pytest.approx(1.7, abs=1e-8)


@pytest.mark.parametrize("delta", [0.1, 0.5, 2.0])
def test_ie_matches_the_stratum_oracle(strata, delta):
    family = IPSI()
    report = estimate_ie(strata, family, delta)

    assert report.point == pytest.approx(stratum_oracle(lambda p: family.pi_delta(p, delta) - p), abs=1e-6)
    assert report.estimand == f"IE(delta={delta:g})[ipsi] (unconfounded)"
    assert report.method == "ie-plugin"


def test_ie_needs_a_positive_delta(strata):
    with pytest.raises(ValueError):
        estimate_ie(strata, Additive(), 0.0)


def test_zero_weights_are_degenerate(strata):
    with pytest.raises(DegenerateWeightsError):
        estimate_mie_ri(strata, CustomLambda(np.zeros_like))


def test_binary_outcome_uses_logistic_outcome_models(strata):
    y = np.zeros(strata.n)
    y[1::2] = 1.0
    # every (stratum, arm) cell is sorted contiguously with an even size, so each has mean 1/2
    report = estimate_mie_ri(strata.with_outcome(y), IPSI())

    assert report.point == pytest.approx(0.0, abs=1e-8)
    assert report.diagnostics["outcome_converged"] == 1.0


def test_unknown_outcome_model(strata):
    with pytest.raises(DomainError):
        fit_unconfounded(strata, outcome_model="forest")


def test_unknown_outcome_type(strata):
    with pytest.raises(DomainError):
        fit_unconfounded(strata, outcome_type="count")


def test_estimators_validate_their_data():
    dataset = Dataset([[0.0], [1.0], [2.0]], [0, 2, 1], [1.0, 2.0, 3.0])
    with pytest.raises(DataValidationError) as err:
        estimate_mie_ri(dataset, IPSI())
    assert err.value.violations == ["non-binary treatment at row 1"]


def test_overlap_weights_balance_the_covariates():
    dataset = generate_unconfounded(logit_dgp(), 2000, seed=3)
    _, p0, _ = fit_propensity(dataset)
    treated = dataset.a == 1
    weights_treated, weights_control = WeightScheme.ATO.weights(p0)
    mean_treated = np.average(dataset.x[treated], axis=0, weights=weights_treated[treated])
    mean_control = np.average(dataset.x[~treated], axis=0, weights=weights_control[~treated])

    assert mean_treated == pytest.approx(mean_control, abs=1e-6)


def test_fit_propensity_clips_to_the_floor(strata):
    _, p0, clipped = fit_propensity(strata, floor=0.4)

    assert p0.min() == pytest.approx(0.4)
    assert p0.max() == pytest.approx(0.6)
    assert clipped == 400


def test_trim_by_propensity():
    dataset = Dataset([[0.0], [1.0], [2.0], [3.0]], [1, 1, 0, 0], [1.0, 2.0, 3.0, 4.0])
    trimmed, bounds = trim_by_propensity(dataset, [0.4, 0.6, 0.1, 0.5])

    assert bounds == (0.4, 0.5)
    assert trimmed.x.ravel().tolist() == [0.0, 3.0]


def test_trim_without_overlap():
    dataset = Dataset([[0.0], [1.0], [2.0], [3.0]], [1, 1, 0, 0], [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(EmptySampleError):
        trim_by_propensity(dataset, [0.8, 0.9, 0.1, 0.3])


def test_trimming_diagnostics(strata):
    report = estimate_mie_ri(strata, IPSI(), trim=True)

    assert report.diagnostics["trimmed"] == 0.0
    assert report.diagnostics["trim_low"] == pytest.approx(0.3)
    assert report.diagnostics["trim_high"] == pytest.approx(0.7)


@pytest.fixture(scope="module")
def heterogeneous_draws():
    return [generate_unconfounded(heterogeneous_dgp(), 5000, seed=500 + seed) for seed in range(5)]


def with_bootstrap_error(estimate, dataset, seed):
    """the point estimate of a report-returning estimator and its bootstrap SE"""

    def point(sample):
        return estimate(sample).point

    report = estimate(dataset)
    plan = BootstrapPlan(seed=seed, replications=100)
    return report.point, bootstrap(point, dataset, plan, point=report.point).std_error


@pytest.mark.parametrize("family", [family() for family in STYLIZED_FAMILIES], ids=repr)
def test_estimators_recover_a_heterogeneous_effect(heterogeneous_draws, family):
    truth = oracle_mie_unconfounded(heterogeneous_dgp(), family).value
    scheme = WeightScheme(family.weight_scheme)
    hits = {"ipw": 0, "ri": 0, "dml": 0}
    for seed, dataset in enumerate(heterogeneous_draws):
        if scheme is WeightScheme.ATO:
            dml = estimate_robinson(dataset, seed=seed)
        else:
            dml = estimate_aipw(dataset, scheme, seed=seed)
        estimates = {
            "ipw": with_bootstrap_error(partial(estimate_ipw, scheme=scheme), dataset, seed),
            "ri": with_bootstrap_error(partial(estimate_mie_ri, family=family), dataset, seed),
            "dml": (dml.point, dml.std_error),
        }
        for name, (point, error) in estimates.items():
            hits[name] += abs(point - truth) <= 3 * error

    assert min(hits.values()) >= 4, hits


def test_regression_imputation_on_the_worked_ipsi_case():
    dgp = uniform_dgp(noise_sd=0.25)
    dataset = generate_unconfounded(dgp, 20_000, seed=12)

    assert oracle_mie_unconfounded(dgp, IPSI()).value == pytest.approx(0.5, abs=1e-10)
    assert estimate_mie_ri(dataset, IPSI()).point == pytest.approx(0.5, abs=0.02)


@pytest.fixture(scope="module")
def continuous_draw():
    return generate_unconfounded(logit_dgp(), 300, seed=13)


@given(intercept=COEFFICIENTS, slopes=st.tuples(COEFFICIENTS, COEFFICIENTS), seed=st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_robinson_ignores_outcome_shifts_linear_in_the_covariates(continuous_draw, intercept, slopes, seed):
    shifted = continuous_draw.with_outcome(continuous_draw.y + intercept + continuous_draw.x @ np.array(slopes))

    base = estimate_robinson(continuous_draw, crossfit_folds=2, seed=seed, outcome_type="continuous")
    moved = estimate_robinson(shifted, crossfit_folds=2, seed=seed, outcome_type="continuous")

    assert moved.point == pytest.approx(base.point, abs=1e-8)


@pytest.mark.parametrize("family", [family() for family in STYLIZED_FAMILIES], ids=repr)
@given(seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=10, deadline=None)
def test_duplicating_every_row_leaves_the_estimates_unchanged(family, seed):
    dataset = generate_unconfounded(logit_dgp(), 200, seed=seed)
    doubled = dataset.subset(np.tile(np.arange(dataset.n), 2))
    scheme = WeightScheme(family.weight_scheme)
    estimators = [
        partial(estimate_mie_ri, family=family),
        partial(estimate_ie, family=family, delta=0.5),
        partial(estimate_ipw, scheme=scheme),
    ]
    if scheme is WeightScheme.ATO:
        estimators.append(partial(estimate_robinson, crossfit_folds=1))
    else:
        estimators.append(partial(estimate_aipw, scheme=scheme, crossfit_folds=1))

    for estimate in estimators:
        assert estimate(doubled).point == pytest.approx(estimate(dataset).point, abs=1e-10)

import numpy as np
import pytest

from interventional.exceptions import ExcessiveDropError, FoldError, SeparationError
from interventional.inference import (
    BootstrapPlan,
    CIMethod,
    FoldPlan,
    bootstrap,
    cross_fit,
    eif_variance,
    make_folds,
)
from interventional.rng import stream


def mean_outcome(dataset):
    return float(dataset.y.mean())


def test_stream_is_reproducible():
    assert stream(3, "bootstrap", 7).random(5).tolist() == stream(3, "bootstrap", 7).random(5).tolist()


def test_streams_differ_by_name_and_seed():
    reference = stream(3, "bootstrap", 7).random(5)

    assert not np.array_equal(reference, stream(3, "bootstrap", 8).random(5))
    assert not np.array_equal(reference, stream(4, "bootstrap", 7).random(5))


def test_stream_rejects_negative_seeds():
    with pytest.raises(ValueError):
        stream(-1)


def test_plan_defaults_from_config():
    plan = BootstrapPlan()

    assert plan.replications == 1000
    assert plan.level == 0.95
    assert plan.ci_method is CIMethod.PERCENTILE
    assert BootstrapPlan(ci_method="normal").ci_method is CIMethod.NORMAL


@pytest.mark.parametrize("options", [{"replications": 1}, {"level": 1.0}, {"level": 0.0}])
def test_plan_validation(options):
    with pytest.raises(ValueError):
        BootstrapPlan(**options)


def test_bootstrap_of_a_constant_estimator(strata):
    result = bootstrap(lambda dataset: 4.2, strata, BootstrapPlan(replications=20))

    assert result.point == 4.2
    assert result.std_error == 0.0
    assert result.ci == (4.2, 4.2)
    assert result.dropped == 0


def test_bootstrap_is_reproducible_across_threads(strata):
    single = bootstrap(mean_outcome, strata, BootstrapPlan(seed=2, replications=50))
    threaded = bootstrap(mean_outcome, strata, BootstrapPlan(seed=2, replications=50, threads=4))

    assert np.array_equal(single.replicates, threaded.replicates)
    assert single.std_error == threaded.std_error


def test_bootstrap_of_the_mean(strata):
    result = bootstrap(mean_outcome, strata, BootstrapPlan(seed=1, replications=400))
    analytic = strata.y.std(ddof=1) / np.sqrt(strata.n)

    assert result.point == pytest.approx(strata.y.mean())
    assert result.std_error == pytest.approx(analytic, rel=0.2)
    assert result.ci[0] < result.point < result.ci[1]
    assert np.all(np.diff(result.replicates) >= 0)


def test_normal_interval(strata):
    result = bootstrap(mean_outcome, strata, BootstrapPlan(replications=50, ci_method=CIMethod.NORMAL), point=1.0)

    assert result.ci == pytest.approx((1.0 - 1.959964 * result.std_error, 1.0 + 1.959964 * result.std_error))


def failing_on_high_outcomes(error):
    def estimate(dataset):
        if dataset.y[0] > 2.5:
            raise error("resample failed")
        return 1.0

    return estimate


def test_bootstrap_drops_failed_replicates(strata, mocker):
    flaky = mocker.Mock(side_effect=failing_on_high_outcomes(SeparationError))

    with pytest.raises(ExcessiveDropError) as err:
        bootstrap(flaky, strata, BootstrapPlan(replications=20, max_drop_fraction=0.0), point=1.0)
    assert "bootstrap replicates failed" in str(err.value)
    assert flaky.call_count == 20


@pytest.mark.parametrize("error", [ValueError, np.linalg.LinAlgError, ZeroDivisionError, FloatingPointError])
def test_bootstrap_drops_numerical_failures(strata, mocker, error):
    flaky = mocker.Mock(side_effect=failing_on_high_outcomes(error))

    result = bootstrap(flaky, strata, BootstrapPlan(replications=20, max_drop_fraction=0.9), point=1.0)

    assert flaky.call_count == 20
    assert result.dropped > 0
    assert result.dropped + result.replicates.size == 20


def test_bootstrap_stops_on_other_errors(strata, mocker):
    broken = mocker.Mock(side_effect=TypeError("unsupported operand"))

    with pytest.raises(TypeError):
        bootstrap(broken, strata, BootstrapPlan(replications=5), point=1.0)


def test_bootstrap_tolerates_a_few_failures(strata):
    def flaky(dataset):
        return np.nan if dataset.y[0] > 6.0 else 1.0

    result = bootstrap(flaky, strata, BootstrapPlan(replications=40, max_drop_fraction=0.5), point=1.0)

    assert result.dropped + result.replicates.size == 40
    assert result.dropped < 20


def test_eif_variance():
    assert eif_variance(np.array([1.0, -1.0, 1.0, -1.0])) == pytest.approx(0.5)


@pytest.mark.parametrize("scores", [np.array([]), np.array([1.0, np.nan])])
def test_eif_variance_rejects_bad_scores(scores):
    with pytest.raises(ValueError):
        eif_variance(scores)


@pytest.mark.parametrize("n, folds", [(10, 3), (101, 5), (5, 5)])
def test_folds_are_balanced(n, folds):
    plan = make_folds(n, FoldPlan(folds, seed=4))
    sizes = plan.fold_sizes()

    assert sum(sizes) == n
    assert max(sizes) - min(sizes) <= 1
    assert plan.assignments.shape == (n,)


def test_folds_are_reproducible():
    first = make_folds(50, FoldPlan(5, seed=4)).assignments
    second = make_folds(50, FoldPlan(5, seed=4)).assignments

    assert np.array_equal(first, second)
    assert not np.array_equal(first, make_folds(50, FoldPlan(5, seed=5)).assignments)


def test_too_few_rows_for_the_folds():
    with pytest.raises(FoldError) as err:
        make_folds(3, FoldPlan(5))
    assert str(err.value) == "cannot split 3 rows into 5 non-empty folds"


def test_fold_plan_validation():
    with pytest.raises(FoldError):
        FoldPlan(0)
    with pytest.raises(FoldError):
        FoldPlan(2).fold_sizes()


def test_fold_plan_default_from_config():
    assert FoldPlan().folds == 5


def test_cross_fit_predicts_out_of_fold(strata):
    def train_mean(train, test):
        return np.full(test.n, train.y.mean())

    plan = make_folds(strata.n, FoldPlan(4, seed=1))
    predictions = cross_fit(strata, plan, train_mean)

    for fold in range(4):
        rows = plan.assignments == fold
        assert predictions[rows] == pytest.approx(strata.y[~rows].mean())


def test_cross_fit_single_fold_is_in_sample(strata):
    predictions = cross_fit(strata, FoldPlan(1), lambda train, test: np.full(test.n, train.n))

    assert np.all(predictions == strata.n)


def test_cross_fit_keeps_the_row_order(strata):
    predictions = cross_fit(strata, FoldPlan(3, seed=2), lambda train, test: np.column_stack([test.y, test.x]), 2)

    assert predictions.shape == (strata.n, 2)
    assert np.array_equal(predictions[:, 0], strata.y)
    assert np.array_equal(predictions[:, 1], strata.x[:, 0])

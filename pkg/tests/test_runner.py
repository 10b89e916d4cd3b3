import numpy as np
import pandas as pd
import pytest

from interventional import Config
from interventional.data import EstimateReport
from interventional.exceptions import DataValidationError, DomainError, RoleError
from interventional.io import ColumnRoles
from interventional.runner import (
    STYLIZED,
    Cell,
    ResultTable,
    RunConfig,
    commands,
    estimate_cells,
    estimators,
    load_preset,
    run,
    write_dataset,
)
from tests.mocks import logit_dgp, uniform_dgp

STRATA_ROLES = ColumnRoles(treatment="a", outcome="y", covariates=("x1",))
# MIE of each stylized family on the two-stratum data
STRATA_TRUTH = {"additive": 2.0, "multiplicative": 2.4, "equalizing": 1.6, "ipsi": 2.0}
IDENTITY_ORACLE = {"additive": 0.5, "multiplicative": 2 / 3, "equalizing": 1 / 3, "ipsi": 0.5}


@pytest.fixture
def strata_csv(tmp_path, strata):
    path = tmp_path / "strata.csv"
    write_dataset(strata, path)
    return path


def test_registries():
    assert set(commands) == {"simulate", "estimate", "oracle", "replicate-rhc"}
    assert set(estimators) >= {
        "ipw",
        "ri",
        "aipw",
        "robinson",
        "dml",
        "iv-plugin-normal",
        "iv-plugin-semiparametric",
        "iv-ie",
        "iv-dr",
    }


def test_write_dataset(tmp_path, strata):
    path = tmp_path / "strata.csv"
    write_dataset(strata, path)
    frame = pd.read_csv(path)

    assert list(frame.columns) == ["x1", "a", "y"]
    assert len(frame) == 400
    assert np.array_equal(frame["y"].to_numpy(), strata.y)


@pytest.mark.parametrize(
    "values, error",
    [
        ({"command": "fit"}, DomainError),
        ({"command": "estimate", "input": "data.csv", "dgp": {}, "roles": STRATA_ROLES}, DomainError),
        ({"command": "simulate"}, DomainError),
        ({"command": "oracle"}, DomainError),
        ({"command": "estimate"}, DomainError),
        ({"command": "estimate", "input": "data.csv"}, RoleError),
        ({"command": "oracle", "dgp": {}, "estimators": ("ipw", "lasso")}, DomainError),
        ({"command": "oracle", "dgp": {}, "delta": 0.0}, DomainError),
        ({"command": "oracle", "dgp": {}, "seed": -1}, DomainError),
    ],
    ids=[
        "unknown command",
        "input and dgp",
        "simulate without dgp",
        "oracle without dgp",
        "estimate without data",
        "input without roles",
        "unknown estimator",
        "zero delta",
        "negative seed",
    ],
)
def test_run_config_validation(values, error):
    with pytest.raises(error):
        RunConfig(**values)


def test_run_config_from_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        """
run:
  command: estimate
  input: data.csv
  roles:
    treatment: a
    outcome: y
    covariates: [x1]
  families: [ipsi, {family: mtp, policy: uniform-join}]
  estimators: [ipw, ri]
  seed: 3
"""
    )
    Config.load_config_from_file(path)

    run_config = RunConfig.from_config(Config, seed=7, threads=None)

    assert run_config.seed == 7
    assert run_config.threads == 1
    assert run_config.roles == STRATA_ROLES
    assert run_config.estimators == ("ipw", "ri")
    assert [family.label for family in run_config.family_objects()] == ["ipsi", "uniform-join"]


def test_run_config_from_config_needs_a_command():
    with pytest.raises(DomainError):
        RunConfig.from_config(Config)


def test_replicate_rhc_uses_the_rhc_preset():
    Config.set_values({"run": {"command": "replicate-rhc", "seed": 2}})

    run_config = RunConfig.from_config(Config)

    assert run_config.roles.treatment == "swang1"
    assert run_config.roles.expected_columns == 65
    assert run_config.estimators == ("ipw", "ri", "dml")
    assert run_config.families == STYLIZED
    assert run_config.outcome_model == "pooled"
    assert run_config.scale == 100
    assert run_config.seed == 2


def test_run_values_override_the_preset():
    Config.set_values({"run": {"command": "estimate", "preset": "nlsy", "input": "nlsy.csv", "trim": False}})

    run_config = RunConfig.from_config(Config)

    assert run_config.roles.treatment == "college"
    assert run_config.roles.instruments
    assert run_config.mte_model == "semiparametric"
    assert run_config.trim is False


def test_unknown_preset():
    with pytest.raises(DomainError):
        load_preset("lalonde")


def test_estimate_command(strata_csv):
    run_config = RunConfig(
        command="estimate",
        input=str(strata_csv),
        roles=STRATA_ROLES,
        estimators=("ipw", "ri"),
        bootstrap=False,
        seed=4,
    )

    table, report = run(run_config)

    assert table.rows == STYLIZED
    assert table.columns == ("ipw", "ri")
    assert report["command"] == "estimate"
    assert report["seed"] == 4
    assert report["settings"]["run"] == {"command": "estimate", "seed": 4}
    assert len(report["records"]) == 8
    for record in report["records"]:
        assert record["point"] == pytest.approx(STRATA_TRUTH[record["row"]], abs=1e-6)
        assert record["seed"] == 4
        assert record["method"] == record["column"]
    assert table.cell_text("multiplicative", "ipw") == "2.4"


def test_estimate_command_with_a_delta_runs_the_ie(strata_csv):
    run_config = RunConfig(
        command="estimate",
        input=str(strata_csv),
        roles=STRATA_ROLES,
        families=("ipsi",),
        estimators=("ri",),
        delta=0.5,
        bootstrap=False,
    )

    (cell,) = commands["estimate"](run_config)

    assert cell.report.method == "ie-plugin"


def test_estimate_cells_adds_bootstrap_inference(strata, mocker):
    mocker.patch.object(Config.bootstrap, "replications", 40)
    run_config = RunConfig(command="oracle", dgp={}, families=("additive",), estimators=("ipw",), seed=1)

    (cell,) = estimate_cells(strata, run_config)

    assert cell.report.std_error > 0
    assert cell.report.ci_lower <= cell.report.point <= cell.report.ci_upper
    assert cell.report.diagnostics["bootstrap_dropped"] == 0.0


def test_estimate_cells_scales(strata):
    run_config = RunConfig(
        command="oracle", dgp={}, families=("equalizing",), estimators=("ipw",), bootstrap=False, scale=100
    )

    (cell,) = estimate_cells(strata, run_config)

    assert cell.report.point == pytest.approx(160.0, abs=1e-4)
    assert cell.report.diagnostics["scale"] == 100


def test_dml_dispatches_on_the_weighting_scheme(strata):
    run_config = RunConfig(
        command="oracle", dgp={}, families=("additive", "ipsi"), estimators=("dml",), bootstrap=False
    )

    additive, ipsi = estimate_cells(strata, run_config)

    assert additive.report.method == "aipw"
    assert ipsi.report.method == "robinson"
    assert additive.report.std_error is not None


def test_estimator_errors_name_the_cell(strata):
    run_config = RunConfig(command="oracle", dgp={}, families=("additive",), estimators=("robinson",))

    with pytest.raises(DomainError) as err:
        estimate_cells(strata, run_config)

    assert str(err.value).startswith("robinson on additive: ")


def test_weighting_estimators_need_a_classical_estimand(strata):
    run_config = RunConfig(
        command="oracle", dgp={}, families=({"family": "mtp", "policy": "uniform-join"},), estimators=("ipw",)
    )

    with pytest.raises(DomainError) as err:
        estimate_cells(strata, run_config)

    assert "no classical weighting estimand" in str(err.value)


def test_iv_estimators_need_instruments(strata):
    run_config = RunConfig(command="oracle", dgp={}, families=("ipsi",), estimators=("iv-plugin-normal",))

    with pytest.raises(DataValidationError) as err:
        estimate_cells(strata, run_config)

    assert str(err.value).startswith("iv-plugin-normal on ipsi: ")


def test_oracle_command():
    run_config = RunConfig(command="oracle", dgp=uniform_dgp().to_dict(), seed=9)

    table, report = run(run_config)

    assert table.columns == ("oracle",)
    for record in report["records"]:
        assert record["point"] == pytest.approx(IDENTITY_ORACLE[record["row"]], abs=1e-10)
        assert record["method"] == "oracle-quadrature"
        assert record["std_error"] is None
        assert record["estimand"] == f"oracle[{record['row']}]"


def test_monte_carlo_oracle_cells_carry_their_error(mocker):
    mocker.patch.object(Config.oracle, "draws", 20_000)
    run_config = RunConfig(
        command="oracle", dgp=uniform_dgp().to_dict(), families=("ipsi",), oracle_method="monte-carlo", seed=9
    )

    (cell,) = commands["oracle"](run_config)

    assert cell.report.method == "oracle-monte-carlo"
    assert cell.report.n_used == 20_000
    assert cell.report.seed == 9
    assert abs(cell.report.point - 0.5) < 5 * cell.report.std_error


def test_simulate_command(tmp_path):
    output = tmp_path / "draw.csv"
    run_config = RunConfig(
        command="simulate",
        dgp=uniform_dgp().to_dict(),
        n=500,
        families=("ipsi",),
        estimators=("ipw",),
        bootstrap=False,
        data_output=str(output),
        seed=5,
    )

    table, report = run(run_config)

    assert table.rows == ("ipsi",)
    assert table.columns == ("ipw", "oracle")
    assert [record["column"] for record in report["records"]] == ["ipw", "oracle"]
    assert len(pd.read_csv(output)) == 500


def test_simulate_is_reproducible_across_threads():
    def report(threads):
        run_config = RunConfig(
            command="simulate",
            dgp=logit_dgp().to_dict(),
            n=400,
            families=("additive", "ipsi"),
            estimators=("dml",),
            bootstrap=False,
            seed=8,
            threads=threads,
        )
        return run(run_config)[1]

    assert report(1) == report(4)


def test_replicate_rhc_flags_a_column_mismatch(strata_csv):
    roles = ColumnRoles(treatment="a", outcome="y", covariates=("x1",), expected_columns=2)
    run_config = RunConfig(
        command="replicate-rhc",
        input=str(strata_csv),
        roles=roles,
        families=("additive",),
        estimators=("ipw",),
        bootstrap=False,
    )

    (cell,) = commands["replicate-rhc"](run_config)

    assert cell.report.point == pytest.approx(2.0, abs=1e-6)
    assert cell.report.diagnostics["column_mismatch"] == -1.0


@pytest.fixture
def table():
    cells = [
        Cell("ipsi", "ipw", EstimateReport("MIE[ipsi] (unconfounded)", 2.0, 400, "ipw", std_error=0.1234)),
        Cell("ipsi", "ri", EstimateReport("MIE[ipsi] (unconfounded)", 1.98765, 400, "ri")),
        Cell("additive", "ipw", EstimateReport("MIE[additive] (unconfounded)", -0.00123456, 400, "ipw")),
    ]
    return ResultTable.from_cells(cells)


def test_result_table_cells(table):
    assert table.rows == ("ipsi", "additive")
    assert table.columns == ("ipw", "ri")
    assert table.cell_text("ipsi", "ipw") == "2 (0.123)"
    assert table.cell_text("ipsi", "ri") == "1.99"
    assert table.cell_text("additive", "ipw") == "-0.00123"
    assert table.cell_text("additive", "ri") == ""


def test_result_table_frame(table):
    frame = table.to_frame()

    assert frame.index.name == "intervention"
    assert list(frame.columns) == ["ipw", "ri"]
    assert frame.loc["ipsi", "ipw"] == "2 (0.123)"
    assert "1.99" in table.render()


def test_result_table_from_records(table):
    records = [
        {"row": row, "column": column, "estimand": "MIE", "point": point, "n_used": 1, "method": column}
        for (row, column), (point, _) in table.cells.items()
    ]

    rebuilt = ResultTable.from_records(records)

    assert rebuilt.rows == table.rows
    assert rebuilt.cell_text("ipsi", "ri") == "1.99"

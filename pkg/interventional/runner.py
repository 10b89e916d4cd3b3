"""
Command dispatch for the CLI.

A run is described by the ``run`` section of the loaded config. Commands and estimators are
registered with the ``add_command`` and ``add_estimator`` decorators; ``run`` looks the command up,
evaluates every (intervention family, estimator) cell and returns the human table with the machine
report.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, replace
from importlib import resources
from typing import Any, Optional

import pandas as pd
import yaml

from interventional.config import Config, ConfigValue
from interventional.data import Dataset, EstimateReport, require_valid
from interventional.dgp import Dgp, RoyDgp, dgp_from_dict, generate_roy, generate_unconfounded, oracle_ie, oracle_mie
from interventional.exceptions import DomainError, InterventionalError, RoleError
from interventional.inference import BootstrapPlan, bootstrap
from interventional.interventions import InterventionFamily
from interventional.io import ColumnRoles, fetch_rhc, load_csv
from interventional.iv import estimate_ie_mte, estimate_mie_doubly_robust, estimate_mie_plugin, fit_mte
from interventional.learners import fit_logistic_irls
from interventional.unconfounded import (
    WeightScheme,
    estimate_aipw,
    estimate_ie,
    estimate_ipw,
    estimate_mie_ri,
    estimate_robinson,
    trim_by_propensity,
)

logger = logging.getLogger(__name__)

STYLIZED = ("additive", "multiplicative", "equalizing", "ipsi")
ORACLE_COLUMN = "oracle"

Estimator = Callable[[Dataset, InterventionFamily, "RunConfig"], EstimateReport]
Command = Callable[["RunConfig"], list["Cell"]]

commands: dict[str, Command] = {}
estimators: dict[str, Estimator] = {}


def add_command(name: str) -> Callable[[Command], Command]:
    """Decorator to register a function as a CLI command.

    Args:
        name (str): The command name used on the command line

    Returns:
        Callable: A decorator that registers the command
    """

    def decorator(command: Command) -> Command:
        commands[name] = command
        return command

    return decorator


def add_estimator(name: str) -> Callable[[Estimator], Estimator]:
    """Decorator to register a function as an estimator usable in ``run.estimators``"""

    def decorator(estimator: Estimator) -> Estimator:
        estimators[name] = estimator
        return estimator

    return decorator


def load_preset(name: str) -> dict[str, Any]:
    """Read a shipped preset, e.g. "rhc" or "nlsy" """
    resource = resources.files("interventional") / "presets" / f"{name}.yaml"
    if not resource.is_file():
        raise DomainError(f"unknown preset {name!r}")
    return yaml.safe_load(resource.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class RunConfig:
    """
    One CLI invocation.

    Attributes:
        command: simulate, estimate, oracle or replicate-rhc
        input: CSV file to load; exclusive with dgp
        dgp: DGP mapping to draw the data from
        n: rows to draw from the DGP
        roles: column roles for the CSV
        families: intervention family specs, one table row each
        estimators: registered estimator names, one table column each
        delta: the IE index; None estimates the MIE
        mte_model: normal or semiparametric, for the IV estimators that need one MTE fit
        outcome_model: separate or pooled, default Config.estimation.outcome_model
        trim: restrict to the propensity overlap interval, default Config.estimation.trim
        bootstrap: add bootstrap SEs and CIs to estimates that have no analytic SE
        scale: multiplies points, SEs and CIs in the table and report
        seed: seed of folds, bootstrap replicates, DGP draws and Monte-Carlo oracles
        threads: worker threads; results do not depend on it
        output: where the CLI writes the JSON report
        data_output: where simulate writes the drawn data as CSV
        cache_dir: RHC download cache
        oracle_method: auto, quadrature or monte-carlo
    """

    command: str
    input: Optional[str] = None
    dgp: Optional[dict[str, Any]] = None
    n: int = 5000
    roles: Optional[ColumnRoles] = None
    families: tuple[Any, ...] = STYLIZED
    estimators: tuple[str, ...] = ()
    delta: Optional[float] = None
    mte_model: str = "normal"
    outcome_model: Optional[str] = None
    trim: Optional[bool] = None
    bootstrap: bool = True
    scale: float = 1.0
    seed: int = 0
    threads: int = 1
    output: Optional[str] = None
    data_output: Optional[str] = None
    cache_dir: Optional[str] = None
    oracle_method: str = "auto"

    def __post_init__(self) -> None:
        if self.command not in commands:
            raise DomainError(f"unknown command {self.command!r}, expected one of {sorted(commands)}")
        if self.input is not None and self.dgp is not None:
            raise DomainError("give either run.input or run.dgp, not both")
        if self.command in ("simulate", "oracle") and self.dgp is None:
            raise DomainError(f"the {self.command} command needs run.dgp")
        if self.command == "estimate" and self.input is None and self.dgp is None:
            raise DomainError("the estimate command needs run.input or run.dgp")
        if self.input is not None and self.roles is None and self.command != "replicate-rhc":
            raise RoleError("run.input needs run.roles")
        unknown = [name for name in self.estimators if name not in estimators]
        if unknown:
            raise DomainError(f"unknown estimators {unknown}, expected some of {sorted(estimators)}")
        if self.delta is not None and not self.delta > 0:
            raise DomainError(f"run.delta must be positive, got {self.delta}")
        if self.seed < 0:
            raise DomainError(f"the seed must be non-negative, got {self.seed}")

    @classmethod
    def from_config(cls, config: ConfigValue = Config, **overrides: Any) -> "RunConfig":
        """
        Build the run from the ``run`` section of a loaded config.

        Args:
            config (ConfigValue): The loaded config
            overrides: Values that take precedence, e.g. the CLI's --seed

        Returns:
            RunConfig: The run
        """
        section = getattr(config, "run", None)
        values = section.to_dict() if isinstance(section, ConfigValue) else dict(section or {})
        values.update({key: value for key, value in overrides.items() if value is not None})
        if "command" not in values:
            raise DomainError("the config does not name a run.command")
        preset_name = values.pop("preset", None)
        if values["command"] == "replicate-rhc":
            preset_name = preset_name or "rhc"
        preset = load_preset(preset_name) if preset_name else {}
        merged = {**preset.get("run", {}), **values}
        roles = merged.pop("roles", None) or preset.get("roles")
        if roles is not None and not isinstance(roles, ColumnRoles):
            roles = ColumnRoles.from_dict(roles)
        for key in ("families", "estimators"):
            if key in merged:
                merged[key] = tuple(merged[key])
        return cls(roles=roles, **merged)

    def family_objects(self) -> list[InterventionFamily]:
        """The intervention families of the table rows"""
        return [InterventionFamily.from_spec(spec) for spec in self.families]


@dataclass(frozen=True)
class Cell:
    """One table cell with the report it came from"""

    row: str
    column: str
    report: EstimateReport

    def to_record(self) -> dict[str, Any]:
        """A JSON-ready record"""
        return {"row": self.row, "column": self.column, **self.report.to_record()}


def _format(value: Optional[float]) -> str:
    if value is None:
        return ""
    return f"{value:.3g}"


@dataclass(frozen=True)
class ResultTable:
    """Intervention families by estimators; each cell shows "point (SE)" to 3 significant figures"""

    rows: tuple[str, ...]
    columns: tuple[str, ...]
    cells: dict[tuple[str, str], tuple[float, Optional[float]]]

    @classmethod
    def from_cells(cls, cells: list[Cell]) -> "ResultTable":
        """Lay out the cells of a run"""
        return cls.from_records([cell.to_record() for cell in cells])

    @classmethod
    def from_records(cls, records: list[dict[str, Any]]) -> "ResultTable":
        """Rebuild the table from the records of a machine report"""
        rows = tuple(dict.fromkeys(record["row"] for record in records))
        columns = tuple(dict.fromkeys(record["column"] for record in records))
        cells = {}
        for record in records:
            fields = {key: value for key, value in record.items() if key not in ("row", "column")}
            report = EstimateReport.from_record(fields)
            cells[(record["row"], record["column"])] = (report.point, report.std_error)
        return cls(rows, columns, cells)

    def cell_text(self, row: str, column: str) -> str:
        """The printed cell, empty when the pair was not estimated"""
        if (row, column) not in self.cells:
            return ""
        point, std_error = self.cells[(row, column)]
        if std_error is None:
            return _format(point)
        return f"{_format(point)} ({_format(std_error)})"

    def to_frame(self) -> pd.DataFrame:
        """The printed table as a DataFrame"""
        return pd.DataFrame(
            [[self.cell_text(row, column) for column in self.columns] for row in self.rows],
            index=pd.Index(self.rows, name="intervention"),
            columns=list(self.columns),
        )

    def render(self) -> str:
        """Plain-text table"""
        return self.to_frame().to_string()


def _scheme(family: InterventionFamily) -> WeightScheme:
    if family.weight_scheme is None:
        raise DomainError(f"the {family.label} family has no classical weighting estimand")
    return WeightScheme(family.weight_scheme)


@add_estimator("ipw")
def _ipw(dataset: Dataset, family: InterventionFamily, run: RunConfig) -> EstimateReport:
    return estimate_ipw(dataset, _scheme(family), trim=run.trim)


@add_estimator("ri")
def _ri(dataset: Dataset, family: InterventionFamily, run: RunConfig) -> EstimateReport:
    if run.delta is not None:
        return estimate_ie(dataset, family, run.delta, trim=run.trim, outcome_model=run.outcome_model)
    return estimate_mie_ri(dataset, family, trim=run.trim, outcome_model=run.outcome_model)


@add_estimator("aipw")
def _aipw(dataset: Dataset, family: InterventionFamily, run: RunConfig) -> EstimateReport:
    return estimate_aipw(
        dataset,
        _scheme(family),
        seed=run.seed,
        trim=run.trim,
        outcome_model=run.outcome_model,
        threads=run.threads,
    )


@add_estimator("robinson")
def _robinson(dataset: Dataset, family: InterventionFamily, run: RunConfig) -> EstimateReport:
    if _scheme(family) is not WeightScheme.ATO:
        raise DomainError(f"the partialing-out estimator targets the ATO, not the MIE of {family.label}")
    return estimate_robinson(dataset, seed=run.seed, trim=run.trim, threads=run.threads)


@add_estimator("dml")
def _dml(dataset: Dataset, family: InterventionFamily, run: RunConfig) -> EstimateReport:
    if _scheme(family) is WeightScheme.ATO:
        return _robinson(dataset, family, run)
    return _aipw(dataset, family, run)


def _iv_sample(dataset: Dataset, run: RunConfig) -> Dataset:
    require_valid(dataset, instruments=True)
    trim = Config.estimation.trim if run.trim is None else run.trim
    if not trim:
        return dataset
    propensity = fit_logistic_irls(dataset.z, dataset.a, intercept=True)
    trimmed, _ = trim_by_propensity(dataset, propensity.predict(dataset.z))
    return trimmed


def _with_trim_count(report: EstimateReport, dataset: Dataset, sample: Dataset) -> EstimateReport:
    if sample.n == dataset.n:
        return report
    return replace(report, diagnostics={**report.diagnostics, "trimmed": float(dataset.n - sample.n)})


def _plugin(kind: str) -> Estimator:
    def estimator(dataset: Dataset, family: InterventionFamily, run: RunConfig) -> EstimateReport:
        sample = _iv_sample(dataset, run)
        fit = fit_mte(sample, kind)
        if run.delta is not None:
            report = estimate_ie_mte(fit, sample, family, run.delta)
        else:
            report = estimate_mie_plugin(fit, sample, family)
        return _with_trim_count(report, dataset, sample)

    return estimator


add_estimator("iv-plugin-normal")(_plugin("normal"))
add_estimator("iv-plugin-semiparametric")(_plugin("semiparametric"))


@add_estimator("iv-ie")
def _iv_ie(dataset: Dataset, family: InterventionFamily, run: RunConfig) -> EstimateReport:
    if run.delta is None:
        raise DomainError("the iv-ie estimator needs run.delta")
    return _plugin(run.mte_model)(dataset, family, run)


@add_estimator("iv-dr")
def _iv_dr(dataset: Dataset, family: InterventionFamily, run: RunConfig) -> EstimateReport:
    sample = _iv_sample(dataset, run)
    fit = fit_mte(sample, run.mte_model)
    return _with_trim_count(estimate_mie_doubly_robust(sample, family, fit), dataset, sample)


def _with_bootstrap(
    name: str, dataset: Dataset, family: InterventionFamily, run: RunConfig, report: EstimateReport
) -> EstimateReport:
    if report.std_error is not None or not run.bootstrap:
        return report
    estimator = estimators[name]

    def point(sample: Dataset) -> float:
        return estimator(sample, family, run).point

    plan = BootstrapPlan(seed=run.seed, threads=run.threads)
    result = bootstrap(point, dataset, plan, point=report.point)
    return report.with_inference(result.std_error, result.ci, bootstrap_dropped=float(result.dropped))


def estimate_cells(dataset: Dataset, run: RunConfig) -> list[Cell]:
    """Evaluate every (family, estimator) pair of the run on a dataset"""
    cells = []
    for family in run.family_objects():
        for name in run.estimators:
            logger.info("estimating %s with %s", family.label, name)
            try:
                report = estimators[name](dataset, family, run)
                report = _with_bootstrap(name, dataset, family, run, report)
            except InterventionalError as err:
                err.args = (f"{name} on {family.label}: {err}",)
                raise
            report = replace(report, seed=run.seed)
            if run.scale != 1.0:
                report = report.scaled(run.scale)
            cells.append(Cell(family.label, name, report))
    return cells


def _dgp(run: RunConfig) -> Dgp:
    return dgp_from_dict(run.dgp)


def _draw(run: RunConfig) -> Dataset:
    dgp = _dgp(run)
    if isinstance(dgp, RoyDgp):
        return generate_roy(dgp, run.n, run.seed)
    return generate_unconfounded(dgp, run.n, run.seed)


def _oracle_cells(run: RunConfig) -> list[Cell]:
    dgp = _dgp(run)
    options = {"method": run.oracle_method, "seed": run.seed, "threads": run.threads}
    cells = []
    for family in run.family_objects():
        if run.delta is None:
            result = oracle_mie(dgp, family, **options)
        else:
            result = oracle_ie(dgp, family, run.delta, **options)
        report = EstimateReport(
            estimand=f"oracle[{family.label}]",
            point=result.value,
            n_used=result.mc_draws,
            method=f"oracle-{result.method}",
            std_error=result.mc_se,
            seed=run.seed if result.method == "monte-carlo" else None,
        )
        if run.scale != 1.0:
            report = report.scaled(run.scale)
        cells.append(Cell(family.label, ORACLE_COLUMN, report))
    return cells


def write_dataset(dataset: Dataset, path: str) -> None:
    """Write a dataset as CSV with columns x..., a, y and the excluded instruments"""
    frame = pd.DataFrame(dataset.x, columns=list(dataset.x_names))
    frame["a"] = dataset.a.astype(int)
    frame["y"] = dataset.y
    if dataset.z is not None:
        excluded = [j for j in range(dataset.z.shape[1]) if j not in dataset.x_columns_in_z]
        for j in excluded:
            frame[dataset.z_names[j]] = dataset.z[:, j]
    frame.to_csv(path, index=False, float_format="%.17g")


@add_command("simulate")
def _simulate(run: RunConfig) -> list[Cell]:
    dataset = _draw(run)
    if run.data_output:
        write_dataset(dataset, run.data_output)
    return estimate_cells(dataset, run) + _oracle_cells(run)


@add_command("estimate")
def _estimate(run: RunConfig) -> list[Cell]:
    dataset = load_csv(run.input, run.roles) if run.input is not None else _draw(run)
    return estimate_cells(dataset, run)


@add_command("oracle")
def _oracle(run: RunConfig) -> list[Cell]:
    return _oracle_cells(run)


@add_command("replicate-rhc")
def _replicate_rhc(run: RunConfig) -> list[Cell]:
    path = run.input if run.input is not None else fetch_rhc(run.cache_dir)
    dataset = load_csv(path, run.roles)
    cells = estimate_cells(dataset, run)
    expected = run.roles.expected_columns
    if expected is not None and dataset.x.shape[1] != expected:
        mismatch = float(dataset.x.shape[1] - expected)
        flagged = []
        for cell in cells:
            diagnostics = {**cell.report.diagnostics, "column_mismatch": mismatch}
            flagged.append(replace(cell, report=replace(cell.report, diagnostics=diagnostics)))
        cells = flagged
    return cells


def _settings(run: RunConfig, config: ConfigValue) -> dict[str, Any]:
    settings = config.to_dict()
    section = dict(settings.get("run") or {})
    section.pop("threads", None)
    section.update(seed=run.seed, command=run.command)
    settings["run"] = section
    return settings


def run(config: RunConfig, settings: ConfigValue = Config) -> tuple[ResultTable, dict[str, Any]]:
    """
    Execute a run.

    Args:
        config (RunConfig): The run
        settings (ConfigValue): The loaded config, echoed into the report

    Returns:
        The human table and the machine report: the seed, the settings (thread count left out) and
        one record per estimate, in table order
    """
    logger.info("running %s with seed %d", config.command, config.seed)
    cells = commands[config.command](config)
    report = {
        "command": config.command,
        "seed": config.seed,
        "settings": _settings(config, settings),
        "records": [cell.to_record() for cell in cells],
    }
    return ResultTable.from_cells(cells), report

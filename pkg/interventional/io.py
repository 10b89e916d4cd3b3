"""
CSV ingestion and the RHC download.

Column roles say which CSV columns become the treatment, the outcome, the covariates and the
excluded instruments. Text-coded binary columns are mapped through a declared "one" level and
categorical covariates expand to one dummy per non-reference level.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
import requests

from interventional.config import Config
from interventional.data import Dataset
from interventional.exceptions import DigestMismatchError, EmptyFileError, FetchError, ParseError, RoleError

logger = logging.getLogger(__name__)

DEFAULT_CACHE_DIR = Path.home() / ".cache" / "interventional"
RHC_FILE = "rhc.csv"
CHUNK_SIZE = 1 << 16


@dataclass(frozen=True)
class ColumnRoles:
    """
    How the columns of a CSV file map to a Dataset.

    Attributes:
        treatment: the treatment column
        outcome: the outcome column
        covariates: the X columns, in order; categorical ones included
        instruments: excluded instruments, appended to X to form Z
        treatment_level: when set, A = 1 where the treatment column equals it
        outcome_level: when set, Y = 1 where the outcome column equals it
        binary_levels: text-coded binary covariates and the level coded as 1
        categorical: categorical covariates and their reference level
        expected_columns: the number of X columns the expansion should produce, checked when set
    """

    treatment: str
    outcome: str
    covariates: tuple[str, ...] = ()
    instruments: tuple[str, ...] = ()
    treatment_level: Optional[str] = None
    outcome_level: Optional[str] = None
    binary_levels: dict[str, str] = field(default_factory=dict)
    categorical: dict[str, str] = field(default_factory=dict)
    expected_columns: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "instruments", tuple(self.instruments))
        roles = [self.treatment, self.outcome, *self.covariates, *self.instruments]
        repeated = sorted({column for column in roles if roles.count(column) > 1})
        if repeated:
            raise RoleError(f"columns {repeated} are assigned more than one role")
        for column in [*self.binary_levels, *self.categorical]:
            if column not in self.covariates:
                raise RoleError(f"column {column!r} is coded but is not a covariate")

    @property
    def columns(self) -> list[str]:
        """Every column the roles reference"""
        return [self.treatment, self.outcome, *self.covariates, *self.instruments]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ColumnRoles":
        """Build the roles from a config mapping"""
        data = dict(data)
        missing = [key for key in ("treatment", "outcome") if not data.get(key)]
        if missing:
            raise RoleError(f"the column roles do not name the {' and '.join(missing)}")
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise RoleError(f"unknown column role keys {unknown}")
        return cls(
            **{
                **data,
                "binary_levels": {str(k): str(v) for k, v in (data.get("binary_levels") or {}).items()},
                "categorical": {str(k): str(v) for k, v in (data.get("categorical") or {}).items()},
                "covariates": tuple(data.get("covariates") or ()),
                "instruments": tuple(data.get("instruments") or ()),
            }
        )


def _numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise ParseError(row, column, frame[column].iloc[row])
    return values


def _level_indicator(frame: pd.DataFrame, column: str, level: str) -> np.ndarray:
    values = frame[column].str.strip()
    levels = list(dict.fromkeys(values))
    if level not in levels:
        raise RoleError(f"column {column!r} never takes the level {level!r}")
    if len(levels) > 2:
        # the first level that is neither the declared one nor the first other one seen
        other = next(value for value in levels if value != level)
        stray = ~values.isin([level, other]).to_numpy()
        row = int(np.flatnonzero(stray)[0])
        raise ParseError(row, column, values.iloc[row])
    return (values == level).to_numpy(dtype=float)


def _dummies(frame: pd.DataFrame, column: str, reference: str) -> tuple[np.ndarray, list[str]]:
    values = frame[column].str.strip()
    if values.eq("").any():
        row = int(np.flatnonzero(values.eq("").to_numpy())[0])
        raise ParseError(row, column, "")
    if not values.eq(reference).any():
        raise RoleError(f"categorical column {column!r} never takes its reference level {reference!r}")
    levels = sorted(level for level in values.unique() if level != reference)
    matrix = np.column_stack([(values == level).to_numpy(dtype=float) for level in levels])
    return matrix, [f"{column}[{level}]" for level in levels]


def _read(path: Union[str, Path]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as err:
        raise EmptyFileError(f"{path} is empty") from err
    if frame.empty:
        raise EmptyFileError(f"{path} has a header but no data rows")
    return frame


def load_csv(path: Union[str, Path], roles: Union[ColumnRoles, dict[str, Any]]) -> Dataset:
    """
    Load a CSV file into a Dataset.

    Args:
        path: The CSV file, UTF-8 with a header row
        roles: The column roles, as ColumnRoles or their config mapping

    Returns:
        Dataset: The parsed data; z holds X followed by the instruments when there are any

    Raises:
        EmptyFileError: If the file has no header or no data rows
        RoleError: If a role names a missing column or a level the column never takes
        ParseError: If a cell cannot be parsed, naming its data row (0-based) and column
    """
    if not isinstance(roles, ColumnRoles):
        roles = ColumnRoles.from_dict(roles)
    frame = _read(path)
    missing = [column for column in roles.columns if column not in frame.columns]
    if missing:
        raise RoleError(f"columns {missing} are not in {path}")

    def binary(column: str, level: Optional[str]) -> np.ndarray:
        return _numeric(frame, column) if level is None else _level_indicator(frame, column, level)

    a = binary(roles.treatment, roles.treatment_level)
    y = binary(roles.outcome, roles.outcome_level)
    blocks, names = [], []
    for column in roles.covariates:
        if column in roles.categorical:
            matrix, labels = _dummies(frame, column, roles.categorical[column])
            blocks.append(matrix)
            names.extend(labels)
        else:
            blocks.append(binary(column, roles.binary_levels.get(column))[:, None])
            names.append(column)
    x = np.hstack(blocks) if blocks else np.empty((len(frame), 0))
    if roles.expected_columns is not None and x.shape[1] != roles.expected_columns:
        logger.warning(
            "%s: the covariates expand to %d columns, the roles expect %d", path, x.shape[1], roles.expected_columns
        )

    z = z_names = None
    if roles.instruments:
        w = np.column_stack([_numeric(frame, column) for column in roles.instruments])
        z = np.hstack([x, w])
        z_names = tuple(names) + roles.instruments
    logger.info("loaded %s: %d rows, %d covariate columns", path, len(frame), x.shape[1])
    return Dataset(
        x=x,
        a=a,
        y=y,
        z=z,
        x_columns_in_z=None if z is None else tuple(range(x.shape[1])),
        x_names=tuple(names),
        z_names=z_names or (),
    )


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as stream:
        for chunk in iter(lambda: stream.read(CHUNK_SIZE), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _cache_dir(cache_dir: Optional[Union[str, Path]]) -> Path:
    if cache_dir is not None:
        return Path(cache_dir)
    return Path(Config.INTERVENTIONAL_CACHE_DIR or DEFAULT_CACHE_DIR)


def fetch_rhc(cache_dir: Optional[Union[str, Path]] = None) -> Path:
    """
    Download the public RHC CSV to the cache and return its path.

    The SHA-256 of the downloaded file is recorded next to it and checked on every later call, so a
    warm cache never touches the network. Config.data.rhc_sha256, when set, pins the digest the
    download itself must have.

    Args:
        cache_dir: Where to keep the file, default $INTERVENTIONAL_CACHE_DIR or ~/.cache/interventional

    Returns:
        Path: The cached CSV

    Raises:
        FetchError: If the download fails
        DigestMismatchError: If the cached or downloaded file does not match its recorded digest
    """
    directory = _cache_dir(cache_dir)
    target = directory / RHC_FILE
    sidecar = directory / f"{RHC_FILE}.sha256"
    pinned = Config.data.rhc_sha256

    if target.exists() and sidecar.exists():
        recorded = sidecar.read_text(encoding="utf-8").strip()
        actual = _sha256(target)
        if actual != recorded or (pinned and actual != pinned):
            raise DigestMismatchError(
                f"the cached {target} has digest {actual}, expected {pinned or recorded}. "
                f"Delete {directory} to download it again"
            )
        logger.debug("using cached %s", target)
        return target

    url = Config.data.rhc_url
    logger.info("downloading %s", url)
    try:
        response = requests.get(url, timeout=Config.data.timeout)
        response.raise_for_status()
    except requests.RequestException as err:
        raise FetchError(f"cannot download {url}: {err}") from err
    content = response.content
    actual = hashlib.sha256(content).hexdigest()
    if pinned and actual != pinned:
        raise DigestMismatchError(
            f"{url} served content with digest {actual}, expected {pinned}. "
            "The upstream file changed; check it and update data.rhc_sha256"
        )

    directory.mkdir(parents=True, exist_ok=True)
    target.write_bytes(content)
    sidecar.write_text(actual + "\n", encoding="utf-8")
    rows = len(_read(target))
    if rows != Config.data.rhc_rows:
        logger.warning("%s has %d data rows, expected %d", target, rows, Config.data.rhc_rows)
    return target

"""Datasets of aggregated interval rows and their CSV/JSON interchange formats.

CSV conventions: header row mandatory, comma separator, decimal point.
Interval indices are 1-based in files and 0-based in memory.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .survival import IntervalGrid, KmIntervalRecord, ObservationRow

__all__ = [
    "Dataset",
    "DataFormatError",
    "read_km_counts",
    "read_observations",
    "write_observations",
    "grid_from_json",
    "grid_to_json",
]

KM_COLUMNS = ("study", "interval", "n_at_risk", "deaths", "censored")
OBS_COLUMNS = ("study", "int_low", "int_high", "events", "exposure")


class DataFormatError(ValueError):
    """Malformed input file; message carries the offending line or field."""


@dataclass(frozen=True)
class Dataset:
    """Observation rows plus the grid they are binned on.

    `studies` fixes the study order used everywhere downstream (parameter
    indexing, output columns). By default it is the order of first appearance
    in `rows`; passing it explicitly also allows studies without any rows
    (useful for prior-only runs).
    """

    rows: tuple[ObservationRow, ...]
    grid: IntervalGrid
    studies: tuple[str, ...] = field(default=())

    def __init__(
        self,
        rows: Iterable[ObservationRow],
        grid: IntervalGrid,
        studies: Sequence[str] | None = None,
    ):
        rows = tuple(rows)
        K = grid.n_intervals
        seen: list[str] = []
        for r in rows:
            if not 0 <= r.int_low <= r.int_high < K:
                raise ValueError(
                    f"row for study {r.study!r} spans intervals "
                    f"[{r.int_low}, {r.int_high}] outside the {K}-interval grid"
                )
            if r.study not in seen:
                seen.append(r.study)
        if studies is None:
            studies = seen
        else:
            studies = list(studies)
            missing = [s for s in seen if s not in studies]
            if missing:
                raise ValueError(f"rows reference studies not listed: {missing}")
        ncov = {len(r.covariates) for r in rows}
        if len(ncov) > 1:
            raise ValueError(f"inconsistent covariate counts across rows: {sorted(ncov)}")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "studies", tuple(studies))

    @property
    def n_studies(self) -> int:
        return len(self.studies)

    @property
    def n_covariates(self) -> int:
        return len(self.rows[0].covariates) if self.rows else 0

    def study_index(self, label: str) -> int:
        try:
            return self.studies.index(label)
        except ValueError:
            raise KeyError(f"unknown study {label!r}; have {list(self.studies)}") from None

    def subset(self, studies: Sequence[str]) -> "Dataset":
        """Rows for the given studies only, in the given study order."""
        keep = set(studies)
        return Dataset(
            [r for r in self.rows if r.study in keep], self.grid, studies=list(studies)
        )

    def total_events(self) -> int:
        return sum(r.events for r in self.rows)

    def total_exposure(self) -> float:
        return sum(r.exposure for r in self.rows)


def _open_rows(path: str | Path, required: Sequence[str]) -> tuple[list[str], list[tuple[int, dict]]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataFormatError(f"{path}: empty file, expected a header row")
        header = [c.strip() for c in reader.fieldnames]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing required column(s) {missing}")
        records = [(reader.line_num, row) for row in reader]
    return header, records


def _parse(value: str, kind, path, line, column):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise DataFormatError(
            f"{path}, line {line}: cannot parse {column}={value!r} as {kind.__name__}"
        ) from None


def read_km_counts(path: str | Path) -> list[KmIntervalRecord]:
    """Read at-risk/death/censored count records (columns: study, interval,
    n_at_risk, deaths, censored; interval 1-based)."""
    _, records = _open_rows(path, KM_COLUMNS)
    out = []
    for line, row in records:
        try:
            rec = KmIntervalRecord(
                study=row["study"].strip(),
                interval=_parse(row["interval"], int, path, line, "interval") - 1,
                n_at_risk=_parse(row["n_at_risk"], int, path, line, "n_at_risk"),
                deaths=_parse(row["deaths"], int, path, line, "deaths"),
                censored=_parse(row["censored"], int, path, line, "censored"),
            )
        except ValueError as exc:
            raise DataFormatError(f"{path}, line {line}: {exc}") from None
        if rec.interval < 0:
            raise DataFormatError(f"{path}, line {line}: interval must be >= 1")
        out.append(rec)
    return out


def read_observations(path: str | Path, grid: IntervalGrid) -> Dataset:
    """Read aggregated observation rows.

    Required columns: study, int_low, int_high, events, exposure. Any further
    columns are treated as covariates, in header order.
    """
    header, records = _open_rows(path, OBS_COLUMNS)
    cov_cols = [c for c in header if c not in OBS_COLUMNS]
    rows = []
    for line, row in records:
        try:
            obs = ObservationRow(
                study=row["study"].strip(),
                int_low=_parse(row["int_low"], int, path, line, "int_low") - 1,
                int_high=_parse(row["int_high"], int, path, line, "int_high") - 1,
                events=_parse(row["events"], int, path, line, "events"),
                exposure=_parse(row["exposure"], float, path, line, "exposure"),
                covariates=tuple(
                    _parse(row[c], float, path, line, c) for c in cov_cols
                ),
            )
        except ValueError as exc:
            raise DataFormatError(f"{path}, line {line}: {exc}") from None
        if obs.int_low < 0:
            raise DataFormatError(f"{path}, line {line}: int_low must be >= 1")
        rows.append(obs)
    try:
        return Dataset(rows, grid)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def write_observations(
    dataset: Dataset, path: str | Path, covariate_names: Sequence[str] | None = None
) -> None:
    """Write observation rows back out (interval indices 1-based)."""
    ncov = dataset.n_covariates
    if covariate_names is None:
        covariate_names = [f"x{i + 1}" for i in range(ncov)]
    if len(covariate_names) != ncov:
        raise ValueError(f"need {ncov} covariate names, got {len(covariate_names)}")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(OBS_COLUMNS) + list(covariate_names))
        for r in dataset.rows:
            writer.writerow(
                [r.study, r.int_low + 1, r.int_high + 1, r.events, repr(r.exposure)]
                + [repr(x) for x in r.covariates]
            )


def grid_from_json(obj: dict | str | Path) -> IntervalGrid:
    """Build a grid from a JSON object or file: {"boundaries": [...], "unit": "..."}."""
    if not isinstance(obj, dict):
        with Path(obj).open() as fh:
            obj = json.load(fh)
    if "boundaries" not in obj:
        raise DataFormatError('grid JSON needs a "boundaries" field')
    return IntervalGrid(obj["boundaries"], unit=obj.get("unit", "years"))


def grid_to_json(grid: IntervalGrid) -> dict:
    return {"boundaries": list(grid.boundaries), "unit": grid.unit}

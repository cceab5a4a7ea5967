"""CSV and JSON input/output.

All floats are written with ``repr``, which round-trips IEEE-754 doubles
exactly; outputs carry no timestamps, so a given configuration and seed
reproduce every artifact byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

METRICS_COLUMNS = (
    "experiment",
    "filter",
    "rule",
    "beta",
    "run_id",
    "seed",
    "dim",
    "nmse",
    "coverage",
    "medae",
    "min_ess",
    "mean_ess",
)


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "" if math.isnan(value) else repr(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def write_metrics_csv(path, rows: list[dict]) -> None:
    write_csv(path, METRICS_COLUMNS, ([row.get(c) for c in METRICS_COLUMNS] for row in rows))


def write_summary_json(path, summary: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_dataset_csv(path, states: np.ndarray, observations: np.ndarray, flags: np.ndarray) -> None:
    """One row per step: t, state coordinates, observation coordinates, contamination flag."""
    states = np.atleast_2d(states)
    observations = np.atleast_2d(observations)
    header = (
        ["t"]
        + [f"x_{j + 1}" for j in range(states.shape[1])]
        + [f"y_{j + 1}" for j in range(observations.shape[1])]
        + ["contaminated_flag"]
    )
    rows = (
        [t + 1, *states[t], *observations[t], bool(flags[t])]
        for t in range(states.shape[0])
    )
    write_csv(path, header, rows)


@dataclass
class SensorSeries:
    """A univariate sensor time series on a strictly increasing time grid."""

    timestamps: np.ndarray  # (T,)
    values: np.ndarray  # (T,), NaN where missing
    mask: np.ndarray  # (T,) bool, True where a value is present
    truth: np.ndarray | None = None  # optional reference signal

    def __len__(self) -> int:
        return self.timestamps.shape[0]


def _parse_float(cell: str, row: int, column: str) -> float:
    cell = cell.strip()
    if cell == "" or cell.lower() == "nan":
        return math.nan
    try:
        return float(cell)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {column!r} at data row {row}: {cell!r}") from exc


def ingest_csv(
    path,
    time_column: str = "t",
    value_column: str = "v",
    truth_column: str | None = None,
) -> SensorSeries:
    """Read a header-labelled CSV into a sensor series.

    Timestamps must be strictly increasing; missing or NaN values become
    masked entries that the filters treat as prediction-only steps.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigurationError(f"{path}: empty file")
        for col in filter(None, (time_column, value_column, truth_column)):
            if col not in reader.fieldnames:
                raise ConfigurationError(f"{path}: missing column {col!r}")
        times, values, truths = [], [], []
        for i, record in enumerate(reader, start=1):
            t = _parse_float(record[time_column], i, time_column)
            if math.isnan(t):
                raise ConfigurationError(f"{path}: missing timestamp at data row {i}")
            if times and t <= times[-1]:
                raise ConfigurationError(
                    f"{path}: timestamps must be strictly increasing (data row {i})"
                )
            times.append(t)
            values.append(_parse_float(record[value_column], i, value_column))
            if truth_column is not None:
                truths.append(_parse_float(record[truth_column], i, truth_column))
    if not times:
        raise ConfigurationError(f"{path}: no data rows")
    values = np.asarray(values)
    return SensorSeries(
        timestamps=np.asarray(times),
        values=values,
        mask=~np.isnan(values),
        truth=np.asarray(truths) if truth_column is not None else None,
    )


def uniform_step(timestamps: np.ndarray, rtol: float = 1e-6) -> float:
    """The common grid step, or an error if the grid is not uniform."""
    diffs = np.diff(np.asarray(timestamps, dtype=float))
    if diffs.size == 0:
        raise ConfigurationError("need at least two timestamps")
    dt = float(diffs[0])
    if np.any(np.abs(diffs - dt) > rtol * max(abs(dt), 1e-12)):
        raise ConfigurationError(
            "timestamps must form a uniform grid; resample the series (missing values may be NaN)"
        )
    return dt

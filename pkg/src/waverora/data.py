"""CSV ingestion, chronological splits, and leakage-free window sampling.

Splits are contiguous in time. The validation and test ranges are extended
backward by the lookback so their first forecast target still has a full
input window, while no label region ever overlaps an earlier split. Global
z-scoring uses train-range statistics only; everything here is deterministic,
shuffling belongs to the trainer.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd


class LoadError(ValueError):
    """Input table missing, malformed, or containing non-numeric cells."""


@dataclass(frozen=True)
class SeriesDataset:
    values: np.ndarray  # T x M, read-only
    variable_names: tuple
    frequency: str
    name: str

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def variables(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple  # (train, val, test), positive, summing to 1

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValueError(
                f"split fractions must be three positive numbers, got {self.fractions}"
            )
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.fractions}")


@dataclass(frozen=True)
class WindowSpec:
    lookback: int
    horizon: int
    stride: int = 1

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1 or self.stride < 1:
            raise ValueError(
                f"lookback, horizon, and stride must be at least 1, got "
                f"({self.lookback}, {self.horizon}, {self.stride})"
            )


def load_csv(path, name=None, frequency="unknown"):
    """Read a header-first CSV into a dataset, dropping a leading timestamp.

    The first column is dropped (with a warning) only when it is entirely
    non-numeric; any other unparseable or missing cell is an error that names
    the offending row and column.
    """
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise LoadError(f"no such file: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise LoadError(f"{path}: cannot parse CSV: {err}") from None
    if frame.shape[1] == 0:
        raise LoadError(f"{path}: no columns found")

    first = frame.columns[0]
    coerced = pd.to_numeric(frame[first], errors="coerce")
    if len(frame) > 0 and coerced.isna().all() and not frame[first].isna().all():
        warnings.warn(
            f"{path}: dropping non-numeric leading column {first!r} (timestamp)",
            stacklevel=2,
        )
        frame = frame.drop(columns=[first])
    if frame.shape[1] == 0:
        raise LoadError(f"{path}: no data columns after dropping the timestamp")

    columns = []
    for col in frame.columns:
        numeric = pd.to_numeric(frame[col], errors="coerce")
        bad = numeric.isna()
        if bad.any():
            row = int(np.argmax(bad.to_numpy()))
            original = frame[col].iloc[row]
            if original is None or (isinstance(original, float) and np.isnan(original)):
                raise LoadError(f"{path}: missing value at row {row}, column {col!r}")
            try:
                float(original)
            except (TypeError, ValueError):
                raise LoadError(
                    f"{path}: unparseable value {original!r} at row {row}, column {col!r}"
                ) from None
            raise LoadError(f"{path}: missing value at row {row}, column {col!r}")
        columns.append(numeric.to_numpy(dtype=np.float64))
    values = np.column_stack(columns)
    return SeriesDataset(
        values=values,
        variable_names=tuple(str(c) for c in frame.columns),
        frequency=frequency,
        name=name or str(path),
    )


def split(ds, spec, window):
    """Three chronological ranges; val/test reach back by the lookback.

    Every range must hold at least one full (lookback + horizon) window.
    """
    t = ds.length
    # per-fraction flooring, with a hair of slack so 0.7*10 style float
    # artifacts cannot shave a row off a boundary
    train_end = int(t * spec.fractions[0] + 1e-9)
    val_end = train_end + int(t * spec.fractions[1] + 1e-9)
    lookback = window.lookback
    ranges = (
        range(0, train_end),
        range(max(0, train_end - lookback), val_end),
        range(max(0, val_end - lookback), t),
    )
    need = window.lookback + window.horizon
    for label, r in zip(("train", "val", "test"), ranges):
        if len(r) < need:
            raise ValueError(
                f"{label} split has {len(r)} rows, fewer than lookback + horizon = {need}"
            )
    return ranges


def standardize(ds, train_range):
    """Z-score every column by train-range statistics; returns (dataset, mean, std)."""
    if len(train_range) == 0:
        raise ValueError("train range is empty")
    train = ds.values[train_range.start : train_range.stop]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    flat = std < 1e-8
    if flat.any():
        names = [ds.variable_names[i] for i in np.flatnonzero(flat)]
        warnings.warn(
            f"constant train columns {names}: flooring std at 1e-8", stacklevel=2
        )
        std = np.where(flat, 1e-8, std)
    scaled = SeriesDataset(
        values=(ds.values - mean) / std,
        variable_names=ds.variable_names,
        frequency=ds.frequency,
        name=ds.name,
    )
    return scaled, mean, std


def windows(ds, index_range, spec):
    """(input, target) view pairs at every stride offset inside the range."""
    first = index_range.start
    last_start = index_range.stop - spec.lookback - spec.horizon
    out = []
    for start in range(first, last_start + 1, spec.stride):
        x = ds.values[start : start + spec.lookback]
        y = ds.values[start + spec.lookback : start + spec.lookback + spec.horizon]
        out.append((x, y))
    return out


def window_count(range_length, spec):
    if range_length < spec.lookback + spec.horizon:
        return 0
    return (range_length - spec.lookback - spec.horizon) // spec.stride + 1


# -- dataset registry ------------------------------------------------------------

_ETT_FRACTIONS = (0.6, 0.2, 0.2)
_DEFAULT_FRACTIONS = (0.7, 0.1, 0.2)

_BUILTIN = {
    "ETTh1": {"path": "ETTh1.csv", "fractions": _ETT_FRACTIONS, "variables": 7, "frequency": "1h"},
    "ETTh2": {"path": "ETTh2.csv", "fractions": _ETT_FRACTIONS, "variables": 7, "frequency": "1h"},
    "ETTm1": {"path": "ETTm1.csv", "fractions": _ETT_FRACTIONS, "variables": 7, "frequency": "15min"},
    "ETTm2": {"path": "ETTm2.csv", "fractions": _ETT_FRACTIONS, "variables": 7, "frequency": "15min"},
    "weather": {"path": "weather.csv", "fractions": _DEFAULT_FRACTIONS, "variables": 21, "frequency": "10min"},
    "electricity": {"path": "electricity.csv", "fractions": _DEFAULT_FRACTIONS, "variables": 321, "frequency": "1h"},
    "traffic": {"path": "traffic.csv", "fractions": _DEFAULT_FRACTIONS, "variables": 862, "frequency": "1h"},
    "solar": {"path": "solar.csv", "fractions": _DEFAULT_FRACTIONS, "variables": 137, "frequency": "10min"},
}


def builtin_registry():
    return {name: dict(entry) for name, entry in _BUILTIN.items()}


def load_registry(path):
    """Registry JSON: dataset name -> {path, fractions, variables?, frequency?}."""
    with open(path) as f:
        raw = json.load(f)
    registry = {}
    for name, entry in raw.items():
        if "path" not in entry:
            raise ValueError(f"registry entry {name!r} has no path")
        fractions = tuple(entry.get("fractions", _DEFAULT_FRACTIONS))
        registry[name] = {
            "path": entry["path"],
            "fractions": fractions,
            "variables": entry.get("variables"),
            "frequency": entry.get("frequency", "unknown"),
        }
    return registry


def resolve_dataset(name, registry, base_dir=None):
    """Load a registered dataset (or a bare CSV path) and its split fractions."""
    import os

    if name in registry:
        entry = registry[name]
        path = entry["path"]
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        ds = load_csv(path, name=name, frequency=entry.get("frequency", "unknown"))
        expected = entry.get("variables")
        if expected is not None and ds.variables != expected:
            raise LoadError(
                f"dataset {name}: expected {expected} variables, file has {ds.variables}"
            )
        return ds, SplitSpec(tuple(entry["fractions"]))
    if name.endswith(".csv"):
        path = name
        if base_dir and not os.path.isabs(path):
            candidate = os.path.join(base_dir, path)
            if os.path.exists(candidate) and not os.path.exists(path):
                path = candidate
        return load_csv(path), SplitSpec(_DEFAULT_FRACTIONS)
    raise LoadError(
        f"unknown dataset {name!r}; registered names: {', '.join(sorted(registry))} "
        f"(or pass a .csv path)"
    )

"""Weekly rate series with explicit missing slots, and JSON-lines dataset I/O.

Storage format, one record per line::

    {"series_id": "fc1-day", "start": 0, "weight": 10.0, "group": 0,
     "values": [0.9, null, 0.85]}

In memory a missing observation is ``NaN`` in a read-only float64 array;
on disk it is always an explicit ``null``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed dataset files or records violating invariants."""


def _frozen_values(values: Iterable[float | None]) -> np.ndarray:
    arr = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeriesRecord:
    """One series of weekly observations.

    ``values[i]`` is the observation for absolute week ``start + i``; ``NaN``
    marks a missing week. ``weight`` is the shift-size proxy used by wMAE and
    ``group`` is the static site category fed to the model as an embedding.
    """

    series_id: str
    start: int
    values: np.ndarray
    weight: float = 1.0
    group: int = 0

    def __post_init__(self) -> None:
        values = self.values
        if not (isinstance(values, np.ndarray) and values.dtype == np.float64 and not values.flags.writeable):
            values = _frozen_values(values)
            object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size == 0:
            raise DatasetError(f"series {self.series_id!r}: observations must be a non-empty sequence")
        if self.start < 0:
            raise DatasetError(f"series {self.series_id!r}: start week must be >= 0, got {self.start}")
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise DatasetError(f"series {self.series_id!r}: weight must be positive, got {self.weight}")
        if self.group < 0:
            raise DatasetError(f"series {self.series_id!r}: group must be >= 0, got {self.group}")
        present = ~np.isnan(values)
        bad = present & ((values < 0.0) | (values > 1.0))
        if bad.any():
            pos = int(np.flatnonzero(bad)[0])
            raise DatasetError(
                f"series {self.series_id!r}: value {values[pos]!r} at position {pos} is outside [0, 1]"
            )
        if np.isinf(values).any():
            raise DatasetError(f"series {self.series_id!r}: infinite value")

    @property
    def end(self) -> int:
        """Exclusive end week."""
        return self.start + len(self.values)

    @property
    def weeks(self) -> np.ndarray:
        return np.arange(self.start, self.end)

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeSeriesRecord):
            return NotImplemented
        return (
            self.series_id == other.series_id
            and self.start == other.start
            and self.weight == other.weight
            and self.group == other.group
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None  # type: ignore[assignment]

    def value_at(self, week: int) -> float | None:
        i = week - self.start
        if 0 <= i < len(self.values) and not np.isnan(self.values[i]):
            return float(self.values[i])
        return None

    def replace_values(self, values: Sequence[float | None] | np.ndarray, start: int | None = None) -> TimeSeriesRecord:
        """Copy of this record with new observations (and optionally a new start)."""
        if isinstance(values, np.ndarray):
            values = np.array(values, dtype=np.float64)
            values.setflags(write=False)
        return TimeSeriesRecord(
            self.series_id, self.start if start is None else start, values, self.weight, self.group
        )

    def to_json(self) -> dict:
        return {
            "series_id": self.series_id,
            "start": self.start,
            "weight": self.weight,
            "group": self.group,
            "values": [None if np.isnan(v) else float(v) for v in self.values],
        }


def slice_record(record: TimeSeriesRecord, start: int, stop: int) -> TimeSeriesRecord:
    """Sub-record covering absolute weeks ``[start, stop)``.

    Weeks outside the record's own span come back as missing.
    """
    if start >= stop:
        raise ValueError(f"empty or reversed week range [{start}, {stop})")
    if start < 0:
        raise ValueError(f"week index must be >= 0, got {start}")
    out = np.full(stop - start, np.nan)
    lo, hi = max(start, record.start), min(stop, record.end)
    if lo < hi:
        out[lo - start : hi - start] = record.values[lo - record.start : hi - record.start]
    return record.replace_values(out, start=start)


def missing_fraction(record: TimeSeriesRecord) -> float:
    return float(np.isnan(record.values).mean())


@dataclass(frozen=True)
class Dataset:
    records: tuple[TimeSeriesRecord, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        seen: set[str] = set()
        for r in records:
            if r.series_id in seen:
                raise DatasetError(f"duplicate series_id {r.series_id!r}")
            seen.add(r.series_id)

    def __iter__(self) -> Iterator[TimeSeriesRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, series_id: str) -> TimeSeriesRecord:
        for r in self.records:
            if r.series_id == series_id:
                return r
        raise KeyError(series_id)

    @property
    def ids(self) -> list[str]:
        return [r.series_id for r in self.records]

    def truncate(self, last_week: int) -> Dataset:
        """Keep only observations up to and including ``last_week``.

        Records that start after ``last_week`` are dropped.
        """
        kept = []
        for r in self.records:
            if r.start > last_week:
                continue
            if r.end - 1 <= last_week:
                kept.append(r)
            else:
                kept.append(r.replace_values(r.values[: last_week - r.start + 1]))
        return Dataset(tuple(kept))

    def map(self, fn) -> Dataset:
        return Dataset(tuple(fn(r) for r in self.records))


def _format_float(x: float) -> str:
    return format(x, ".17g")


def dumps_record(record: TimeSeriesRecord) -> str:
    """Canonical single-line JSON: fixed key order, 17 significant digits."""
    vals = ",".join("null" if np.isnan(v) else _format_float(float(v)) for v in record.values)
    return (
        "{"
        f'"series_id":{json.dumps(record.series_id)},'
        f'"start":{record.start},'
        f'"weight":{_format_float(record.weight)},'
        f'"group":{record.group},'
        f'"values":[{vals}]'
        "}"
    )


def parse_record(obj: object, where: str = "record") -> TimeSeriesRecord:
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: expected a JSON object")
    unknown = set(obj) - {"series_id", "start", "weight", "group", "values"}
    if unknown:
        raise DatasetError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        series_id = obj["series_id"]
        start = obj["start"]
        values = obj["values"]
    except KeyError as exc:
        raise DatasetError(f"{where}: missing key {exc.args[0]!r}") from None
    if not isinstance(series_id, str):
        raise DatasetError(f"{where}: series_id must be a string")
    if not isinstance(start, int) or isinstance(start, bool):
        raise DatasetError(f"{where}: start must be an integer")
    if not isinstance(values, list):
        raise DatasetError(f"series {series_id!r}: values must be an array")
    for i, v in enumerate(values):
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v)):
            raise DatasetError(f"series {series_id!r}: non-numeric value at position {i}")
    weight = obj.get("weight", 1.0)
    group = obj.get("group", 0)
    if isinstance(weight, bool) or not isinstance(weight, (int, float)):
        raise DatasetError(f"series {series_id!r}: weight must be a number")
    if isinstance(group, bool) or not isinstance(group, int):
        raise DatasetError(f"series {series_id!r}: group must be an integer")
    return TimeSeriesRecord(series_id, start, values, float(weight), group)


def load_dataset(path: str | Path) -> Dataset:
    """Read a JSON-lines dataset. Any invalid line fails the whole load."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            records.append(parse_record(obj, where=f"line {lineno}"))
    if not records:
        raise DatasetError("empty dataset")
    return Dataset(tuple(records))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in dataset:
            fh.write(dumps_record(r))
            fh.write("\n")

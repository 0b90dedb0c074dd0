"""Residual-threshold anomaly filter with a run-length change-point guard.

An incoming actual is *flagged* when it deviates from the forecast made for
its week by more than ``delta``. Flagged weeks are replaced by missing values
(the model imputes them), unless they belong to a consecutive flagged run
longer than ``max_anomaly_run`` weeks: such a run is taken to be a change
point and kept as observed. Missing actuals are transparent: they neither
extend nor break a run and produce no report row.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from resilient_forecast import likelihood as lk
from resilient_forecast.model import ForecastResult, ModelConfig, _Stepper
from resilient_forecast.network import ParameterVector
from resilient_forecast.series import Dataset, TimeSeriesRecord


class Reason(str, enum.Enum):
    KEPT = "Kept"
    FILTERED = "FilteredAnomaly"
    CHANGE_POINT = "KeptChangePoint"


@dataclass(frozen=True)
class FilterConfig:
    delta: float = 0.25
    max_anomaly_run: int = 4

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.max_anomaly_run < 1:
            raise ValueError("max_anomaly_run must be >= 1")


@dataclass(frozen=True)
class FilterEntry:
    series_id: str
    week: int
    actual: float
    forecast: float
    flagged: bool
    filtered: bool
    reason: Reason

    def __post_init__(self) -> None:
        if self.filtered and not self.flagged:
            raise ValueError("an unflagged value cannot be filtered")
        if self.reason is Reason.CHANGE_POINT and (self.filtered or not self.flagged):
            raise ValueError("KeptChangePoint rows must be flagged and not filtered")


@dataclass(frozen=True)
class _OpenRun:
    entries: tuple[FilterEntry, ...]
    kept: bool


@dataclass
class FilterReport:
    """Per-week filter decisions.

    ``open_runs`` holds, per series, a flagged run still open at the end of
    the batch; pass the report as ``carry`` to the next
    :func:`filter_incoming` call so the guard can see the whole run. A
    provisionally filtered run that later grows past the limit is restored:
    its earlier weeks are re-emitted as ``KeptChangePoint`` rows.
    """

    entries: list[FilterEntry] = field(default_factory=list)
    open_runs: dict[str, _OpenRun] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def flagged(self) -> list[FilterEntry]:
        return [e for e in self.entries if e.flagged]

    @property
    def filtered(self) -> list[FilterEntry]:
        return [e for e in self.entries if e.filtered]

    def filtered_weeks(self) -> set[tuple[str, int]]:
        return {(e.series_id, e.week) for e in self.entries if e.filtered}

    def restored_weeks(self) -> set[tuple[str, int]]:
        """Weeks explicitly kept as observed (undoes an earlier provisional filter)."""
        return {(e.series_id, e.week) for e in self.entries if e.reason is Reason.CHANGE_POINT}

    def extend(self, other: FilterReport) -> None:
        self.entries.extend(other.entries)
        self.open_runs = dict(other.open_runs)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["series_id", "week", "actual", "forecast", "flagged", "filtered", "reason"])
            for e in self.entries:
                writer.writerow(
                    [e.series_id, e.week, repr(e.actual), repr(e.forecast),
                     str(e.flagged).lower(), str(e.filtered).lower(), e.reason.value]
                )


def guard_decisions(flags: Sequence[bool | None], max_run: int) -> list[Reason | None]:
    """Apply the run-length guard to one batch of flags.

    ``None`` marks a missing actual (no decision, transparent to runs).
    Each maximal run of flagged weeks is filtered if its length is at most
    ``max_run`` and kept as a change point otherwise.
    """
    out: list[Reason | None] = [None] * len(flags)
    run: list[int] = []

    def close() -> None:
        reason = Reason.FILTERED if len(run) <= max_run else Reason.CHANGE_POINT
        for j in run:
            out[j] = reason
        run.clear()

    for i, f in enumerate(flags):
        if f is None:
            continue
        if f:
            run.append(i)
        else:
            close()
            out[i] = Reason.KEPT
    close()
    return out


def _entries_for_series(
    series_id: str,
    weeks: Sequence[int],
    actuals: Sequence[float],
    references: Sequence[float],
    flags: Sequence[bool],
    config: FilterConfig,
    carry: _OpenRun | None,
) -> tuple[list[FilterEntry], _OpenRun | None]:
    """Guard decisions for one series' present actuals, continuing an open run."""
    entries: list[FilterEntry] = []
    run: list[int] = []
    prior = carry

    def make(i: int, reason: Reason) -> FilterEntry:
        return FilterEntry(series_id, int(weeks[i]), float(actuals[i]), float(references[i]),
                           bool(flags[i]), reason is Reason.FILTERED, reason)

    def decide() -> _OpenRun:
        earlier = prior.entries if prior else ()
        kept = len(earlier) + len(run) > config.max_anomaly_run
        if kept and prior and not prior.kept:
            earlier = tuple(replace(e, filtered=False, reason=Reason.CHANGE_POINT) for e in earlier)
            entries.extend(earlier)
        new = [make(i, Reason.CHANGE_POINT if kept else Reason.FILTERED) for i in run]
        entries.extend(new)
        return _OpenRun(tuple(earlier) + tuple(new), kept)

    for i in range(len(actuals)):
        if flags[i]:
            run.append(i)
            continue
        if run or prior:
            decide()
            run, prior = [], None
        entries.append(make(i, Reason.KEPT))
    if run:
        return entries, decide()
    return entries, prior


def filter_incoming(
    actuals: Dataset,
    prior_forecasts: Mapping[str, ForecastResult],
    config: FilterConfig,
    carry: FilterReport | None = None,
) -> tuple[Dataset, FilterReport]:
    """Compare new actuals with last period's median forecasts.

    Returns the actuals with filtered weeks set to missing, and the report.
    """
    report = FilterReport()
    records = []
    for record in actuals:
        fc = prior_forecasts.get(record.series_id)
        if fc is None:
            raise ValueError(f"no prior forecast for series {record.series_id!r}")
        present = np.flatnonzero(~np.isnan(record.values))
        weeks = record.start + present
        ys = record.values[present]
        try:
            refs = np.array([fc.point_at(int(w)) for w in weeks])
        except KeyError as exc:
            raise ValueError(f"series {record.series_id!r}: {exc.args[0]}") from None
        flags = np.abs(ys - refs) > config.delta
        prev = carry.open_runs.get(record.series_id) if carry is not None else None
        entries, open_run = _entries_for_series(record.series_id, weeks, ys, refs, flags, config, prev)
        report.entries.extend(entries)
        if open_run is not None:
            report.open_runs[record.series_id] = open_run
        filtered_now = {e.week for e in entries if e.filtered}
        values = record.values.copy()
        for w in filtered_now:
            values[w - record.start] = np.nan
        records.append(record.replace_values(values))
    if carry is not None:
        seen = set(actuals.ids)
        for sid, open_run in carry.open_runs.items():
            if sid not in seen:
                report.open_runs[sid] = open_run
    return Dataset(tuple(records)), report


def mask_weeks(dataset: Dataset, weeks: Iterable[tuple[str, int]]) -> Dataset:
    """Copy of ``dataset`` with the given (series_id, week) slots set missing."""
    by_series: dict[str, list[int]] = {}
    for sid, w in weeks:
        by_series.setdefault(sid, []).append(w)
    if not by_series:
        return dataset

    def apply(r: TimeSeriesRecord) -> TimeSeriesRecord:
        ws = [w for w in by_series.get(r.series_id, ()) if r.start <= w < r.end]
        if not ws:
            return r
        values = r.values.copy()
        values[np.array(ws) - r.start] = np.nan
        return r.replace_values(values)

    return dataset.map(apply)


def filter_history(
    dataset: Dataset,
    params: ParameterVector,
    model_config: ModelConfig,
    filter_config: FilterConfig,
) -> tuple[Dataset, FilterReport]:
    """Run the filter over each series' full history in one chronological pass.

    The reference for week ``t`` is the model's one-week-ahead mean given the
    (already cleaned) weeks before it. Filtered weeks are fed back as missing
    (so the model imputes them). When a run outgrows the guard the state is
    rewound to the run start and replayed on the original values. Weeks with
    no observed value before them have no reference and are never flagged.
    """
    report = FilterReport()
    cleaned = []
    for record in dataset:
        entries, values = _filter_series(record, params, model_config, filter_config)
        report.entries.extend(entries)
        cleaned.append(record if np.array_equal(values, record.values, equal_nan=True) else record.replace_values(values))
    return Dataset(tuple(cleaned)), report


def _filter_series(record, params, model_config, filter_config):
    stepper = _Stepper(params, model_config, np.array([record.group]))
    gaussian = model_config.likelihood is lk.Likelihood.GAUSSIAN
    orig = record.values
    used = orig.copy()
    n = len(orig)
    weeks = record.weeks
    L, delta = filter_config.max_anomaly_run, filter_config.delta

    def advance(h, prev_raw, i):
        lag = used[i - 1] if i > 0 else np.nan
        missing = np.isnan(lag)
        if missing:
            lag = stepper.mean(prev_raw)[0]
        x = stepper.inputs(np.array([lag]), np.array([missing]), np.array([weeks[i]]))
        return stepper.step(h, x)

    def predicted(raw):
        m = float(stepper.mean(raw)[0])
        return min(max(m, 0.0), 1.0) if gaussian else m

    h, raw = stepper.zero_state(1), stepper.initial_raw(1)
    refs = np.full(n, np.nan)
    flags = np.zeros(n, dtype=bool)
    reasons: dict[int, Reason] = {}
    run: list[int] = []
    run_kept = False
    snapshot = None
    seen_obs = False

    def close_run():
        nonlocal run, run_kept
        for j in run:
            reasons[j] = Reason.CHANGE_POINT if run_kept else Reason.FILTERED
        run, run_kept = [], False

    for i in range(n):
        h, raw = advance(h, raw, i)
        y = orig[i]
        if np.isnan(y):
            continue
        refs[i] = predicted(raw)
        flagged = seen_obs and abs(y - refs[i]) > delta
        seen_obs = True
        if not flagged:
            close_run()
            reasons[i] = Reason.KEPT
            continue
        flags[i] = True
        if not run:
            snapshot = (h.copy(), raw.copy())
        run.append(i)
        if run_kept:
            continue
        used[i] = np.nan
        if len(run) > L:
            run_kept = True
            for j in run:
                used[j] = orig[j]
            h, raw = snapshot
            for j in range(run[0] + 1, i + 1):
                h, raw = advance(h, raw, j)
    close_run()
    entries = [
        FilterEntry(record.series_id, int(weeks[i]), float(orig[i]), float(refs[i]),
                    bool(flags[i]), reasons[i] is Reason.FILTERED, reasons[i])
        for i in sorted(reasons)
    ]
    return entries, used

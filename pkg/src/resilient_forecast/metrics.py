"""MAE / wMAE and forecast scoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from resilient_forecast.model import ForecastResult
from resilient_forecast.series import Dataset


def mae(forecasts: Sequence[float], actuals: Sequence[float], mask: Sequence[bool] | None = None) -> float:
    """Mean absolute error over the points where ``mask`` is true."""
    f = np.asarray(forecasts, dtype=np.float64)
    y = np.asarray(actuals, dtype=np.float64)
    if f.shape != y.shape:
        raise ValueError("forecasts and actuals differ in length")
    m = np.ones(f.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != f.shape:
        raise ValueError("mask differs in length")
    if not m.any():
        raise ValueError("no evaluable points")
    return float(np.mean(np.abs(f[m] - y[m])))


def wmae(errors: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted mean of per-series MAEs."""
    e = np.asarray(errors, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if e.size == 0:
        raise ValueError("no series to aggregate")
    if e.shape != w.shape:
        raise ValueError("errors and weights differ in length")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if np.all(w == w[0]):
        return float(np.mean(e))
    return float(np.sum(w * e) / np.sum(w))


@dataclass
class MetricReport:
    per_series: dict[str, float] = field(default_factory=dict)
    mae: float = float("nan")
    wmae: float = float("nan")
    count: int = 0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["series_id", "mae"])
            for sid, v in self.per_series.items():
                writer.writerow([sid, repr(v)])
            writer.writerow(["__aggregate_mae__", repr(self.mae)])
            writer.writerow(["__aggregate_wmae__", repr(self.wmae)])
            writer.writerow(["__count__", self.count])


def score_forecasts(
    forecasts: Mapping[str, ForecastResult],
    actuals: Dataset,
    exclude: Iterable[tuple[str, int]] = (),
    series: Iterable[str] | None = None,
) -> MetricReport:
    """Score point forecasts (medians) against observed actuals.

    Weeks in ``exclude`` and weeks without an observed actual are not
    evaluated. Series with no evaluable week are skipped. Aggregate MAE is
    the unweighted mean of per-series MAEs; wMAE weights them by the
    series weight.
    """
    skip = set(exclude)
    ids = list(forecasts) if series is None else list(series)
    report = MetricReport()
    weights = []
    for sid in ids:
        fc = forecasts[sid]
        try:
            record = actuals[sid]
        except KeyError:
            continue
        ys = np.array([np.nan if record.value_at(int(w)) is None else record.value_at(int(w)) for w in fc.weeks])
        mask = ~np.isnan(ys) & np.array([(sid, int(w)) not in skip for w in fc.weeks])
        if not mask.any():
            continue
        report.per_series[sid] = mae(fc.point_forecast, np.nan_to_num(ys), mask)
        report.count += int(mask.sum())
        weights.append(record.weight)
    if report.per_series:
        errs = list(report.per_series.values())
        report.mae = float(np.mean(errs))
        report.wmae = wmae(errs, weights)
    return report

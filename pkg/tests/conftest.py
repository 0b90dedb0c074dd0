from __future__ import annotations

import numpy as np
import pytest

from resilient_forecast.anomaly import FilterConfig
from resilient_forecast.model import ModelConfig
from resilient_forecast.series import Dataset, TimeSeriesRecord
from resilient_forecast.synthetic import GeneratorConfig
from resilient_forecast.training import SamplerConfig, TrainConfig

# Small enough for unit tests to train in a second or two.
TINY_MODEL = ModelConfig(context_length=12, horizon=4, hidden_size=4, num_groups=2, embedding_size=2,
                         num_sample_paths=20)
TINY_TRAIN = TrainConfig(epochs=3, learning_rate=1e-2, batch_size=8, n_average=2)
TINY_SAMPLER = SamplerConfig(windows_per_epoch=16)
TINY_GENERATOR = GeneratorConfig(num_series=6, history_weeks=40, num_groups=2)


def make_record(values, series_id="s", start=0, weight=1.0, group=0) -> TimeSeriesRecord:
    return TimeSeriesRecord(series_id, start, [None if v is None else v for v in values], weight, group)


def flat_dataset(level=0.8, n=4, weeks=40) -> Dataset:
    return Dataset(tuple(make_record([level] * weeks, f"c{i}", group=i % 2) for i in range(n)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny():
    return TINY_MODEL, TINY_TRAIN, TINY_SAMPLER, FilterConfig()


# Acceptance criteria report: one PASS/FAIL line per criterion at the end of the run.
_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        number, title = props["criterion"]
        outcome = "PASS" if report.passed else "FAIL"
        _CRITERIA[number] = (title, outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome, detail = _CRITERIA[number]
        line = f"criterion {number} {title}: {outcome}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)

"""Synthetic weekly attendance-rate data.

Per series ``i`` and week ``t``::

    x_t = logit(base_rate) + amplitude * sin(2 pi t / 52 + phase_i) + drift_t + eps_t
    value_t = sigmoid(x_t)

``eps`` is a stationary AR(1) process with marginal standard deviation
``noise_sigma`` and lag-one correlation ``noise_persistence`` (0 gives white
noise).

Closure events overwrite values with U[0, 0.05] draws; every
``missing_every``-th series loses one week per ``missing_period`` weeks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from resilient_forecast.series import Dataset, TimeSeriesRecord

CLOSURE_MAX = 0.05


@dataclass(frozen=True)
class GeneratorConfig:
    num_series: int = 40
    history_weeks: int = 156
    base_rate: float = 0.8
    noise_sigma: float = 0.3  # on the logit scale
    noise_persistence: float = 0.8
    annual_amplitude: float = 0.5  # on the logit scale
    num_groups: int = 4
    drift_onset: int | None = None
    drift_magnitude: float = 0.0  # logit-scale level shift reached after the ramp
    drift_ramp_weeks: int = 1
    # (series index, start week, length in weeks)
    closures: tuple[tuple[int, int, int], ...] = ()
    missing_every: int = 4
    missing_period: int = 13
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "closures", tuple(tuple(int(v) for v in c) for c in self.closures))
        if self.num_series < 1 or self.history_weeks < 1:
            raise ValueError("num_series and history_weeks must be >= 1")
        if not 0.0 < self.base_rate < 1.0:
            raise ValueError("base_rate must lie in (0, 1)")
        if not 0.0 <= self.noise_persistence < 1.0:
            raise ValueError("noise_persistence must lie in [0, 1)")
        if self.noise_sigma < 0 or self.annual_amplitude < 0:
            raise ValueError("noise_sigma and annual_amplitude must be >= 0")
        if self.num_groups < 1 or self.drift_ramp_weeks < 1:
            raise ValueError("num_groups and drift_ramp_weeks must be >= 1")
        if self.missing_every < 0 or self.missing_period < 1:
            raise ValueError("missing_every must be >= 0 and missing_period >= 1")
        for series, start, length in self.closures:
            if not 0 <= series < self.num_series or start < 0 or length < 1:
                raise ValueError(f"invalid closure event {(series, start, length)}")


def series_group(config: GeneratorConfig, i: int) -> int:
    return i % config.num_groups


def has_missing_pattern(config: GeneratorConfig, i: int) -> bool:
    return config.missing_every > 0 and i % config.missing_every == config.missing_every - 1


def missing_weeks(config: GeneratorConfig, i: int) -> np.ndarray:
    """Boolean mask of scheduled missing weeks for series ``i``."""
    t = np.arange(config.history_weeks)
    if not has_missing_pattern(config, i):
        return np.zeros(config.history_weeks, dtype=bool)
    return t % config.missing_period == i % config.missing_period


def drift(config: GeneratorConfig, t: np.ndarray) -> np.ndarray:
    if config.drift_onset is None or config.drift_magnitude == 0.0:
        return np.zeros(len(t))
    frac = np.clip((t - config.drift_onset + 1) / config.drift_ramp_weeks, 0.0, 1.0)
    return config.drift_magnitude * frac


def signal(config: GeneratorConfig, phases: np.ndarray) -> np.ndarray:
    """Noise-free rates, shape (num_series, history_weeks)."""
    t = np.arange(config.history_weeks)
    base = np.log(config.base_rate / (1.0 - config.base_rate))
    x = base + config.annual_amplitude * np.sin(2.0 * np.pi * t / 52.0 + phases[:, None]) + drift(config, t)
    return 1.0 / (1.0 + np.exp(-x))


def _draws(config: GeneratorConfig):
    rng = np.random.default_rng(config.seed)
    groups = np.array([series_group(config, i) for i in range(config.num_series)])
    phases = 2.0 * np.pi * groups / config.num_groups + rng.uniform(-0.2, 0.2, config.num_series)
    weights = np.exp(rng.uniform(np.log(1.0), np.log(20.0), config.num_series))
    innovations = rng.normal(0.0, 1.0, (config.num_series, config.history_weeks))
    phi = config.noise_persistence
    noise = np.empty_like(innovations)
    noise[:, 0] = innovations[:, 0]
    for t in range(1, config.history_weeks):
        noise[:, t] = phi * noise[:, t - 1] + np.sqrt(1.0 - phi * phi) * innovations[:, t]
    noise *= config.noise_sigma
    closure_draws = rng.uniform(0.0, CLOSURE_MAX, (config.num_series, config.history_weeks))
    return groups, phases, weights, noise, closure_draws


def generate_with_signal(config: GeneratorConfig) -> tuple[Dataset, np.ndarray]:
    """Dataset plus the noise-free rate matrix it was drawn around."""
    groups, phases, weights, noise, closure_draws = _draws(config)
    clean = signal(config, phases)
    t = np.arange(config.history_weeks)
    base = np.log(config.base_rate / (1.0 - config.base_rate))
    x = base + config.annual_amplitude * np.sin(2.0 * np.pi * t / 52.0 + phases[:, None]) + drift(config, t) + noise
    values = 1.0 / (1.0 + np.exp(-x))
    for series, start, length in config.closures:
        stop = min(start + length, config.history_weeks)
        values[series, start:stop] = closure_draws[series, start:stop]
    records = []
    for i in range(config.num_series):
        v = values[i].copy()
        v[missing_weeks(config, i)] = np.nan
        records.append(TimeSeriesRecord(f"s{i:03d}", 0, v, float(weights[i]), int(groups[i])))
    return Dataset(tuple(records)), clean


def generate(config: GeneratorConfig) -> Dataset:
    return generate_with_signal(config)[0]

"""Window sampling, Adam training with per-epoch checkpoints, top-N averaging."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from resilient_forecast.model import ModelConfig, WindowBatch, batch_loss, init_model
from resilient_forecast.network import DivergenceError, ParameterVector, average_parameters, save_parameters
from resilient_forecast.series import Dataset, TimeSeriesRecord

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CLIP_NORM = 10.0


class SamplingMode(str, enum.Enum):
    UNIFORM = "uniform"
    RECENCY = "recency_stratified"


@dataclass(frozen=True)
class SamplerConfig:
    mode: SamplingMode = SamplingMode.UNIFORM
    decay: float = 0.98
    windows_per_epoch: int = 256

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", SamplingMode(self.mode))
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        if self.windows_per_epoch < 1:
            raise ValueError("windows_per_epoch must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 3e-3
    batch_size: int = 32
    seed: int = 0
    n_average: int = 5
    # Share of series (chosen once from the seed) whose last window is held out for validation.
    validation_fraction: float = 1.0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 1 <= self.n_average <= self.epochs:
            raise ValueError("n_average must lie in [1, epochs]")
        if not 0.0 < self.validation_fraction <= 1.0:
            raise ValueError("validation_fraction must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class Checkpoint:
    epoch: int
    validation_loss: float
    params: ParameterVector


@dataclass
class CheckpointLedger:
    entries: list[Checkpoint] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, epoch: int, validation_loss: float, params: ParameterVector) -> None:
        if not np.isfinite(validation_loss):
            raise ValueError("checkpoint validation loss must be finite")
        self.entries.append(Checkpoint(epoch, float(validation_loss), params))

    def best(self) -> Checkpoint:
        return min(self.entries, key=lambda c: (c.validation_loss, c.epoch))

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "ledger.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "validation_loss", "params_file"])
            for c in self.entries:
                name = f"epoch_{c.epoch:04d}.rfpv"
                save_parameters(c.params, directory / name)
                writer.writerow([c.epoch, repr(c.validation_loss), name])


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; ``ledger`` holds the finite checkpoints so far."""

    def __init__(self, message: str, ledger: CheckpointLedger):
        super().__init__(message)
        self.ledger = ledger


class _WindowIndex:
    """All candidate (series, start) pairs with series pre-padded to window length."""

    def __init__(self, dataset: Dataset, window_length: int):
        if len(dataset) == 0:
            raise ValueError("cannot sample windows from an empty dataset")
        self.window_length = window_length
        self.padded: list[tuple[np.ndarray, np.ndarray]] = []
        self.groups = np.array([r.group for r in dataset], dtype=np.int64)
        series_idx, starts = [], []
        for i, r in enumerate(dataset):
            pad = max(0, window_length - len(r))
            values = np.concatenate([np.full(pad, np.nan), r.values])
            weeks = np.arange(r.start - pad, r.end)
            self.padded.append((values, weeks))
            n = len(values) - window_length + 1
            series_idx.append(np.full(n, i))
            starts.append(np.arange(n))
        self.series_idx = np.concatenate(series_idx)
        self.starts = np.concatenate(starts)

    def probabilities(self, config: SamplerConfig) -> np.ndarray:
        """Selection probability of every (series, start) pair.

        Series are picked in proportion to their number of valid starts; within
        a series the start is uniform, or geometric in its distance from the
        latest start for recency-stratified sampling.
        """
        if config.mode is SamplingMode.UNIFORM or config.decay == 1.0:
            return np.full(len(self.starts), 1.0 / len(self.starts))
        p = np.empty(len(self.starts))
        total = len(self.starts)
        for i in range(len(self.padded)):
            sel = self.series_idx == i
            starts = self.starts[sel]
            w = config.decay ** (starts.max() - starts).astype(np.float64)
            p[sel] = (sel.sum() / total) * w / w.sum()
        return p

    def draw(self, config: SamplerConfig, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.choice(len(self.starts), size=count, p=self.probabilities(config))

    def batch(self, picks: np.ndarray) -> WindowBatch:
        L = self.window_length
        values = np.empty((len(picks), L))
        weeks = np.empty((len(picks), L), dtype=np.int64)
        for row, k in enumerate(picks):
            v, wk = self.padded[self.series_idx[k]]
            s = self.starts[k]
            values[row] = v[s : s + L]
            weeks[row] = wk[s : s + L]
        return WindowBatch(values, weeks, self.groups[self.series_idx[picks]])

    def record(self, k: int, dataset: Dataset) -> TimeSeriesRecord:
        src = dataset.records[self.series_idx[k]]
        v, wk = self.padded[self.series_idx[k]]
        s = self.starts[k]
        v, wk = v[s : s + self.window_length], wk[s : s + self.window_length]
        keep = wk >= 0  # padding before week 0 is implied, not stored
        return TimeSeriesRecord(src.series_id, int(wk[keep][0]), v[keep], src.weight, src.group)


def sample_windows(
    dataset: Dataset, sampler_config: SamplerConfig, model_config: ModelConfig, rng: np.random.Generator
) -> list[TimeSeriesRecord]:
    """Draw ``windows_per_epoch`` training windows of ``context_length + 1`` weeks.

    Series shorter than a window are left-padded with missing weeks, so a
    window may start before the record does. Padding that would reach
    before week 0 is dropped from the returned record, which is then shorter;
    :func:`~resilient_forecast.model.training_loss` restores it.
    """
    index = _WindowIndex(dataset, model_config.window_length)
    picks = index.draw(sampler_config, rng, sampler_config.windows_per_epoch)
    return [index.record(k, dataset) for k in picks]


def validation_batch(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig) -> WindowBatch:
    index = _WindowIndex(dataset, model_config.window_length)
    last = np.array([np.flatnonzero(index.series_idx == i).max() for i in range(len(dataset))])
    if train_config.validation_fraction < 1.0:
        rng = np.random.default_rng([train_config.seed, 1])
        keep = max(1, int(round(train_config.validation_fraction * len(last))))
        last = np.sort(rng.choice(last, size=keep, replace=False))
    return index.batch(last)


class Adam:
    def __init__(self, size: int, learning_rate: float):
        self.lr = learning_rate
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, values: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1.0 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1.0 - ADAM_BETA2) * grad * grad
        m_hat = self.m / (1.0 - ADAM_BETA1**self.t)
        v_hat = self.v / (1.0 - ADAM_BETA2**self.t)
        return values - self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def clip_by_global_norm(grad: np.ndarray, max_norm: float = CLIP_NORM) -> np.ndarray:
    norm = float(np.sqrt(np.dot(grad, grad)))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def train(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
) -> tuple[CheckpointLedger, ParameterVector]:
    """Train from scratch; one checkpoint per epoch.

    Raises :class:`TrainingDiverged` (carrying the finite checkpoints) if the
    loss becomes non-finite.
    """
    init_seed, sample_seed = np.random.SeedSequence(train_config.seed).generate_state(2)
    params = init_model(model_config, int(init_seed))
    rng = np.random.default_rng(int(sample_seed))
    index = _WindowIndex(dataset, model_config.window_length)
    val = validation_batch(dataset, model_config, train_config)
    probs = index.probabilities(sampler_config)
    opt = Adam(len(params), train_config.learning_rate)
    ledger = CheckpointLedger()
    values = params.values.copy()
    for epoch in range(train_config.epochs):
        picks = rng.choice(len(probs), size=sampler_config.windows_per_epoch, p=probs)
        # overflow on the way to a non-finite loss is reported as divergence
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                for lo in range(0, len(picks), train_config.batch_size):
                    batch = index.batch(picks[lo : lo + train_config.batch_size])
                    _, grad = batch_loss(params, batch, model_config)
                    values = opt.step(values, clip_by_global_norm(grad.values))
                    params = params.with_values(values)
                val_loss = batch_loss(params, val, model_config, with_grad=False)
        except DivergenceError as exc:
            raise TrainingDiverged(f"training diverged in epoch {epoch}: {exc}", ledger) from exc
        if not np.all(np.isfinite(values)):
            raise TrainingDiverged(f"non-finite parameters in epoch {epoch}", ledger)
        ledger.append(epoch, val_loss, params)
        log.debug("epoch %d validation loss %.6f", epoch, val_loss)
    return ledger, params


def select_and_average(ledger: CheckpointLedger, n: int) -> ParameterVector:
    """Mean parameters of the ``n`` lowest-validation-loss checkpoints.

    Ties go to the earlier epoch.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > len(ledger):
        raise ValueError(f"asked for {n} checkpoints but the ledger holds {len(ledger)}")
    ranked = sorted(ledger.entries, key=lambda c: (c.validation_loss, c.epoch))
    return average_parameters([c.params for c in ranked[:n]])

"""Self-supervised training loop: window sampling, forward, AdamW updates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .events import Cohort, SamplingError, TrainingWindow, sample_training_window
from .model import EventEncoderModel
from .objective import LossConfig, mse_objective_batch, stlo_loss_batch


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 30_000
    batch_size: int = 64
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    window_n: int = 32
    objective: str = "stlo"  # "stlo" | "mse"
    lr_schedule: str = "constant"  # "constant" | "cosine"
    warmup_steps: int = 0
    seed: int = 0
    checkpoint_every: Optional[int] = None
    log_every: int = 100

    def __post_init__(self):
        if self.steps <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("steps, batch_size and learning_rate must be positive")
        if self.objective not in ("stlo", "mse"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.warmup_steps < 0 or self.warmup_steps >= self.steps:
            raise ValueError("warmup_steps must be in [0, steps)")


@dataclass
class LossRecord:
    step: int
    loss: float
    clo: float = 0.0
    sep: float = 0.0
    con: float = 0.0


def sample_batch(
    cohort: Cohort,
    window_n: int,
    batch_size: int,
    rng: np.random.Generator,
    max_retries: int = 1000,
) -> list[TrainingWindow]:
    """Sample windows patient-first; windows with valid_len < 2 are resampled."""
    trainable = [p for p in cohort.patients if len(p) >= 2]
    if not trainable:
        raise SamplingError("no trainable windows: every patient has < 2 events")
    windows: list[TrainingWindow] = []
    retries = 0
    while len(windows) < batch_size:
        patient = trainable[int(rng.integers(0, len(trainable)))]
        window = sample_training_window(patient, cohort.schemas, window_n, rng)
        if window.valid_len < 2:
            retries += 1
            if retries > max_retries:
                raise SamplingError(f"exhausted {max_retries} resampling retries")
            continue
        windows.append(window)
    return windows


def _stack_batch(windows: list[TrainingWindow]) -> tuple[list[torch.Tensor], torch.Tensor]:
    num_vars = len(windows[0].one_hot_blocks)
    blocks = [
        torch.from_numpy(np.stack([w.one_hot_blocks[k] for w in windows]))
        for k in range(num_vars)
    ]
    valid_lens = torch.tensor([w.valid_len for w in windows], dtype=torch.long)
    return blocks, valid_lens


def _lr_at(step: int, config: TrainConfig) -> float:
    """Learning rate for one step: optional linear warmup, then constant or
    cosine decay to zero over the remaining steps."""
    if step < config.warmup_steps:
        return config.learning_rate * (step + 1) / config.warmup_steps
    if config.lr_schedule == "constant":
        return config.learning_rate
    progress = (step - config.warmup_steps) / max(1, config.steps - config.warmup_steps)
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))


def train(
    model: EventEncoderModel,
    cohort: Cohort,
    config: TrainConfig,
    loss_config: LossConfig = LossConfig(),
    history_path: Optional[Path | str] = None,
    checkpoint_fn=None,
) -> list[LossRecord]:
    """Train in place; returns one loss record per step.

    ``checkpoint_fn(step, model)`` is called every ``checkpoint_every`` steps
    when both are provided. A fixed seed gives a reproducible history on one
    device.
    """
    if cohort.num_events == 0:
        raise TrainingError("cohort is empty")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    model.train()
    history: list[LossRecord] = []
    for step in range(config.steps):
        optimizer.param_groups[0]["lr"] = _lr_at(step, config)
        windows = sample_batch(cohort, config.window_n, config.batch_size, rng)
        blocks, valid_lens = _stack_batch(windows)
        s_vec, s_enc, s_dec = model(blocks, valid_lens)
        if config.objective == "stlo":
            loss, parts = stlo_loss_batch(s_enc, s_dec, valid_lens, loss_config)
        else:
            loss = mse_objective_batch(s_dec, s_vec, valid_lens)
            parts = {"clo": 0.0, "sep": 0.0, "con": 0.0}
        if not torch.isfinite(loss):
            sources = [w.source for w in windows[:4]]
            raise TrainingError(
                f"non-finite loss at step {step}; first batch windows: {sources}"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(LossRecord(step=step, loss=float(loss.detach()), **parts))
        if checkpoint_fn and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            checkpoint_fn(step + 1, model)
    model.eval()
    if history_path is not None:
        save_history(history, history_path)
    return history


def save_history(history: list[LossRecord], path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "clo", "sep", "con"])
        for rec in history:
            writer.writerow([rec.step, rec.loss, rec.clo, rec.sep, rec.con])

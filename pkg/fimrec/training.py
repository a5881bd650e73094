"""Mini-batch Adam training, evaluation, and the metrics CSV."""

import csv
import io
import logging
import random
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from reprobate import render

from .config import RunConfig
from .embeddings import Batch, Encoder
from .errors import DataError
from .metrics import auc, gauc
from .model import FimModel
from .numerics import AdamState, GradTape, adam_step
from .prediction import bce_per_task
from .records import Sample

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "task", "loss", "auc", "gauc")


@dataclass(frozen=True)
class MetricRow:
    step: int
    task: str
    loss: float
    auc: float | None
    gauc: float | None

    def fields(self) -> list[str]:
        return [
            str(self.step),
            self.task,
            _number(self.loss),
            _number(self.auc),
            _number(self.gauc),
        ]


@dataclass(frozen=True)
class TaskMetrics:
    loss: float
    auc: float | None
    gauc: float | None


@dataclass
class TrainResult:
    model: FimModel
    encoder: Encoder
    rows: tuple[MetricRow, ...]


def _number(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def seed_everything(seed: int, threads: int = 1) -> None:
    """Seed every generator in play and pin kernels to deterministic ones."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def build_model(encoder: Encoder, cfg: RunConfig) -> FimModel:
    """A freshly initialized model; identical for identical seeds."""
    torch.manual_seed(cfg.seed)
    return FimModel(encoder, cfg)


def predict(model: FimModel, batch: Batch, chunk: int = 1024) -> torch.Tensor:
    """Probabilities ``[B, T]`` without recording gradients."""
    with torch.no_grad():
        parts = [
            model(batch.take(torch.arange(start, min(start + chunk, len(batch)))))
            for start in range(0, len(batch), chunk)
        ]
    if not parts:
        return torch.zeros(0, len(model.cfg.mmoe.tasks), dtype=batch.labels.dtype)
    return torch.cat(parts)


def evaluate(model: FimModel, batch: Batch) -> dict[str, TaskMetrics]:
    """Test loss, AUC and GAUC per task; undefined metrics are ``None``."""
    probs = predict(model, batch)
    losses = bce_per_task(probs, batch.labels)
    results = {}
    for column, task in enumerate(model.cfg.mmoe.tasks):
        scores = probs[:, column].numpy()
        labels = batch.labels[:, column].numpy()
        try:
            user_auc = gauc(scores, labels, batch.user_ids)
        except ValueError:
            user_auc = None
        results[task] = TaskMetrics(
            float(losses[column]), auc(scores, labels), user_auc
        )
    return results


def train_model(
    cfg: RunConfig,
    train: Sequence[Sample],
    test: Sequence[Sample] = (),
    encoder: Encoder | None = None,
) -> TrainResult:
    """Fit a model with Adam; metric rows per task at step 0 and after every epoch.

    The loss column holds the training loss (the epoch mean after step 0); AUC and
    GAUC columns are measured on ``test`` and stay empty without it.
    """
    if not train:
        raise DataError("the training split is empty")
    seed_everything(cfg.seed, cfg.threads)
    logger.info("training with %s", render(cfg, 400))
    if encoder is None:
        encoder = Encoder.fit(train, cfg.max_len, cfg.price_buckets, cfg.mmoe.tasks)
    train_batch = encoder.encode(train)
    test_batch = encoder.encode(test) if test else None
    model = build_model(encoder, cfg)
    params = dict(model.named_parameters())
    state = AdamState.create(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    generator = torch.Generator().manual_seed(cfg.seed)

    rows = _rows(0, cfg, _initial_loss(model, train_batch), test_batch, model)
    for epoch in range(cfg.epochs):
        order = torch.randperm(len(train_batch), generator=generator)
        totals = torch.zeros(len(cfg.mmoe.tasks), dtype=train_batch.labels.dtype)
        for start in range(0, len(order), cfg.batch_size):
            index = order[start : start + cfg.batch_size]
            batch = train_batch.take(index)
            tape = GradTape(params)
            with tape.record():
                per_task = bce_per_task(model(batch), batch.labels)
                loss = per_task.sum()
            adam_step(params, tape.gradient(loss), state)
            totals += per_task.detach() * len(index)
        epoch_rows = _rows(state.t, cfg, totals / len(order), test_batch, model)
        rows.extend(epoch_rows)
        logger.info(
            "epoch %d/%d step %d: %s",
            epoch + 1,
            cfg.epochs,
            state.t,
            render({row.task: row.fields()[2:] for row in epoch_rows}, 200),
        )
    return TrainResult(model, encoder, tuple(rows))


def _initial_loss(model: FimModel, batch: Batch) -> torch.Tensor:
    return bce_per_task(predict(model, batch), batch.labels)


def _rows(
    step: int,
    cfg: RunConfig,
    losses: torch.Tensor,
    test_batch: Batch | None,
    model: FimModel,
) -> list[MetricRow]:
    metrics = evaluate(model, test_batch) if test_batch is not None else {}
    rows = []
    for column, task in enumerate(cfg.mmoe.tasks):
        measured = metrics.get(task)
        rows.append(
            MetricRow(
                step=step,
                task=task,
                loss=float(losses[column]),
                auc=measured.auc if measured else None,
                gauc=measured.gauc if measured else None,
            )
        )
    return rows


def format_metrics(rows: Sequence[MetricRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    writer.writerows(row.fields() for row in rows)
    return buffer.getvalue()


def write_metrics(path: str | Path, rows: Sequence[MetricRow]) -> None:
    Path(path).write_text(format_metrics(rows))

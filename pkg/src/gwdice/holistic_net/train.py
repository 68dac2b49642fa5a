"""SGD training with deep supervision and multi-phase loss schedules."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..dice_losses import mean_dice, wasserstein_dice
from ..label_metric import GroundMetric, LabelSpace, metric_tree_brats, metric_zero_one
from .model import (
    DivergenceError,
    HolisticModel,
    LossKind,
    NetworkConfig,
    SupervisionWeights,
    loss_and_grad,
    predict,
    resolve_loss,
)

log = logging.getLogger(__name__)

MOMENTUM = 0.9
CALIBRATION_IMAGES = 8


@dataclass(frozen=True)
class Phase:
    loss: str
    epochs: int
    lr: float

    def __post_init__(self):
        if self.epochs < 0 or self.lr < 0:
            raise ValueError("epochs and learning rate must be nonnegative")


@dataclass(frozen=True)
class LogRow:
    epoch: int
    loss: str
    train_loss: float
    val_mean_dice: float
    val_wasserstein_dice: float


LOG_FIELDS = ("epoch", "loss", "train_loss", "val_mean_dice", "val_wasserstein_dice")


def format_log(rows: Sequence[LogRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for r in rows:
        w.writerow([r.epoch, r.loss, repr(r.train_loss), repr(r.val_mean_dice), repr(r.val_wasserstein_dice)])
    return buf.getvalue()


def parse_log(text: str) -> list[LogRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(
            LogRow(
                int(rec["epoch"]),
                rec["loss"],
                float(rec["train_loss"]),
                float(rec["val_mean_dice"]),
                float(rec["val_wasserstein_dice"]),
            )
        )
    return rows


def default_val_metric(classes: int) -> GroundMetric:
    return metric_tree_brats() if classes == 5 else metric_zero_one(LabelSpace.anonymous(classes))


def evaluate(model: HolisticModel, dataset, metric: GroundMetric) -> tuple[float, float]:
    """Mean over samples of (soft mean Dice, soft Wasserstein Dice) of the fused output."""
    if not dataset:
        return float("nan"), float("nan")
    md, wd = [], []
    for image, labels in dataset:
        p = predict(model, image)
        md.append(mean_dice(p, labels, validate=False))
        wd.append(wasserstein_dice(p, labels, metric, validate=False).score)
    return float(np.mean(md)), float(np.mean(wd))


def _batch_grad(model, batch, loss, weights, pool):
    def one(sample):
        return loss_and_grad(model, sample[0], sample[1], loss, weights)

    results = list(pool.map(one, batch)) if pool is not None else [one(s) for s in batch]
    # fixed sample order keeps the sum independent of the worker count
    total = {name: np.zeros_like(a) for name, a in model.params.items()}
    values = []
    for value, grads in results:
        values.append(value)
        for name in total:
            total[name] += grads[name]
    k = len(batch)
    return float(np.mean(values)), {name: g / k for name, g in total.items()}


def train(
    config: NetworkConfig,
    dataset,
    schedule: Sequence[Phase],
    val_dataset=None,
    batch_size: int = 4,
    weights: SupervisionWeights | None = None,
    val_metric: GroundMetric | None = None,
    threads: int = 1,
    model: HolisticModel | None = None,
):
    """Train a model through ``schedule`` phases in order.

    ``dataset`` is a sequence of (image (C, H, W), labels (H, W)) pairs.
    Returns ``(model, log_rows)``. Everything is determined by
    ``config.seed``; the worker count only changes who computes each
    per-sample gradient, never how they are summed.
    """
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    weights = weights or SupervisionWeights.default(config.scales)
    val_metric = val_metric or default_val_metric(config.classes)
    if model is None:
        model = HolisticModel.init(config)
        if dataset:
            model.calibrate([im for im, _ in dataset[:CALIBRATION_IMAGES]])
    rows: list[LogRow] = []
    epoch = 0
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        with threadpool_limits(limits=1, user_api="blas"):
            for phase in schedule:
                loss = resolve_loss(phase.loss, config.classes)
                velocity = {name: np.zeros_like(a) for name, a in model.params.items()}
                for _ in range(phase.epochs):
                    epoch += 1
                    order = np.random.default_rng([config.seed, epoch]).permutation(len(dataset))
                    losses = []
                    for start in range(0, len(order), batch_size):
                        batch = [dataset[i] for i in order[start : start + batch_size]]
                        value, grads = _batch_grad(model, batch, loss, weights, pool)
                        for name, p in model.params.items():
                            velocity[name] = MOMENTUM * velocity[name] - phase.lr * grads[name]
                            p += velocity[name]
                        losses.append(value)
                        if not np.isfinite(value) or not model.is_finite():
                            raise DivergenceError(f"training diverged in epoch {epoch}", epoch)
                    vm, vw = evaluate(model, val_dataset, val_metric)
                    row = LogRow(epoch, loss.name, float(np.mean(losses)) if losses else float("nan"), vm, vw)
                    log.info("epoch %d %s loss=%.5f val_mean_dice=%.4f val_D=%.4f", *[getattr(row, f) for f in LOG_FIELDS])
                    rows.append(row)
    except DivergenceError as exc:
        if exc.epoch is None:
            exc.epoch = epoch
        raise
    finally:
        if pool is not None:
            pool.shutdown()
    return model, rows

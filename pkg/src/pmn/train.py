"""Minibatch training loop and data/model plumbing shared by the CLI and scripts."""
from __future__ import annotations

import csv
import logging
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .errors import NonFiniteError
from .losses import total_loss
from .metrics import predict_dataset, r_rps
from .model import PMNModel
from .nn import Adam
from .signals import Dataset, build_dataset, default_fault_specs, load_pmds
from .tensor import Rng

log = logging.getLogger(__name__)

# Rng sub-streams derived from the run seed.
DATA_STREAM, INIT_STREAM, SHUFFLE_STREAM = 0, 1, 2


@dataclass
class EpochLog:
    epoch: int
    cla: float
    recon: float
    r1: float
    r2: float
    r3: float
    total: float
    train_acc: float
    test_acc: float
    r_rps: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TrainResult:
    model: PMNModel
    history: list[EpochLog]
    best_epoch: int
    best_test_acc: float
    best_state: dict


def load_data(config: RunConfig) -> tuple[Dataset, Dataset]:
    """PMDS files when both paths are set, otherwise the synthetic generator."""
    dc = config.data
    if dc.train_path and dc.test_path:
        return load_pmds(dc.train_path), load_pmds(dc.test_path)
    specs = default_fault_specs()[: dc.num_classes]
    rng = Rng(config.seed).spawn(DATA_STREAM)
    return build_dataset(specs, dc.per_class, dc.split_ratio, rng, config.augment_config())


def build_model(config: RunConfig, num_classes: int) -> PMNModel:
    return PMNModel(config.model_config(num_classes), Rng(config.seed).spawn(INIT_STREAM))


def _test_metrics(model, test: Dataset) -> tuple[float, float]:
    if len(test) == 0:
        return float("nan"), float("nan")
    preds, feats = predict_dataset(model, test.x)
    acc = float(np.mean(preds == test.labels))
    try:
        rps = r_rps(feats, test.labels)
    except ValueError:
        rps = float("nan")
    return acc, rps


def train_model(config: RunConfig, train: Dataset, test: Dataset, out_dir=None,
                num_classes: int | None = None) -> TrainResult:
    """Train with Adam on the weighted objective.

    With ``out_dir`` set, writes ``training_log.csv`` as it goes, ``final.pmn``
    after every epoch (so a crash leaves the last good epoch on disk) and
    ``best.pmn`` whenever the test accuracy improves.
    """
    k = num_classes or max(train.num_classes, test.num_classes)
    model = build_model(config, k)
    weights = config.weights
    params = model.parameters()
    adam = Adam(params, lr=config.lr, decay=config.lr_decay)
    shuffle = Rng(config.seed).spawn(SHUFFLE_STREAM)
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "training_log.csv", "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(EpochLog.columns())
    history: list[EpochLog] = []
    best = (-1, -np.inf, model.state())
    n = len(train)
    try:
        for epoch in range(config.epochs):
            order = shuffle.permutation(n)
            sums = np.zeros(6)
            correct = 0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                model.zero_grad()
                try:
                    parts, fwd = total_loss(model, train.x[idx], train.labels[idx], weights)
                    adam.step(model.gradients(), epoch)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"epoch {epoch}: {exc}; last good checkpoint kept") from exc
                sums += len(idx) * np.array(astuple(parts))
                correct += int(np.sum(fwd.probs.argmax(axis=1) == train.labels[idx]))
            test_acc, rps = _test_metrics(model, test)
            row = EpochLog(epoch + 1, *(sums / n), correct / n, test_acc, rps)
            history.append(row)
            log.info("epoch %d total %.4f train %.4f test %.4f r_rps %.4f",
                     row.epoch, row.total, row.train_acc, row.test_acc, row.r_rps)
            improved = test_acc > best[1]
            if improved:
                best = (epoch + 1, test_acc, {k_: v.copy() for k_, v in model.state().items()})
            if out is not None:
                writer.writerow([row.epoch] + [repr(float(v)) for v in astuple(row)[1:]])
                log_fh.flush()
                save_checkpoint(out / "final.pmn", model, config.to_dict(), epoch + 1, adam)
                if improved:
                    save_checkpoint(out / "best.pmn", model, config.to_dict(), epoch + 1)
    finally:
        if out is not None:
            log_fh.close()
    return TrainResult(model, history, best[0], float(best[1]), best[2])

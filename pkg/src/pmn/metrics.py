"""Accuracy, confusion matrix, the intra/inter representation ratio and feature export."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, DomainError, UsageError

EVAL_BATCH = 256


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise UsageError("accuracy of an empty prediction set is undefined")
    if predictions.shape != labels.shape:
        raise DimensionError(f"{predictions.shape} predictions vs {labels.shape} labels")
    return float(np.mean(predictions == labels))


def confusion_matrix(predictions, labels, num_classes: int) -> np.ndarray:
    """Counts with true class on rows, predicted class on columns."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predictions)), 1)
    return cm


def class_means(features: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    classes = np.unique(labels)
    return classes, np.stack([features[labels == c].mean(axis=0) for c in classes])


def intra_distance(features, labels) -> float:
    """Mean Euclidean distance (not squared) from each feature to its class mean."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    classes, means = class_means(features, labels)
    lookup = np.searchsorted(classes, labels)
    return float(np.linalg.norm(features - means[lookup], axis=1).mean())


def inter_distance(features, labels) -> float:
    """Mean Euclidean distance between distinct class means over ordered pairs."""
    features = np.asarray(features, dtype=float)
    _, means = class_means(features, np.asarray(labels))
    k = len(means)
    d = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
    return float(d.sum() / (k * (k - 1)))


def r_rps(features, labels) -> float:
    """Ratio of intra-class to inter-class distance; lower means better separated."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    if features.ndim != 2 or len(features) != len(labels):
        raise DimensionError(f"features {features.shape} do not match {labels.shape} labels")
    if len(np.unique(labels)) < 2:
        raise DomainError("inter-class distance needs at least two classes")
    inter = inter_distance(features, labels)
    if inter == 0:
        raise DomainError("all class means coincide; representation ratio undefined")
    return intra_distance(features, labels) / inter


@dataclass
class EvalReport:
    accuracy: float
    confusion: list[list[int]]
    r_rps: float | None
    per_class_accuracy: list[float]
    num_samples: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def encode_dataset(model, x: np.ndarray) -> np.ndarray:
    """Eval-mode latents, computed in fixed-size batches."""
    return np.concatenate([model.encode(x[i:i + EVAL_BATCH]) for i in range(0, len(x), EVAL_BATCH)])


def predict_dataset(model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(predictions, latents)`` for every row of ``x``."""
    preds, feats = [], []
    for i in range(0, len(x), EVAL_BATCH):
        z = model.encode(x[i:i + EVAL_BATCH])
        preds.append(model.head.forward(z).argmax(axis=1))
        feats.append(z)
    return np.concatenate(preds), np.concatenate(feats)


def evaluate(model, data) -> EvalReport:
    k = model.config.num_classes
    preds, feats = predict_dataset(model, data.x)
    cm = confusion_matrix(preds, data.labels, k)
    rows = cm.sum(axis=1)
    per_class = [float(cm[i, i] / rows[i]) if rows[i] else float("nan") for i in range(k)]
    try:
        rps = r_rps(feats, data.labels)
    except DomainError:
        rps = None
    return EvalReport(accuracy(preds, data.labels), cm.tolist(), rps, per_class, len(data))


def export_features(model, data, path) -> int:
    """Write ``label,domain,z0..`` for every sample, then one row per prototype with label -1.

    Returns the number of rows written.
    """
    feats = encode_dataset(model, data.x)
    q = feats.shape[1]
    rows = 0
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "domain"] + [f"z{i}" for i in range(q)])
            for y, dom, z in zip(data.labels, data.domains, feats):
                w.writerow([int(y), int(dom)] + [repr(float(v)) for v in z])
                rows += 1
            if model.is_pmn:
                for p in model.prototypes:
                    w.writerow([-1, -1] + [repr(float(v)) for v in p])
                    rows += 1
    except OSError as exc:
        raise OSError(f"could not write features to {path}: {exc}") from exc
    return rows

"""Training objective: classification, reconstruction and three prototype regularizers.

The ``*_from_distances`` helpers take a precomputed feature-to-prototype
distance matrix and return ``(value, d_value/d_distances)`` so the model can
reuse the PM-layer distances in one backward pass. When a minimum is attained
more than once, the gradient goes to the lowest index only.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError, NonFiniteError, UsageError
from .model import PMNModel, pairwise_distance, pairwise_distance_backward

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossWeights:
    recon: float = 1.0
    r1: float = 0.25
    r2: float = 0.25
    r3: float = 0.01

    def __post_init__(self):
        for name, w in asdict(self).items():
            if not np.isfinite(w) or w < 0:
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {w}")

    @classmethod
    def from_sequence(cls, values) -> "LossWeights":
        return cls(*map(float, values))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.recon, self.r1, self.r2, self.r3)


@dataclass(frozen=True)
class LossBreakdown:
    cla: float
    recon: float
    r1: float
    r2: float
    r3: float
    total: float

    @classmethod
    def combine(cls, cla, recon, r1, r2, r3, weights: LossWeights) -> "LossBreakdown":
        total = cla + weights.recon * recon + weights.r1 * r1 + weights.r2 * r2 + weights.r3 * r3
        return cls(float(cla), float(recon), float(r1), float(r2), float(r3), float(total))

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


# ------------------------------------------------------------ classification

def _check_labels(labels, k):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(int)


def cross_entropy(probs: np.ndarray, labels) -> float:
    """Mean negative log-probability of the true class, log argument clamped at 1e-12."""
    probs = np.atleast_2d(probs)
    labels = _check_labels(labels, probs.shape[1])
    if len(labels) != len(probs):
        raise DimensionError(f"{len(probs)} predictions vs {len(labels)} labels")
    true = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(true, LOG_CLAMP))))


def cross_entropy_logit_grad(probs: np.ndarray, labels) -> np.ndarray:
    """Gradient of :func:`cross_entropy` w.r.t. the logits that produced ``probs``."""
    n, k = probs.shape
    labels = _check_labels(labels, k)
    grad = probs.astype(float).copy()
    grad[np.arange(n), labels] -= 1.0
    # where the clamp is active the loss is locally constant
    grad[probs[np.arange(n), labels] < LOG_CLAMP] = 0.0
    return grad / n


# ------------------------------------------------------------ reconstruction

def reconstruction_mse(x: np.ndarray, recon: np.ndarray) -> float:
    """Squared error summed over bins, averaged over samples."""
    x = np.atleast_2d(x)
    recon = np.atleast_2d(recon)
    if x.shape != recon.shape:
        raise DimensionError(f"reconstruction shape {recon.shape} != input shape {x.shape}")
    diff = x.astype(float) - recon
    return float(np.sum(diff * diff) / len(x))


def reconstruction_grad(x, recon) -> np.ndarray:
    return 2.0 * (recon - x) / len(x)


# ------------------------------------------------------------ regularizers

def r1_from_distances(dist: np.ndarray):
    n, _ = dist.shape
    win = dist.argmin(axis=1)
    grad = np.zeros_like(dist, dtype=float)
    grad[np.arange(n), win] = 1.0 / n
    return float(dist[np.arange(n), win].mean()), grad


def r2_from_distances(dist: np.ndarray):
    _, m = dist.shape
    win = dist.argmin(axis=0)
    grad = np.zeros_like(dist, dtype=float)
    grad[win, np.arange(m)] = 1.0 / m
    return float(dist[win, np.arange(m)].mean()), grad


def r3_from_distances(dist: np.ndarray):
    """``dist`` is the (m, m) prototype-to-prototype matrix; self-pairs are skipped."""
    m = dist.shape[0]
    masked = dist.astype(float).copy()
    np.fill_diagonal(masked, np.inf)
    win = masked.argmin(axis=1)
    grad = np.zeros_like(masked)
    grad[np.arange(m), win] = -1.0 / m
    return float(-masked[np.arange(m), win].mean()), grad


def _nonempty(features, prototypes):
    features = np.atleast_2d(features)
    prototypes = np.atleast_2d(prototypes)
    if features.shape[0] == 0 or prototypes.shape[0] == 0:
        raise UsageError("regularizers need a nonempty batch and prototype set")
    return features, prototypes


def r1_feature_to_prototype(features, prototypes, metric="sqL2") -> float:
    """Mean over features of the distance to the nearest prototype."""
    features, prototypes = _nonempty(features, prototypes)
    return r1_from_distances(pairwise_distance(features, prototypes, metric))[0]


def r2_prototype_to_feature(features, prototypes, metric="sqL2") -> float:
    """Mean over prototypes of the distance to the nearest feature in the batch."""
    features, prototypes = _nonempty(features, prototypes)
    return r2_from_distances(pairwise_distance(features, prototypes, metric))[0]


def r3_prototype_separation(prototypes, metric="sqL2") -> float:
    """Negative mean nearest-neighbour distance among prototypes."""
    prototypes = np.atleast_2d(prototypes)
    if prototypes.shape[0] < 2:
        raise ConfigError("prototype separation needs at least two prototypes")
    return r3_from_distances(pairwise_distance(prototypes, prototypes, metric))[0]


def r3_with_grad(prototypes, metric="sqL2"):
    if prototypes.shape[0] < 2:
        raise ConfigError("prototype separation needs at least two prototypes")
    value, gd = r3_from_distances(pairwise_distance(prototypes, prototypes, metric))
    ga, gb = pairwise_distance_backward(prototypes, prototypes, gd, metric)
    return value, ga + gb


# ------------------------------------------------------------ total

def total_loss(model: PMNModel, x: np.ndarray, labels, weights: LossWeights = LossWeights(),
               train: bool = True, backward: bool = True):
    """Evaluate the weighted objective on one batch and, optionally, backpropagate.

    Gradients are accumulated into the model's parameter gradients (call
    ``model.zero_grad()`` first). Returns ``(LossBreakdown, Forward)``. The
    prototype regularizers are zero for the baseline variant.
    """
    labels = _check_labels(labels, model.config.num_classes)
    out = model.forward(x, train)
    xf = np.asarray(x, dtype=model.dtype).reshape(len(labels), -1)
    cla = cross_entropy(out.probs, labels)
    recon = reconstruction_mse(xf, out.recon)
    r1 = r2 = r3 = 0.0
    d_dist = None
    d_proto_r3 = None
    if model.is_pmn:
        r1, g1 = r1_from_distances(out.distances)
        r2, g2 = r2_from_distances(out.distances)
        d_dist = weights.r1 * g1 + weights.r2 * g2
        if model.config.num_prototypes >= 2:
            r3, d_proto_r3 = r3_with_grad(model.prototypes, model.config.metric)
    terms = dict(cla=cla, recon=recon, r1=r1, r2=r2, r3=r3)
    for name, value in terms.items():
        if not np.isfinite(value):
            raise NonFiniteError(f"loss term {name} is not finite ({value})")
    breakdown = LossBreakdown.combine(cla, recon, r1, r2, r3, weights)
    if backward:
        dt = model.dtype
        d_logits = cross_entropy_logit_grad(out.probs, labels).astype(dt)
        d_recon = (weights.recon * reconstruction_grad(xf, out.recon)).astype(dt)
        model.backward(d_logits, d_recon=d_recon, d_dist=None if d_dist is None else d_dist.astype(dt))
        if d_proto_r3 is not None:
            g = model.head.grads["prototypes"]
            g += (weights.r3 * d_proto_r3).astype(g.dtype)
    return breakdown, out

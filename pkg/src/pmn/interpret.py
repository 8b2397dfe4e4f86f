"""Explaining a trained network: distance readout, decoded prototypes, Grad-CAM.

Grad-CAM targets the predicted-class logit and the output of the last
encoder conv block (128 channels x 4 positions). The 4-position map is
placed on the input axis at the receptive-field centre of each position and
linearly interpolated to 1024 bins (values beyond the outer centres are held
constant).
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .model import ENCODER_GEOMETRY, INPUT_LEN, PMNModel, prototype_classes
from .signals import BIN_HZ


@dataclass
class AttributionMap:
    scores: np.ndarray
    target_class: int
    coarse: np.ndarray
    all_zero: bool = False


@dataclass
class Explanation:
    sample_id: int
    distances: np.ndarray
    matched_index: int
    predicted_class: int
    probabilities: np.ndarray
    decoded_prototype: np.ndarray
    attribution: AttributionMap | None = None

    def to_dict(self) -> dict:
        d = {
            "sample_id": int(self.sample_id),
            "distances": [float(v) for v in self.distances],
            "matched_index": int(self.matched_index),
            "predicted_class": int(self.predicted_class),
            "probabilities": [float(v) for v in self.probabilities],
            "decoded_prototype": [float(v) for v in self.decoded_prototype],
        }
        if self.attribution is not None:
            d["attribution"] = [float(v) for v in self.attribution.scores]
            d["attribution_target"] = int(self.attribution.target_class)
            d["attribution_all_zero"] = bool(self.attribution.all_zero)
        return d


def feature_centers(num_positions: int) -> np.ndarray:
    """Input-bin centre of each position of the last encoder conv output."""
    centers = np.arange(num_positions, dtype=float)
    for k, s, p in reversed(ENCODER_GEOMETRY):
        centers = centers * s - p + (k - 1) / 2
    return centers


def explain_match(model: PMNModel, sample: np.ndarray, sample_id: int = 0) -> Explanation:
    """Distances to every prototype, the nearest one and its decoded spectrum."""
    probs, _, dist = model.classify(sample)
    dist = dist[0].astype(float)
    matched = int(dist.argmin())
    decoded = model.decode(model.prototypes[matched:matched + 1])[0]
    return Explanation(sample_id, dist, matched, int(probs[0].argmax()), probs[0].astype(float), decoded)


def mask_bins(sample: np.ndarray, center: int, half_width: int) -> np.ndarray:
    """Copy of ``sample`` with bins ``center ± half_width`` set to zero."""
    out = np.array(sample, dtype=float, copy=True)
    lo, hi = max(0, center - half_width), min(out.shape[-1], center + half_width + 1)
    out[..., lo:hi] = 0.0
    return out


def mask_distance_shift(model: PMNModel, sample: np.ndarray, center: int, half_width: int = 10) -> tuple[float, float]:
    """Minimum prototype distance ``(before, after)`` masking a band of bins."""
    before = model.classify(sample)[2].min()
    after = model.classify(mask_bins(sample, center, half_width))[2].min()
    return float(before), float(after)


def decode_prototypes(model: PMNModel) -> tuple[np.ndarray, np.ndarray]:
    """``(spectra (m, 1024), class of each prototype)``."""
    cfg = model.config
    return model.decode(model.prototypes), prototype_classes(cfg.num_classes, cfg.num_prototypes)


def cam_from_activations(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Coarse Grad-CAM: ReLU of the gradient-weighted channel sum, shape ``(positions,)``."""
    weights = grads.mean(axis=-1)
    return np.maximum((weights[:, None] * acts).sum(axis=0), 0.0)


def upsample(coarse: np.ndarray, length: int = INPUT_LEN) -> np.ndarray:
    return np.interp(np.arange(length), feature_centers(len(coarse)), coarse)


def target_gradient(model: PMNModel, acts: np.ndarray, target: int) -> np.ndarray:
    """d(logit[target]) / d(feature maps) for one sample, eval mode."""
    z = model.encoder_fc.forward(acts, False)
    logits = model.head.forward(z, False)
    d_logits = np.zeros_like(logits)
    d_logits[0, target] = 1.0
    grads = model.encoder_fc.backward(model.head.backward(d_logits))
    model.zero_grad()
    return grads


def grad_cam(model: PMNModel, sample: np.ndarray, target: int | None = None) -> AttributionMap:
    acts = model.feature_maps(sample)
    if target is None:
        target = int(model.classify(sample)[0][0].argmax())
    grads = target_gradient(model, acts, target)
    coarse = cam_from_activations(acts[0].astype(float), grads[0].astype(float))
    scores = upsample(coarse)
    peak = scores.max()
    if peak <= 0:
        warnings.warn("Grad-CAM map is identically zero", RuntimeWarning, stacklevel=2)
        return AttributionMap(np.zeros(INPUT_LEN), target, coarse, all_zero=True)
    return AttributionMap(scores / peak, target, coarse)


def explain(model: PMNModel, sample: np.ndarray, sample_id: int = 0) -> Explanation:
    """All three views for one sample."""
    exp = explain_match(model, sample, sample_id)
    exp.attribution = grad_cam(model, sample, exp.predicted_class)
    return exp


# ------------------------------------------------------------------ probes over a dataset

def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def prototype_fidelity(model: PMNModel, templates: np.ndarray) -> np.ndarray:
    """Cosine between each decoded prototype and the template of its class."""
    spectra, classes = decode_prototypes(model)
    return np.array([cosine(s.astype(float), templates[c]) for s, c in zip(spectra, classes)])


def correctly_classified(model: PMNModel, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return np.flatnonzero(model.predict(x) == labels)


def top_bins(scores: np.ndarray, k: int = 5) -> np.ndarray:
    """Indices of the ``k`` highest scores; ties go to the lower bin."""
    return np.argsort(-scores, kind="stable")[:k]


def attribution_hits(model: PMNModel, x: np.ndarray, labels: np.ndarray, target_bins, k: int = 5,
                     tol: int = 2) -> np.ndarray:
    """Per correctly classified sample: does a top-``k`` Grad-CAM bin lie within ``tol`` of its class bin?"""
    hits = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for i in correctly_classified(model, x, labels):
            top = top_bins(grad_cam(model, x[i]).scores, k)
            hits.append(bool(np.any(np.abs(top - target_bins[labels[i]]) <= tol)))
    return np.array(hits, dtype=bool)


def mask_shifts(model: PMNModel, x: np.ndarray, labels: np.ndarray, target_bins,
                half_width: int = 10) -> np.ndarray:
    """``(before, after)`` minimum distance for each correctly classified sample."""
    idx = correctly_classified(model, x, labels)
    return np.array([mask_distance_shift(model, x[i], target_bins[labels[i]], half_width) for i in idx])


# ------------------------------------------------------------------ export

def write_bundle(exp: Explanation, path) -> None:
    with open(path, "w") as fh:
        json.dump(exp.to_dict(), fh, indent=1)


def write_attribution_csv(attr: AttributionMap, path, bin_hz: float = BIN_HZ) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# bin_hz={bin_hz!r} target_class={attr.target_class}\n")
        w = csv.writer(fh)
        w.writerow(["bin", "freq_hz", "score"])
        for i, s in enumerate(attr.scores):
            w.writerow([i, repr(i * bin_hz), repr(float(s))])


def write_prototypes_csv(spectra: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"b{i}" for i in range(spectra.shape[1])])
        for row in spectra:
            w.writerow([repr(float(v)) for v in row])

"""Prototype matching network: encoder, decoder and classifier heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, NonFiniteError
from .nn import (BatchNorm1d, Conv1d, Deconv1d, Flatten, Linear, Module, ReLU,
                 Reshape, Sequential)
from .tensor import Rng

METRICS = ("sqL2", "L1", "cosine")
VARIANTS = ("pmn", "ae-mlp-baseline")
INPUT_LEN = 1024
# Init gain on the decoder's output deconv: the untrained decoder otherwise
# paints a noise floor over all 1024 bins that 50 epochs do not fully remove.
OUTPUT_INIT_GAIN = 0.1
COSINE_EPS = 1e-12

# (kernel, stride, padding) per stage.
ENCODER_GEOMETRY = ((9, 2, 4), (9, 2, 4), (11, 4, 5), (11, 4, 5), (11, 4, 5))
# Third stage uses 10@4@3 so that 64 -> 256 holds; see README "Architecture".
DECODER_GEOMETRY = ((10, 4, 3), (10, 4, 3), (10, 4, 3), (8, 2, 3), (8, 2, 3))


# ---------------------------------------------------------------- distances

def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise ConfigError(f"unknown distance metric {metric!r}; expected one of {METRICS}")


def pairwise_distance(a: np.ndarray, b: np.ndarray, metric: str = "sqL2") -> np.ndarray:
    """Distances between rows of ``a`` (n, q) and rows of ``b`` (m, q) -> (n, m)."""
    _check_metric(metric)
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"distance needs equal dimensions, got {a.shape} and {b.shape}")
    if metric == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        if np.any(na < COSINE_EPS) or np.any(nb < COSINE_EPS):
            raise DomainError("cosine distance undefined for a zero vector")
        return 1.0 - (a @ b.T) / np.outer(na, nb)
    diff = a[:, None, :] - b[None, :, :]
    if metric == "sqL2":
        return np.einsum("ijk,ijk->ij", diff, diff)
    return np.abs(diff).sum(axis=2)


def pairwise_distance_backward(a, b, grad, metric: str = "sqL2"):
    """Gradients of ``sum(grad * pairwise_distance(a, b))`` w.r.t. ``a`` and ``b``."""
    _check_metric(metric)
    if metric == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        an = a / na[:, None]
        bn = b / nb[:, None]
        sim = an @ bn.T
        # d(1 - cos)/da_i = -(bn_j - cos_ij an_i) / |a_i|
        ga = -(grad @ bn - (grad * sim).sum(axis=1)[:, None] * an) / na[:, None]
        gb = -(grad.T @ an - (grad * sim).sum(axis=0)[:, None] * bn) / nb[:, None]
        return ga, gb
    diff = a[:, None, :] - b[None, :, :]
    local = 2.0 * diff if metric == "sqL2" else np.sign(diff)
    weighted = grad[:, :, None] * local
    return weighted.sum(axis=1), -weighted.sum(axis=0)


def distance(z, p, metric: str = "sqL2") -> float:
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    if z.shape != p.shape:
        raise DimensionError(f"distance needs equal dimensions, got {z.shape} and {p.shape}")
    return float(pairwise_distance(z[None], p[None], metric)[0, 0])


def pm_layer(z: np.ndarray, prototypes: np.ndarray, metric: str = "sqL2") -> np.ndarray:
    """Distance from each latent in ``z`` to every prototype.

    A single latent vector gives an ``(m,)`` result, a batch ``(n, m)``.
    """
    z = np.asarray(z)
    out = pairwise_distance(z, prototypes, metric)
    return out[0] if z.ndim == 1 else out


def init_fc_weight(num_classes: int, num_prototypes: int, dtype=np.float64) -> np.ndarray:
    """Class-assignment matrix: ``W[i, j] = -1`` if ``j mod K == i`` else 0."""
    if num_classes < 1 or num_prototypes < num_classes:
        raise ConfigError(f"need m >= K >= 1, got K={num_classes}, m={num_prototypes}")
    j = np.arange(num_prototypes)
    return -(j[None, :] % num_classes == np.arange(num_classes)[:, None]).astype(dtype)


def prototype_classes(num_classes: int, num_prototypes: int) -> np.ndarray:
    return np.arange(num_prototypes) % num_classes


def softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def linear_logits(prototypes: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Expanded squared-L2 form ``2 p_k.z - p_k.p_k`` (drops the class-constant ``-|z|^2``)."""
    z = np.asarray(z)
    return 2.0 * z @ prototypes.T - np.einsum("kq,kq->k", prototypes, prototypes)


# ------------------------------------------------------------------- heads

class PrototypeHead(Module):
    """PM-layer followed by the class-mapping FC layer (no bias)."""

    def __init__(self, latent_dim, num_classes, num_prototypes, metric="sqL2", *, rng: Rng, dtype=np.float32):
        super().__init__()
        _check_metric(metric)
        self.metric = metric
        self.num_classes = num_classes
        self.params["prototypes"] = rng.normal(0.0, 0.1, size=(num_prototypes, latent_dim)).astype(dtype)
        self.params["fc_weight"] = init_fc_weight(num_classes, num_prototypes, dtype)
        self.zero_grad()

    @property
    def prototypes(self) -> np.ndarray:
        return self.params["prototypes"]

    def forward(self, z, train=False):
        dist = pairwise_distance(z, self.params["prototypes"], self.metric)
        self._cache = (z, dist)
        return dist @ self.params["fc_weight"].T

    @property
    def last_distances(self) -> np.ndarray:
        return self._need_cache()[1]

    def backward(self, grad, dist_grad=None):
        """``dist_grad`` adds a direct gradient on the distance matrix (regularizers)."""
        z, dist = self._need_cache()
        self.grads["fc_weight"] += grad.T @ dist
        d_dist = grad @ self.params["fc_weight"]
        if dist_grad is not None:
            d_dist = d_dist + dist_grad
        dz, dp = pairwise_distance_backward(z, self.params["prototypes"], d_dist, self.metric)
        self.grads["prototypes"] += dp.astype(self.grads["prototypes"].dtype)
        return dz


class MLPHead(Sequential):
    """Baseline classifier FC(q -> hidden)-ReLU-FC(hidden -> K)."""

    def __init__(self, latent_dim, num_classes, hidden=32, *, rng: Rng, dtype=np.float32):
        super().__init__(Linear(latent_dim, hidden, rng=rng, dtype=dtype), ReLU(),
                         Linear(hidden, num_classes, rng=rng, dtype=dtype))


# ------------------------------------------------------------------- model

@dataclass
class ModelConfig:
    num_classes: int = 4
    num_prototypes: int | None = None
    metric: str = "sqL2"
    variant: str = "pmn"
    latent_dim: int = 64
    hidden: int = 128
    channels: tuple[int, ...] = (8, 16, 32, 64, 128)
    baseline_hidden: int = 32
    dtype: str = "float32"

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.num_prototypes is None:
            self.num_prototypes = self.num_classes
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {self.variant!r}")
        _check_metric(self.metric)
        if len(self.channels) != len(ENCODER_GEOMETRY):
            raise ConfigError(f"need {len(ENCODER_GEOMETRY)} channel counts, got {self.channels}")
        if self.variant == "pmn" and self.num_prototypes < self.num_classes:
            raise ConfigError(f"m={self.num_prototypes} must be >= K={self.num_classes}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


class Forward(NamedTuple):
    z: np.ndarray
    recon: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    distances: np.ndarray | None


def encoder_output_len(length: int = INPUT_LEN) -> int:
    for k, s, p in ENCODER_GEOMETRY:
        length = (length + 2 * p - k) // s + 1
    return length


class PMNModel:
    """Autoencoder with a prototype-matching (or MLP baseline) classifier.

    Parameters are seeded from ``rng`` in a fixed order: encoder, decoder,
    head.
    """

    def __init__(self, config: ModelConfig, rng: Rng):
        self.config = config
        dt = np.dtype(config.dtype)
        self.dtype = dt
        ch = config.channels
        blocks: list[Module] = []
        c_in = 1
        for i, (c_out, (k, s, p)) in enumerate(zip(ch, ENCODER_GEOMETRY)):
            conv = Conv1d(c_in, c_out, k, s, p, rng=rng, dtype=dt, bias=False, input_grad=i > 0)
            blocks += [conv, BatchNorm1d(c_out, dtype=dt), ReLU()]
            c_in = c_out
        self.encoder_conv = Sequential(*blocks)
        self.feature_len = encoder_output_len()
        flat = ch[-1] * self.feature_len
        self.encoder_fc = Sequential(
            Flatten(),
            Linear(flat, config.hidden, rng=rng, dtype=dt), ReLU(),
            Linear(config.hidden, config.latent_dim, rng=rng, dtype=dt),
        )
        dec: list[Module] = [
            Linear(config.latent_dim, config.hidden, rng=rng, dtype=dt), ReLU(),
            Linear(config.hidden, flat, rng=rng, dtype=dt),
            Reshape(ch[-1], self.feature_len),
        ]
        dec_channels = list(reversed(ch[:-1])) + [1]
        c_in = ch[-1]
        for i, (c_out, (k, s, p)) in enumerate(zip(dec_channels, DECODER_GEOMETRY)):
            last = i == len(DECODER_GEOMETRY) - 1
            dec.append(Deconv1d(c_in, c_out, k, s, p, rng=rng, dtype=dt, bias=last))
            if last:
                dec[-1].params["weight"] *= dt.type(OUTPUT_INIT_GAIN)
            else:
                dec += [BatchNorm1d(c_out, dtype=dt), ReLU()]
            c_in = c_out
        dec.append(Flatten())
        self.decoder = Sequential(*dec)
        if config.variant == "pmn":
            self.head: Module = PrototypeHead(config.latent_dim, config.num_classes, config.num_prototypes,
                                              config.metric, rng=rng, dtype=dt)
        else:
            self.head = MLPHead(config.latent_dim, config.num_classes, config.baseline_hidden, rng=rng, dtype=dt)

    # -- parameter plumbing
    def modules(self) -> list[tuple[str, Module]]:
        return [("encoder_conv", self.encoder_conv), ("encoder_fc", self.encoder_fc),
                ("decoder", self.decoder), ("head", self.head)]

    def parameters(self) -> dict[str, np.ndarray]:
        return {n: p for pre, m in self.modules() for n, p in m.named_parameters(pre + ".")}

    def gradients(self) -> dict[str, np.ndarray]:
        return {n: g for pre, m in self.modules() for n, g in m.named_gradients(pre + ".")}

    def buffers(self) -> dict[str, np.ndarray]:
        return {n: b for pre, m in self.modules() for n, b in m.named_buffers(pre + ".")}

    def state(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = self.state()
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"state is missing tensors: {sorted(missing)}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise DimensionError(f"{name}: expected shape {arr.shape}, got {src.shape}")
            arr[...] = src

    def zero_grad(self) -> None:
        for _, m in self.modules():
            m.zero_grad()

    @property
    def is_pmn(self) -> bool:
        return self.config.variant == "pmn"

    @property
    def prototypes(self) -> np.ndarray:
        if not self.is_pmn:
            raise ConfigError("the baseline variant has no prototypes")
        return self.head.params["prototypes"]

    @property
    def fc_weight(self) -> np.ndarray:
        if not self.is_pmn:
            raise ConfigError("the baseline variant has no prototype FC weight")
        return self.head.params["fc_weight"]

    # -- passes
    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None]
        if x.ndim != 2 or x.shape[1] != INPUT_LEN:
            raise DimensionError(f"expected samples of length {INPUT_LEN}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("input spectrum contains non-finite values")
        return x[:, None, :]

    def feature_maps(self, x, train=False) -> np.ndarray:
        """Output of the last encoder conv block, ``(N, C, 4)``."""
        return self.encoder_conv.forward(self._prepare(x), train)

    def encode(self, x, train=False) -> np.ndarray:
        z = self.encoder_fc.forward(self.feature_maps(x, train), train)
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(f"non-finite latent; {self._diagnose(x)}")
        return z

    def decode(self, z, train=False) -> np.ndarray:
        return self.decoder.forward(np.asarray(z, dtype=self.dtype), train)

    def forward(self, x, train=False) -> Forward:
        z = self.encode(x, train)
        recon = self.decode(z, train)
        logits = self.head.forward(z, train)
        dist = self.head.last_distances if self.is_pmn else None
        return Forward(z, recon, logits, softmax(logits), dist)

    def backward(self, d_logits, d_z=None, d_recon=None, d_dist=None) -> None:
        """Backpropagate through head, decoder and encoder into the parameter gradients."""
        if self.is_pmn:
            dz = self.head.backward(d_logits, d_dist)
        else:
            dz = self.head.backward(d_logits)
        if d_z is not None:
            dz = dz + d_z
        if d_recon is not None:
            dz = dz + self.decoder.backward(d_recon)
        self.encoder_conv.backward(self.encoder_fc.backward(dz))

    def classify(self, x):
        """Eval-mode ``(probabilities, logits, distances)``; distances are None for the baseline."""
        z = self.encode(x)
        logits = self.head.forward(z)
        dist = self.head.last_distances if self.is_pmn else None
        return softmax(logits), logits, dist

    def predict(self, x) -> np.ndarray:
        return self.classify(x)[0].argmax(axis=1)

    def reconstruct(self, x) -> np.ndarray:
        return self.decode(self.encode(x))

    def linear_equivalent_logits(self, z) -> np.ndarray:
        """Logits from the expanded linear form; valid only for squared L2 with ``W = -I``."""
        if not self.is_pmn or self.config.metric != "sqL2":
            raise ConfigError("linear equivalence requires the squared-L2 prototype head")
        w = self.fc_weight
        k = self.config.num_classes
        if w.shape != (k, k) or not np.array_equal(w, -np.eye(k, dtype=w.dtype)):
            raise ConfigError("linear equivalence requires the FC weight to equal -I")
        return linear_logits(self.prototypes.astype(float), np.asarray(z, dtype=float))

    def _diagnose(self, x) -> str:
        h = self._prepare(x)
        for name, seq in (("encoder_conv", self.encoder_conv), ("encoder_fc", self.encoder_fc)):
            for i, layer in enumerate(seq.layers):
                h = layer.forward(h, False)
                if not np.all(np.isfinite(h)):
                    return f"first non-finite output at {name}.{i} ({type(layer).__name__})"
        return "no non-finite activation reproduced in eval mode"

    def layer_output_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Per-stage output shapes (per sample) for the architecture table."""
        x = np.zeros((2, INPUT_LEN), dtype=self.dtype)
        h = x[:, None, :]
        rows = [("enc.input", h.shape[1:])]
        for i in range(0, len(self.encoder_conv), 3):
            for layer in self.encoder_conv.layers[i:i + 3]:
                h = layer.forward(h, False)
            rows.append((f"enc.{i // 3 + 1}", h.shape[1:]))
        h = self.encoder_fc.forward(h, False)
        rows.append(("enc.6", h.shape[1:]))
        layers = self.decoder.layers
        for layer in layers[:4]:
            h = layer.forward(h, False)
        rows.append(("dec.1", h.shape[1:]))
        idx, stage = 4, 2
        while idx < len(layers):
            chunk = 3 if isinstance(layers[idx + 1], BatchNorm1d) else 2
            for layer in layers[idx:idx + chunk]:
                h = layer.forward(h, False)
            rows.append((f"dec.{stage}", h.shape[1:]))
            idx += chunk
            stage += 1
        h = self.head.forward(self.encoder_fc.forward(self.encoder_conv.forward(x[:, None, :])))
        rows.append(("cla.1", h.shape[1:]))
        return rows

"""Synthetic gearbox vibration data, spectra, augmentation and dataset files.

The generator stands in for accelerometer recordings: each class is a set of
mesh-frequency harmonics, optionally amplitude-modulated at a shaft rate
(which puts sidebands around the harmonic), plus white noise. Windows are
2048 samples at 12 kHz, so spectrum bin ``k`` sits at ``k * 12000 / 2048``
Hz (5.859375 Hz per bin).
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DimensionError, VersionError
from .tensor import Rng

SAMPLE_RATE = 12_000.0
WINDOW = 2048
NUM_BINS = WINDOW // 2
BIN_HZ = SAMPLE_RATE / WINDOW

PMDS_MAGIC = b"PMDS"
PMDS_VERSION = 1
_PMDS_HEADER = struct.Struct("<4sHII")


def freq_to_bin(freq: float, rate: float = SAMPLE_RATE, window: int = WINDOW) -> int:
    return int(round(freq * window / rate))


@dataclass(frozen=True)
class FaultSpec:
    """Spectral recipe for one health state.

    ``harmonics[h - 1]`` is the amplitude of the ``h``-th mesh harmonic;
    ``sideband_depth[h - 1]`` (if given) is the amplitude-modulation depth at
    ``sideband_spacing`` Hz applied to that harmonic. ``discriminative_order``
    names the harmonic that carries the class signature.
    """

    class_id: int
    name: str
    mesh_freq: float = 1500.0
    harmonics: tuple[float, ...] = (1.0,)
    sideband_spacing: float = 0.0
    sideband_depth: tuple[float, ...] = ()
    noise_std: float = 0.1
    amp_jitter: float = 0.1
    discriminative_order: int = 1

    def validate(self, rate: float = SAMPLE_RATE) -> None:
        nyquist = rate / 2
        if any(a < 0 for a in self.harmonics) or any(m < 0 for m in self.sideband_depth):
            raise ConfigError(f"{self.name}: amplitudes must be >= 0")
        if self.noise_std < 0 or not 0 <= self.amp_jitter < 1:
            raise ConfigError(f"{self.name}: invalid noise_std / amp_jitter")
        if len(self.sideband_depth) > len(self.harmonics):
            raise ConfigError(f"{self.name}: more sideband depths than harmonics")
        for h, amp in enumerate(self.harmonics, start=1):
            depth = self.sideband_depth[h - 1] if h <= len(self.sideband_depth) else 0.0
            top = h * self.mesh_freq + (self.sideband_spacing if depth > 0 else 0.0)
            if amp > 0 and top >= nyquist:
                raise ConfigError(f"{self.name}: harmonic {h} at {top:.1f} Hz is not below Nyquist {nyquist} Hz")

    def harmonic_bin(self, order: int | None = None) -> int:
        order = self.discriminative_order if order is None else order
        return freq_to_bin(order * self.mesh_freq)

    def clean(self) -> "FaultSpec":
        """Same recipe without noise or amplitude jitter."""
        return replace(self, noise_std=0.0, amp_jitter=0.0)


def default_fault_specs() -> list[FaultSpec]:
    """Four-state task: normal, wear, pitting, crack.

    Mesh frequency 1500 Hz puts harmonics 1-3 on bins 256/512/768; the shaft
    modulation spacing is exactly 5 bins.
    """
    shaft = 5 * BIN_HZ
    return [
        FaultSpec(0, "normal", harmonics=(1.0, 0.25, 0.1), discriminative_order=1),
        FaultSpec(1, "wear", harmonics=(0.5, 1.0, 0.35), discriminative_order=2),
        FaultSpec(2, "pitting", harmonics=(0.5, 0.25, 1.0), discriminative_order=3),
        FaultSpec(3, "crack", harmonics=(1.0, 0.25, 0.1), sideband_spacing=shaft,
                  sideband_depth=(0.8, 0.8), discriminative_order=1),
    ]


def generate_signal(spec: FaultSpec, rng: Rng | None = None, length: int = WINDOW,
                    rate: float = SAMPLE_RATE, random_phase: bool = True) -> np.ndarray:
    """One time-domain window for ``spec``."""
    spec.validate(rate)
    if rng is None:
        rng = Rng(0)
    t = np.arange(length) / rate
    x = np.zeros(length)
    for h, amp in enumerate(spec.harmonics, start=1):
        if amp == 0:
            continue
        a = amp * (1 + spec.amp_jitter * rng.uniform(-1, 1)) if spec.amp_jitter else amp
        phase = rng.uniform(0, 2 * np.pi) if random_phase else 0.0
        carrier = np.cos(2 * np.pi * h * spec.mesh_freq * t + phase)
        depth = spec.sideband_depth[h - 1] if h <= len(spec.sideband_depth) else 0.0
        if depth > 0:
            mod_phase = rng.uniform(0, 2 * np.pi) if random_phase else 0.0
            carrier = carrier * (1 + depth * np.cos(2 * np.pi * spec.sideband_spacing * t + mod_phase))
        x += a * carrier
    if spec.noise_std > 0:
        x += rng.normal(0.0, spec.noise_std, size=length)
    return x


def to_spectrum(x: np.ndarray, length: int = WINDOW) -> np.ndarray:
    """Amplitude spectrum ``2/N |FFT|`` over bins ``0 .. N/2 - 1`` (Nyquist dropped)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != length or length % 2:
        raise DimensionError(f"expected a 1-D window of even length {length}, got shape {x.shape}")
    return np.abs(np.fft.rfft(x))[: length // 2] * (2.0 / length)


def normalize_01(x: np.ndarray) -> np.ndarray:
    """Per-sample min-max scaling; a constant sample maps to zeros."""
    x = np.asarray(x, dtype=float)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def clean_template(spec: FaultSpec) -> np.ndarray:
    """Normalized noise-free spectrum of a class."""
    return normalize_01(to_spectrum(generate_signal(spec.clean(), random_phase=False)))


# ------------------------------------------------------------------ augmentation

@dataclass(frozen=True)
class AugmentConfig:
    """Noise strength ``v``, mask length ``d`` (bins) and per-augmentation probability."""

    v: float = 0.0
    d: int = 0
    probability: float = 0.5

    def __post_init__(self):
        if not 0 <= self.probability <= 1:
            raise ConfigError(f"augmentation probability must be in [0, 1], got {self.probability}")
        if self.v < 0:
            raise ConfigError(f"noise strength v must be >= 0, got {self.v}")
        if not 0 <= self.d <= NUM_BINS:
            raise ConfigError(f"mask length d must be in [0, {NUM_BINS}], got {self.d}")

    @classmethod
    def from_label(cls, label: str, probability: float = 0.5) -> "AugmentConfig":
        v, d = parse_noise_label(label)
        return cls(v, d, probability)

    @property
    def label(self) -> str:
        return f"{self.v:g}-{self.d}"


def parse_noise_label(label: str) -> tuple[float, int]:
    """``"0.2-200"`` -> ``(0.2, 200)``."""
    try:
        v, d = label.strip().split("-")
        return float(v), int(d)
    except ValueError:
        raise ConfigError(f"noise label must look like 'v-d', got {label!r}") from None


def augment(sample: np.ndarray, config: AugmentConfig, rng: Rng) -> np.ndarray:
    """Random add-noise, scale and mask, each applied with ``config.probability``, in that order."""
    x = np.array(sample, dtype=float)
    p = config.probability
    if rng.random() < p:
        x = x + config.v * 10 * rng.normal(0.0, x.std(), size=x.shape)
    if rng.random() < p:
        x = x * rng.normal(1.0, config.v)
    if rng.random() < p and config.d > 0:
        start = int(rng.integers(0, len(x) - config.d + 1))
        x[start:start + config.d] = 0.0
    return x


# ------------------------------------------------------------------ datasets

@dataclass
class Dataset:
    x: np.ndarray
    labels: np.ndarray
    domains: np.ndarray = None
    ids: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        self.domains = np.zeros(n, np.int64) if self.domains is None else np.asarray(self.domains, np.int64)
        self.ids = np.arange(n) if self.ids is None else np.asarray(self.ids)
        if self.x.ndim != 2 or len(self.x) != n or len(self.domains) != n:
            raise DimensionError(f"inconsistent dataset arrays: x {self.x.shape}, {n} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.labels[idx], self.domains[idx], self.ids[idx], dict(self.meta))

    def class_counts(self) -> dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


def generate_samples(specs, per_class: int, rng: Rng, domain: int = 0) -> Dataset:
    """Normalized clean-pipeline spectra, ``per_class`` windows for each spec."""
    xs, ys = [], []
    for spec in specs:
        for _ in range(per_class):
            xs.append(normalize_01(to_spectrum(generate_signal(spec, rng))))
            ys.append(spec.class_id)
    return Dataset(np.array(xs), np.array(ys), np.full(len(ys), domain))


def stratified_split(labels: np.ndarray, ratio: float, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < ratio < 1:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(ratio * len(idx)))
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def augment_dataset(data: Dataset, config: AugmentConfig, rng: Rng) -> Dataset:
    x = np.array([augment(row, config, rng) for row in data.x]) if len(data) else data.x
    return Dataset(x, data.labels, data.domains, data.ids, dict(data.meta))


def build_dataset(specs, per_class: int = 200, ratio: float = 0.7, rng: Rng | None = None,
                  augmentation: AugmentConfig | None = None, domain: int = 0) -> tuple[Dataset, Dataset]:
    """Generate, split (stratified) and augment a train/test pair.

    Sub-streams of ``rng``: 0 generation, 1 split, 2 train augmentation,
    3 test augmentation.
    """
    if per_class < 2:
        raise ConfigError(f"need at least 2 samples per class, got {per_class}")
    rng = Rng(0) if rng is None else rng
    full = generate_samples(specs, per_class, rng.spawn(0), domain)
    tr, te = stratified_split(full.labels, ratio, rng.spawn(1))
    train, test = full.subset(tr), full.subset(te)
    if augmentation is not None:
        train = augment_dataset(train, augmentation, rng.spawn(2))
        test = augment_dataset(test, augmentation, rng.spawn(3))
    return train, test


# ------------------------------------------------------------------ files

def save_pmds(data: Dataset, path) -> None:
    """Binary dataset: header then per sample ``label u16, domain u16, bins f32`` (little endian)."""
    n, bins = data.x.shape
    if len(data) and (data.labels.min() < 0 or data.domains.min() < 0):
        raise DataError("PMDS stores labels and domains as unsigned 16-bit integers")
    rec = np.zeros(n, dtype=_record_dtype(bins))
    rec["label"] = data.labels
    rec["domain"] = data.domains
    rec["bins"] = data.x
    with open(path, "wb") as fh:
        fh.write(_PMDS_HEADER.pack(PMDS_MAGIC, PMDS_VERSION, n, bins))
        fh.write(rec.tobytes())


def load_pmds(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _PMDS_HEADER.size:
        raise DataError(f"{path}: file too short for a PMDS header")
    magic, version, n, bins = _PMDS_HEADER.unpack_from(raw)
    if magic != PMDS_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != PMDS_VERSION:
        raise VersionError(f"{path}: unsupported PMDS version {version}")
    dt = _record_dtype(bins)
    body = raw[_PMDS_HEADER.size:]
    if len(body) != n * dt.itemsize:
        raise DataError(f"{path}: expected {n} records of {dt.itemsize} bytes, got {len(body)} bytes")
    rec = np.frombuffer(body, dtype=dt)
    return Dataset(rec["bins"].astype(np.float32), rec["label"].astype(np.int64), rec["domain"].astype(np.int64))


def _record_dtype(bins: int) -> np.dtype:
    return np.dtype([("label", "<u2"), ("domain", "<u2"), ("bins", "<f4", (bins,))])


def save_csv(data: Dataset, path) -> None:
    """One row per sample: ``label,domain,b0..b{bins-1}``."""
    bins = data.x.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "domain"] + [f"b{i}" for i in range(bins)])
        for y, dom, row in zip(data.labels, data.domains, data.x):
            w.writerow([int(y), int(dom)] + [repr(float(v)) for v in row])

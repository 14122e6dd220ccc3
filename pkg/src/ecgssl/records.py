"""Waveform containers, cropping and signal/noise power accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class LabelSpace:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        if len(names) < 1:
            raise ValueError("label space needs at least one label")
        if len(set(names)) != len(names):
            raise ValueError("label names must be unique")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True, eq=False)
class EcgRecord:
    """A multichannel recording in millivolts, channel-major ``[n_channels, n_timesteps]``."""

    id: str
    samples: np.ndarray
    fs: float = 100.0
    labels: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise ValueError(f"record {self.id}: expected 2-D samples, got shape {samples.shape}")
        if samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ValueError(f"record {self.id}: empty samples {samples.shape}")
        if not self.fs > 0:
            raise ValueError(f"record {self.id}: fs must be positive, got {self.fs}")
        if not np.all(np.isfinite(samples)):
            raise ValueError(f"record {self.id}: non-finite sample values")
        if any(int(i) < 0 for i in self.labels):
            raise ValueError(f"record {self.id}: negative label index")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", frozenset(int(i) for i in self.labels))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_timesteps(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_timesteps / self.fs

    def check_labels(self, label_space: LabelSpace) -> None:
        bad = [i for i in self.labels if i >= len(label_space)]
        if bad:
            raise ValueError(f"record {self.id}: label indices {bad} outside label space of size {len(label_space)}")

    def label_vector(self, n_labels: int) -> np.ndarray:
        y = np.zeros(n_labels, dtype=np.float32)
        y[list(self.labels)] = 1.0
        return y

    def as_segment(self) -> "Segment":
        return Segment(self.samples, self.fs, self.id, 0)


@dataclass(frozen=True, eq=False)
class Segment:
    samples: np.ndarray
    fs: float
    source_id: str = ""
    source_offset: int = 0
    padded: bool = False

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise ValueError(f"segment needs shape [channels, crop_len>=1], got {samples.shape}")
        object.__setattr__(self, "samples", samples)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def crop_len(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples: np.ndarray) -> "Segment":
        return replace(self, samples=samples)


def window_len(len_s: float, fs: float) -> int:
    if not len_s > 0:
        raise ValueError(f"crop length must be positive, got {len_s}")
    n = int(round(len_s * fs))
    if n < 1:
        raise ValueError(f"crop of {len_s}s at {fs}Hz is shorter than one sample")
    return n


def _padded(record: EcgRecord, n: int) -> Segment:
    out = np.zeros((record.n_channels, n), dtype=record.samples.dtype)
    out[:, : record.n_timesteps] = record.samples
    return Segment(out, record.fs, record.id, 0, padded=True)


def random_crop(record: EcgRecord, len_s: float, rng: np.random.Generator) -> Segment:
    """Contiguous crop of ``round(len_s * fs)`` steps at a uniformly drawn offset.

    Records shorter than the window are right-padded with zeros and flagged.
    """
    n = window_len(len_s, record.fs)
    if record.n_timesteps < n:
        return _padded(record, n)
    offset = int(rng.integers(0, record.n_timesteps - n + 1))
    return Segment(record.samples[:, offset : offset + n], record.fs, record.id, offset)


def nonoverlapping_crops(record: EcgRecord, len_s: float) -> list[Segment]:
    n = window_len(len_s, record.fs)
    count = record.n_timesteps // n
    if count == 0:
        return [_padded(record, n)]
    return [
        Segment(record.samples[:, i * n : (i + 1) * n], record.fs, record.id, i * n)
        for i in range(count)
    ]


def snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    """Total-energy signal-to-noise ratio in dB over all channels and timesteps.

    Returns ``math.inf`` when the noise carries no energy; callers test for it
    with ``math.isinf``.
    """
    signal = np.asarray(signal, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if signal.shape != noise.shape:
        raise ValueError(f"shape mismatch: signal {signal.shape} vs noise {noise.shape}")
    p_signal = float(np.sum(signal**2))
    p_noise = float(np.sum(noise**2))
    if p_signal == 0:
        raise ValueError("signal has zero power")
    if p_noise == 0:
        return math.inf
    return 10.0 * math.log10(p_signal / p_noise)


def zscore_channels(samples: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Per-channel standardization; off by default in every pipeline."""
    mean = samples.mean(axis=1, keepdims=True)
    std = samples.std(axis=1, keepdims=True)
    return (samples - mean) / (std + eps)


def stack_segments(segments: Sequence[Segment], dtype=np.float32) -> np.ndarray:
    return np.stack([s.samples for s in segments]).astype(dtype, copy=False)

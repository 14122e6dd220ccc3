"""Physiological noise generators and the six-level intensity ladder.

Four additive noise sources are modelled: baseline wander (slow sinusoids),
powerline pickup (mains frequency and harmonics), electromyographic noise
(white Gaussian) and baseline shift (random step functions). Every generator
returns an array of the requested ``(n_channels, n_timesteps)`` shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .records import Segment


@dataclass(frozen=True)
class PhysioParams:
    # defaults are the pretraining amplitudes
    c_max_blw: float = 0.1
    c_max_pln: float = 0.2
    c_max_emn: float = 0.5
    c_max_bls: float = 1.0
    delta_f: float = 0.01
    f_c: float = 0.05
    k_blw: int | None = None
    f_n: float = 50.0
    k_pln: int = 3
    bls_max: float = 0.3
    bls_len_mean: float = 3.0
    emg_scale: Literal["variance", "std"] = "variance"

    def __post_init__(self):
        for name in ("c_max_blw", "c_max_pln", "c_max_emn", "c_max_bls"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.delta_f <= 0 or self.f_c <= 0 or self.f_n <= 0:
            raise ValueError("delta_f, f_c and f_n must be positive")
        if self.k_pln < 1:
            raise ValueError("k_pln must be >= 1")
        if self.k_blw is not None and self.k_blw < 0:
            raise ValueError("k_blw must be >= 0")
        if self.bls_max < 0 or self.bls_len_mean <= 0:
            raise ValueError("bls_max must be >= 0 and bls_len_mean > 0")
        if self.emg_scale not in ("variance", "std"):
            raise ValueError(f"emg_scale must be 'variance' or 'std', got {self.emg_scale!r}")

    @property
    def n_wander_components(self) -> int:
        if self.k_blw is not None:
            return self.k_blw
        return int(round(self.f_c / self.delta_f))

    @classmethod
    def zero(cls) -> "PhysioParams":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class NoiseLevel:
    level: int
    c_max_blw: float
    c_max_pln: float
    c_max_emn: float
    c_max_bls: float

    def params(self, base: PhysioParams | None = None) -> PhysioParams:
        return replace(
            base or PhysioParams(),
            c_max_blw=self.c_max_blw,
            c_max_pln=self.c_max_pln,
            c_max_emn=self.c_max_emn,
            c_max_bls=self.c_max_bls,
        )


NOISE_LEVELS: dict[int, NoiseLevel] = {
    1: NoiseLevel(1, 0.05, 0.25, 0.1, 0.5),
    2: NoiseLevel(2, 0.1, 0.5, 0.2, 1.0),
    3: NoiseLevel(3, 0.1, 1.0, 0.2, 2.0),
    4: NoiseLevel(4, 0.2, 1.0, 0.4, 2.0),
    5: NoiseLevel(5, 0.2, 1.5, 0.4, 2.5),
    6: NoiseLevel(6, 0.3, 2.0, 0.5, 3.0),
}


def resolve(level_or_params: int | NoiseLevel | PhysioParams) -> PhysioParams:
    if isinstance(level_or_params, PhysioParams):
        return level_or_params
    if isinstance(level_or_params, NoiseLevel):
        return level_or_params.params()
    if isinstance(level_or_params, (int, np.integer)) and not isinstance(level_or_params, bool):
        try:
            return NOISE_LEVELS[int(level_or_params)].params()
        except KeyError:
            pass
    raise ValueError(f"unknown noise level {level_or_params!r}; expected 1..6 or PhysioParams")


def _signed_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.abs(rng.standard_normal(n)) * rng.choice([-1.0, 1.0], size=n)


def _time_axis(n_timesteps: int, fs: float) -> np.ndarray:
    return np.arange(n_timesteps) / fs


def baseline_wander(shape: tuple[int, int], fs: float, params: PhysioParams, rng: np.random.Generator) -> np.ndarray:
    n_channels, n_timesteps = shape
    if params.c_max_blw == 0:
        return np.zeros(shape)
    k = params.n_wander_components
    amp = rng.uniform(0.0, params.c_max_blw)
    a = rng.uniform(0.0, 1.0, size=k)
    phi = rng.uniform(0.0, 2 * math.pi, size=k)
    c = _signed_normal(rng, n_channels)
    t = _time_axis(n_timesteps, fs)
    freqs = np.arange(1, k + 1) * params.delta_f
    wave = (a[:, None] * np.cos(2 * math.pi * freqs[:, None] * t[None, :] + phi[:, None])).sum(axis=0)
    return amp * c[:, None] * wave[None, :]


def powerline_noise(shape: tuple[int, int], fs: float, params: PhysioParams, rng: np.random.Generator) -> np.ndarray:
    n_channels, n_timesteps = shape
    if params.c_max_pln == 0:
        return np.zeros(shape)
    amp = rng.uniform(0.0, params.c_max_pln)
    a = rng.uniform(0.0, 1.0, size=params.k_pln)
    # one phase shared by all harmonics
    phi = rng.uniform(0.0, 2 * math.pi)
    c = rng.uniform(-1.0, 1.0, size=n_channels)
    t = _time_axis(n_timesteps, fs)
    harmonics = np.arange(1, params.k_pln + 1) * params.f_n
    wave = (a[:, None] * np.cos(2 * math.pi * harmonics[:, None] * t[None, :] + phi)).sum(axis=0)
    return amp * c[:, None] * wave[None, :]


def emg_noise(shape: tuple[int, int], params: PhysioParams, rng: np.random.Generator) -> np.ndarray:
    if params.c_max_emn == 0:
        return np.zeros(shape)
    std = math.sqrt(params.c_max_emn) if params.emg_scale == "variance" else params.c_max_emn
    return rng.normal(0.0, std, size=shape)


def step_function(n_timesteps: int, fs: float, params: PhysioParams, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Sum of randomly placed rectangular steps; returns ``(swf, n_steps)``."""
    max_steps = math.ceil(params.bls_max * n_timesteps / fs)
    n_steps = int(rng.integers(0, max_steps + 1))
    swf = np.zeros(n_timesteps)
    mean_len = fs * params.bls_len_mean
    for _ in range(n_steps):
        length = int(np.clip(round(rng.normal(mean_len, 0.2 * mean_len)), 1, n_timesteps))
        start = int(rng.integers(0, n_timesteps - length + 1))
        swf[start : start + length] += rng.uniform(0.0, 1.0)
    return swf, n_steps


def baseline_shift(shape: tuple[int, int], fs: float, params: PhysioParams, rng: np.random.Generator) -> np.ndarray:
    n_channels, n_timesteps = shape
    if params.c_max_bls == 0:
        return np.zeros(shape)
    swf, _ = step_function(n_timesteps, fs, params, rng)
    amp = rng.uniform(0.0, params.c_max_bls)
    c = _signed_normal(rng, n_channels)
    return amp * c[:, None] * swf[None, :]


def physio_components(shape: tuple[int, int], fs: float, params: PhysioParams, rng: np.random.Generator) -> dict[str, np.ndarray]:
    r_blw, r_pln, r_emn, r_bls = rng.spawn(4)
    return {
        "blw": baseline_wander(shape, fs, params, r_blw),
        "pln": powerline_noise(shape, fs, params, r_pln),
        "emn": emg_noise(shape, params, r_emn),
        "bls": baseline_shift(shape, fs, params, r_bls),
    }


def apply_physio_noise(
    seg: Segment,
    level_or_params: int | NoiseLevel | PhysioParams,
    rng: np.random.Generator,
    return_noise: bool = False,
):
    """Superimpose all four noise sources on ``seg``.

    With ``return_noise=True`` returns ``(noisy_segment, noise)`` where
    ``noise`` equals ``noisy_segment.samples - seg.samples`` exactly.
    """
    params = resolve(level_or_params)
    parts = physio_components(seg.samples.shape, seg.fs, params, rng)
    total = parts["blw"] + parts["pln"] + parts["emn"] + parts["bls"]
    x = np.asarray(seg.samples)
    dtype = x.dtype if x.dtype.kind == "f" else np.float64
    out = (x + total).astype(dtype, copy=False)
    noisy = seg.with_samples(out)
    if return_noise:
        return noisy, out - x
    return noisy

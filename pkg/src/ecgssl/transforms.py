"""Stochastic augmentations for instance-contrastive pretraining.

All transforms take a :class:`~ecgssl.records.Segment` and an explicit
``numpy.random.Generator`` and return a new segment of identical shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .records import Segment

BLUR_KERNEL = np.array([0.1, 0.2, 0.4, 0.2, 0.1])


def _like(x: np.ndarray, out: np.ndarray) -> np.ndarray:
    return out.astype(x.dtype, copy=False) if x.dtype.kind == "f" else out


def gaussian_noise(seg: Segment, sigma: float = 0.01, rng: np.random.Generator | None = None) -> Segment:
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return seg
    eps = rng.normal(0.0, sigma, size=seg.samples.shape)
    return seg.with_samples(_like(seg.samples, seg.samples + eps))


def gaussian_blur(seg: Segment, rng: np.random.Generator | None = None) -> Segment:
    """Convolve each channel with :data:`BLUR_KERNEL`, replicate-padding the edges.

    Written as ``x + sum_j w_j (x[t + j] - x[t])``, which equals the convolution
    because the kernel sums to one, and leaves constant signals bit-exact.
    """
    x = np.asarray(seg.samples, dtype=np.float64)
    k = len(BLUR_KERNEL) // 2
    padded = np.pad(x, ((0, 0), (k, k)), mode="edge")
    n = x.shape[1]
    delta = sum(w * (padded[:, j : j + n] - x) for j, w in enumerate(BLUR_KERNEL))
    return seg.with_samples(_like(seg.samples, x + delta))


def channel_resize(seg: Segment, b: float = 3.0, rng: np.random.Generator | None = None) -> Segment:
    if b < 1:
        raise ValueError(f"scale base b must be >= 1, got {b}")
    a = rng.uniform(-1.0, 1.0, size=(seg.n_channels, 1))
    return seg.with_samples(_like(seg.samples, seg.samples * np.power(b, a)))


def _resample_linear(x: np.ndarray, start: int, n: int, out_len: int) -> np.ndarray:
    if n == 1 or out_len == 1:
        return np.repeat(x[:, start : start + 1], out_len, axis=1)
    pos = start + np.arange(out_len) * ((n - 1) / (out_len - 1))
    grid = np.arange(x.shape[1])
    return np.stack([np.interp(pos, grid, ch) for ch in x])


def random_resized_crop(
    seg: Segment, l: float = 0.5, m: float = 1.0, rng: np.random.Generator | None = None
) -> Segment:
    """Crop a fraction ``p ~ U[l, m]`` of the segment and stretch it back to full length."""
    if not (0 < l <= m <= 1):
        raise ValueError(f"random_resized_crop needs 0 < l <= m <= 1, got ({l}, {m})")
    length = seg.crop_len
    p = rng.uniform(l, m)
    n = min(length, max(1, int(round(p * length))))
    start = int(rng.integers(0, length - n + 1))
    if n == length:
        return seg
    return seg.with_samples(_like(seg.samples, _resample_linear(seg.samples, start, n, length)))


def time_out(seg: Segment, t_l: float = 0.0, t_u: float = 0.5, rng: np.random.Generator | None = None) -> Segment:
    if not (0 <= t_l <= t_u <= 1):
        raise ValueError(f"time_out needs 0 <= t_l <= t_u <= 1, got ({t_l}, {t_u})")
    length = seg.crop_len
    t = rng.uniform(t_l, t_u)
    n = int(round(t * length))
    start = int(rng.integers(0, length - n + 1))
    if n == 0:
        return seg
    out = np.array(seg.samples, copy=True)
    out[:, start : start + n] = 0
    return seg.with_samples(out)


def _place_anchors(length: int, w: int, r: int, rng: np.random.Generator) -> list[int]:
    candidates = np.arange(r, length - r)
    anchors: list[int] = []
    if w == 0 or len(candidates) == 0:
        return anchors
    for a in rng.permutation(candidates):
        if all(abs(int(a) - b) >= 2 * r for b in anchors):
            anchors.append(int(a))
            if len(anchors) == w:
                break
    return sorted(anchors)


def dynamic_time_warp(
    seg: Segment,
    w: int = 3,
    r: int = 10,
    rng: np.random.Generator | None = None,
    return_count: bool = False,
):
    """Locally stretch and squeeze the time axis around ``w`` random anchors.

    Each anchor owns the window ``[a - r, a + r]``. The anchor sample is moved
    by ``d ~ U[-r/2, r/2]`` steps and both halves of the window are re-timed
    linearly, so the time map stays monotone and the window borders are fixed.
    Windows never overlap; when fewer than ``w`` fit, fewer are used and
    ``return_count=True`` exposes the effective number.
    """
    if w < 0 or r < 1:
        raise ValueError(f"dynamic_time_warp needs w >= 0 and r >= 1, got w={w}, r={r}")
    x = seg.samples
    length = seg.crop_len
    anchors = _place_anchors(length, w, r, rng)
    if not anchors:
        return (seg, 0) if return_count else seg
    out = np.array(x, dtype=np.float64, copy=True)
    grid = np.arange(length)
    for a in anchors:
        d = rng.uniform(-r / 2, r / 2)
        left = np.arange(a - r + 1, a + 1)
        right = np.arange(a + 1, a + r)
        src = np.concatenate([
            (a - r) + (left - (a - r)) * ((r + d) / r),
            (a + d) + (right - a) * ((r - d) / r),
        ])
        idx = np.arange(a - r + 1, a + r)
        for c in range(x.shape[0]):
            out[c, idx] = np.interp(src, grid, x[c])
    result = seg.with_samples(_like(x, out))
    return (result, len(anchors)) if return_count else result


def _physio(seg: Segment, rng: np.random.Generator | None = None, **params) -> Segment:
    from .physio import PhysioParams, apply_physio_noise

    if "level" in params:
        return apply_physio_noise(seg, int(params["level"]), rng)
    return apply_physio_noise(seg, PhysioParams(**params), rng)


KINDS: dict[str, tuple[str, Callable[..., Any]]] = {
    "gn": ("GaussianNoise", gaussian_noise),
    "gb": ("GaussianBlur", gaussian_blur),
    "cr": ("ChannelResize", channel_resize),
    "rrc": ("RandomResizedCrop", random_resized_crop),
    "to": ("TimeOut", time_out),
    "dtw": ("DynamicTimeWarp", dynamic_time_warp),
    "physio": ("PhysioNoise", _physio),
}
_ALIASES = {long.lower(): short for short, (long, _) in KINDS.items()}

_DEFAULTS: dict[str, dict[str, float]] = {
    "gn": {"sigma": 0.01},
    "gb": {},
    "cr": {"b": 3.0},
    "rrc": {"l": 0.5, "m": 1.0},
    "to": {"t_l": 0.0, "t_u": 0.5},
    "dtw": {"w": 3, "r": 10},
    "physio": {},
}


def _validate(kind: str, p: Mapping[str, Any]) -> None:
    if kind == "gn" and p["sigma"] < 0:
        raise ValueError("gn: sigma must be >= 0")
    if kind == "cr" and p["b"] < 1:
        raise ValueError("cr: b must be >= 1")
    if kind == "rrc" and not (0 < p["l"] <= p["m"] <= 1):
        raise ValueError("rrc: need 0 < l <= m <= 1")
    if kind == "to" and not (0 <= p["t_l"] <= p["t_u"] <= 1):
        raise ValueError("to: need 0 <= t_l <= t_u <= 1")
    if kind == "dtw" and (p["w"] < 0 or p["r"] < 1):
        raise ValueError("dtw: need w >= 0 and r >= 1")
    if kind == "physio":
        from .physio import PhysioParams, resolve

        if "level" in p:
            if len(p) > 1:
                raise ValueError("physio: 'level' cannot be combined with other parameters")
            resolve(p["level"])
            return
        try:
            PhysioParams(**p)
        except TypeError as e:
            raise ValueError(f"physio: {e}") from None


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}; expected one of {sorted(KINDS)}")
        if kind != "physio":
            unknown = set(self.params) - set(_DEFAULTS[kind])
            if unknown:
                raise ValueError(f"{kind}: unknown parameters {sorted(unknown)}")
        merged = {**_DEFAULTS[kind], **self.params}
        _validate(kind, merged)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", merged)

    @property
    def name(self) -> str:
        return KINDS[self.kind][0]

    def __call__(self, seg: Segment, rng: np.random.Generator) -> Segment:
        return KINDS[self.kind][1](seg, rng=rng, **self.params)

    @classmethod
    def parse(cls, item: "str | Mapping[str, Any] | TransformSpec") -> "TransformSpec":
        """Accept ``"rrc"`` or ``{"kind": "rrc", "l": 0.3}``."""
        if isinstance(item, TransformSpec):
            return item
        if isinstance(item, str):
            return cls(item)
        item = dict(item)
        try:
            kind = item.pop("kind")
        except KeyError:
            raise ValueError(f"transform entry {item!r} has no 'kind'") from None
        return cls(kind, item)


def parse_pipeline(items: Sequence[Any]) -> list[TransformSpec]:
    return [TransformSpec.parse(i) for i in items]


def apply_pipeline(seg: Segment, pipeline: Sequence[TransformSpec], rng: np.random.Generator) -> Segment:
    for spec, child in zip(pipeline, rng.spawn(len(pipeline))):
        seg = spec(seg, child)
    return seg


def two_views(seg: Segment, pipeline: Sequence[TransformSpec], rng: np.random.Generator) -> tuple[Segment, Segment]:
    if not pipeline:
        raise ValueError("two_views needs a non-empty pipeline")
    r1, r2 = rng.spawn(2)
    return apply_pipeline(seg, pipeline, r1), apply_pipeline(seg, pipeline, r2)

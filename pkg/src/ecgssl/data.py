"""Dataset manifests, waveform files, fold splits and synthetic ECG fixtures.

On disk a dataset is a directory holding ``manifest.json`` and one ``.f32``
file per record: raw little-endian float32 samples, channel-major
(``c0 t0..tN, c1 t0..tN, ...``). The manifest is authoritative for shapes.
"""

from __future__ import annotations

import json
import math
import os
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .records import EcgRecord, LabelSpace

FORMAT_VERSION = 1
N_FOLDS = 10


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class RecordEntry:
    id: str
    path: str
    n_channels: int
    n_timesteps: int
    fs: float
    labels: tuple[int, ...]
    fold: int

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "n_channels": self.n_channels,
            "n_timesteps": self.n_timesteps,
            "fs": self.fs,
            "labels": list(self.labels),
            "fold": self.fold,
        }


@dataclass
class DatasetManifest:
    records: list[RecordEntry]
    label_space: LabelSpace
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.format_version != FORMAT_VERSION:
            raise DatasetError(f"unsupported manifest format_version {self.format_version}; expected {FORMAT_VERSION}")
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise DatasetError(f"duplicate record id {r.id!r}")
            seen.add(r.id)
            if not 1 <= r.fold <= N_FOLDS:
                raise DatasetError(f"record {r.id!r}: fold {r.fold} outside 1..{N_FOLDS}")
            if r.n_channels < 1 or r.n_timesteps < 1 or not r.fs > 0:
                raise DatasetError(f"record {r.id!r}: invalid shape or fs")
            bad = [i for i in r.labels if not 0 <= i < len(self.label_space)]
            if bad:
                raise DatasetError(f"record {r.id!r}: label indices {bad} outside label space")

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def entry(self, record_id: str) -> RecordEntry:
        for r in self.records:
            if r.id == record_id:
                return r
        raise KeyError(record_id)

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "labels": list(self.label_space.names),
            "records": [r.to_json() for r in self.records],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetManifest":
        try:
            version = obj["format_version"]
            labels = LabelSpace(tuple(obj["labels"]))
            records = [
                RecordEntry(
                    id=str(r["id"]),
                    path=str(r["path"]),
                    n_channels=int(r["n_channels"]),
                    n_timesteps=int(r["n_timesteps"]),
                    fs=float(r["fs"]),
                    labels=tuple(int(i) for i in r["labels"]),
                    fold=int(r["fold"]),
                )
                for r in obj["records"]
            ]
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, DatasetError):
                raise
            raise DatasetError(f"malformed manifest: {e!r}") from e
        return cls(records, labels, version)


class RecordStore(Mapping):
    """Read-only, lazily loading ``id -> EcgRecord`` view over a dataset directory."""

    def __init__(self, root: Path, manifest: DatasetManifest, cache_size: int = 4096):
        self.root = Path(root)
        self.manifest = manifest
        self._entries = {r.id: r for r in manifest.records}
        self._load = lru_cache(maxsize=cache_size)(self._read)

    def _read(self, record_id: str) -> EcgRecord:
        e = self._entries[record_id]
        data = np.fromfile(self.root / e.path, dtype="<f4")
        return EcgRecord(e.id, data.reshape(e.n_channels, e.n_timesteps), e.fs, frozenset(e.labels))

    def __getitem__(self, record_id: str) -> EcgRecord:
        if record_id not in self._entries:
            raise KeyError(record_id)
        return self._load(record_id)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class Dataset:
    """Manifest plus a record accessor; records may live on disk or in memory."""

    manifest: DatasetManifest
    records: Mapping[str, EcgRecord]
    meta: dict[str, dict] = field(default_factory=dict)

    @property
    def label_space(self) -> LabelSpace:
        return self.manifest.label_space

    @property
    def n_labels(self) -> int:
        return len(self.manifest.label_space)

    @property
    def n_channels(self) -> int:
        return self.manifest.records[0].n_channels

    def get(self, ids: Sequence[str]) -> list[EcgRecord]:
        return [self.records[i] for i in ids]

    def label_matrix(self, ids: Sequence[str]) -> np.ndarray:
        return np.stack([self.records[i].label_vector(self.n_labels) for i in ids])


def write_dataset(root: str | os.PathLike, dataset: Dataset) -> DatasetManifest:
    root = Path(root)
    (root / "records").mkdir(parents=True, exist_ok=True)
    entries = []
    for e in dataset.manifest.records:
        rec = dataset.records[e.id]
        rel = f"records/{e.id}.f32"
        np.ascontiguousarray(rec.samples, dtype="<f4").tofile(root / rel)
        entries.append(RecordEntry(e.id, rel, rec.n_channels, rec.n_timesteps, rec.fs, tuple(sorted(rec.labels)), e.fold))
    manifest = DatasetManifest(entries, dataset.label_space)
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest.to_json(), indent=1))
    os.replace(tmp, root / "manifest.json")
    return manifest


def load_dataset(root: str | os.PathLike) -> tuple[DatasetManifest, RecordStore]:
    root = Path(root)
    path = root / "manifest.json"
    if not path.is_file():
        raise DatasetError(f"no manifest.json in {root}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"manifest.json is not valid JSON: {e}") from e
    manifest = DatasetManifest.from_json(obj)
    for e in manifest.records:
        f = root / e.path
        if not f.is_file():
            raise DatasetError(f"record {e.id!r}: missing waveform file {e.path}")
        expected = 4 * e.n_channels * e.n_timesteps
        size = f.stat().st_size
        if size != expected:
            raise DatasetError(f"record {e.id!r}: file has {size} bytes, manifest shape needs {expected}")
    return manifest, RecordStore(root, manifest)


def open_dataset(root: str | os.PathLike) -> Dataset:
    manifest, store = load_dataset(root)
    return Dataset(manifest, store)


def split_folds(manifest: DatasetManifest, train_folds: int = 8) -> tuple[list[str], list[str], list[str]]:
    """Folds ``1..train_folds`` train, fold 9 validates, fold 10 tests."""
    if not 1 <= train_folds <= 8:
        raise DatasetError(f"train fold count must be in 1..8, got {train_folds}")
    train = [r.id for r in manifest.records if r.fold <= train_folds]
    val = [r.id for r in manifest.records if r.fold == 9]
    test = [r.id for r in manifest.records if r.fold == 10]
    for name, ids in (("train", train), ("validation", val), ("test", test)):
        if not ids:
            raise DatasetError(f"empty {name} split")
    return train, val, test


# --- synthetic ECG -----------------------------------------------------------

# (offset from R peak in s, width in s, amplitude in mV)
_WAVES = {
    "P": (-0.20, 0.025, 0.15),
    "Q": (-0.035, 0.010, -0.12),
    "R": (0.0, 0.012, 1.0),
    "S": (0.035, 0.010, -0.25),
    "T": (0.28, 0.050, 0.30),
}
MORPHS = ("wide_qrs", "fast_hr", "t_inversion", "long_pr", "st_elevation", "low_voltage")


def _lead_field(n_channels: int) -> np.ndarray:
    # fixed projection of wave sources onto leads, shared by every record
    g = np.random.default_rng(20210301)
    m = g.normal(1.0, 0.35, size=(n_channels, len(_WAVES)))
    m *= g.choice([-1.0, 1.0], size=(n_channels, 1), p=[0.25, 0.75])
    return m


def _beat_train(t: np.ndarray, rr: float, phase: float, offset: float, width: float) -> np.ndarray:
    # sum of Gaussian bumps centred at phase + offset + j * rr
    centres = phase + offset + rr * np.arange(-1, int(t[-1] / rr) + 3)
    d = t[None, :] - centres[:, None]
    return np.exp(-0.5 * (d / width) ** 2).sum(axis=0)


def synth_ecg(
    n_records: int,
    n_channels: int = 12,
    duration_s: float = 10.0,
    fs: float = 100.0,
    class_spec: Sequence[str] = ("wide_qrs", "fast_hr"),
    rng: np.random.Generator | None = None,
    amplitude: float = 1.0,
    exclusive: bool = False,
    noise_std: float = 0.02,
    hr_range: tuple[float, float] = (50.0, 120.0),
) -> Dataset:
    """ECG-like records built from periodic P/QRS/T Gaussian bumps.

    Each record draws a heart rate from ``hr_range`` (bpm), jitters a shared
    lead-field mixing matrix, and applies the morphs of its labels. With
    ``exclusive=True`` each record carries exactly one label; otherwise each
    label is present independently with probability 1/2. Folds cycle 1..10.
    """
    if n_records < 1 or n_channels < 1 or duration_s <= 0 or fs <= 0:
        raise ValueError("synth_ecg needs positive sizes")
    unknown = [c for c in class_spec if c not in MORPHS]
    if unknown or not class_spec:
        raise ValueError(f"class_spec entries must be among {MORPHS}, got {list(class_spec)}")
    rng = rng if rng is not None else np.random.default_rng(0)
    n_t = int(round(duration_s * fs))
    t = np.arange(n_t) / fs
    lead = _lead_field(n_channels)
    labels_space = LabelSpace(tuple(class_spec))
    records: dict[str, EcgRecord] = {}
    entries: list[RecordEntry] = []
    meta: dict[str, dict] = {}
    width = max(3, len(str(n_records - 1)))
    for i in range(n_records):
        rid = f"synth{i:0{width}d}"
        if exclusive:
            active = {int(rng.integers(0, len(class_spec)))}
        else:
            active = {j for j in range(len(class_spec)) if rng.random() < 0.5}
        morphs = {class_spec[j] for j in active}
        lo, hi = hr_range
        if "fast_hr" in morphs:
            lo, hi = hi, hi + (hi - lo) / 2
        hr = rng.uniform(lo, hi)
        rr = 60.0 / hr
        phase = rng.uniform(0, rr)
        mix = lead * rng.normal(1.0, 0.1, size=lead.shape)
        gain = amplitude * (0.5 if "low_voltage" in morphs else 1.0) * rng.uniform(0.8, 1.2)
        sources = []
        for name, (off, w, a) in _WAVES.items():
            if name in ("Q", "R", "S") and "wide_qrs" in morphs:
                w, off = w * 2.0, off * 1.8
            if name == "P" and "long_pr" in morphs:
                off = -0.30
            if name == "T":
                off = off * math.sqrt(rr)
                if "t_inversion" in morphs:
                    a = -a
            sources.append(a * _beat_train(t, rr, phase, off, w))
        if "st_elevation" in morphs:
            sources[-1] = sources[-1] + 0.12 * _beat_train(t, rr, phase, 0.14 * math.sqrt(rr), 0.06)
        samples = gain * (mix @ np.stack(sources))
        if noise_std > 0 and amplitude > 0:
            samples = samples + rng.normal(0.0, noise_std, size=samples.shape)
        rec = EcgRecord(rid, samples.astype(np.float32), fs, frozenset(active))
        records[rid] = rec
        entries.append(RecordEntry(rid, f"records/{rid}.f32", n_channels, n_t, fs, tuple(sorted(active)), i % N_FOLDS + 1))
        meta[rid] = {"hr_bpm": hr, "rr_s": rr}
    return Dataset(DatasetManifest(entries, labels_space), records, meta)

"""Synthetic multi-scale datasets, MSF1 feature files and batching.

Each class owns one template: a fixed random waveform of ``pattern_scale``
frames along a class-specific feature direction (directions are mutually
orthogonal by default, or one shared direction with ``shared_direction``).
A sample is Gaussian background noise with its class template
added at a uniformly random offset.  Template energy is the same for every
class, so short templates are tall and long templates are faint per frame.
"""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .config import to_kv
from .errors import ConfigurationError, ContractError, FormatError
from .tensor import Tensor

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass
class SyntheticSpec:
    num_classes: int = 3
    T_range: tuple[int, ...] = (150, 243)
    input_dim: int = 8
    pattern_scales: tuple[int, ...] = (1, 9, 27)
    noise_std: float = 0.5
    samples_per_class: int = 125
    template_norm: float = 2.5
    amplitude_rule: str = "energy"
    shared_direction: bool = False
    random_polarity: bool = True

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if len(self.T_range) != 2 or not 1 <= self.T_range[0] <= self.T_range[1]:
            raise ConfigurationError(f"T_range must be (min, max) with 1 <= min <= max, got {self.T_range}")
        if not self.pattern_scales or min(self.pattern_scales) < 1:
            raise ConfigurationError("pattern_scales must be positive")
        if max(self.pattern_scales) > self.T_range[0]:
            raise ConfigurationError(
                f"pattern of {max(self.pattern_scales)} frames does not fit in T_min={self.T_range[0]}")
        if self.input_dim < self.num_classes:
            raise ConfigurationError("input_dim must be >= num_classes for orthogonal templates")
        if self.amplitude_rule not in ("energy", "area"):
            raise ConfigurationError(f"amplitude_rule must be 'energy' or 'area', got {self.amplitude_rule!r}")
        if self.noise_std < 0 or self.samples_per_class < 1:
            raise ConfigurationError("noise_std must be >= 0 and samples_per_class >= 1")

    def scale_of(self, label: int) -> int:
        return self.pattern_scales[label % len(self.pattern_scales)]


@dataclass
class Sample:
    features: np.ndarray
    valid_len: int
    label: int
    sample_id: str


@dataclass
class Dataset:
    splits: dict[str, list[Sample]]
    num_classes: int
    input_dim: int
    templates: list[np.ndarray] = field(default_factory=list)

    def __getitem__(self, split: str) -> list[Sample]:
        return self.splits[split]

    def padded(self, p: int, L: int) -> "Dataset":
        """Copy with every sequence re-padded to a multiple of p^L."""
        splits = {k: [Sample(*pad_to_multiple(s.features[:s.valid_len], p, L), s.label, s.sample_id) for s in v]
                  for k, v in self.splits.items()}
        return Dataset(splits, self.num_classes, self.input_dim, self.templates)


def padded_length(T: int, p: int, L: int) -> int:
    m = p ** L
    return max(1, -(-T // m)) * m


def pad_to_multiple(features, p: int, L: int) -> tuple[np.ndarray, int]:
    """Append zero rows up to the least multiple of p^L; returns (padded, valid_len)."""
    arr = features.data if isinstance(features, Tensor) else np.asarray(features)
    T = arr.shape[0]
    if T < 1:
        raise ContractError("cannot pad an empty sequence")
    Tp = padded_length(T, p, L)
    if Tp == T:
        return arr.copy(), T
    out = np.zeros((Tp, arr.shape[1]), dtype=arr.dtype)
    out[:T] = arr
    return out, T


def make_templates(spec: SyntheticSpec, rng: np.random.Generator) -> list[np.ndarray]:
    d, C = spec.input_dim, spec.num_classes
    basis, _ = np.linalg.qr(rng.standard_normal((d, C)))
    templates = []
    for c in range(C):
        s = spec.scale_of(c)
        envelope = 1.0 + 0.3 * rng.uniform(-1.0, 1.0, size=s)
        size = np.linalg.norm(envelope) if spec.amplitude_rule == "energy" else envelope.sum()
        direction = basis[:, 0] if spec.shared_direction else basis[:, c]
        templates.append(np.outer(envelope * (spec.template_norm / size), direction))
    return templates


def _make_sample(spec, template, rng) -> tuple[np.ndarray, int]:
    T = int(rng.integers(spec.T_range[0], spec.T_range[1] + 1))
    x = rng.normal(0.0, spec.noise_std, size=(T, spec.input_dim)) if spec.noise_std > 0 \
        else np.zeros((T, spec.input_dim))
    s = template.shape[0]
    off = int(rng.integers(0, T - s + 1))
    sign = rng.choice((-1.0, 1.0)) if spec.random_polarity else 1.0
    x[off:off + s] += sign * template
    return x.astype(np.float32), off


def generate_raw(spec: SyntheticSpec, seed: int) -> tuple[dict[str, list[tuple[str, np.ndarray, int]]], list]:
    """Unpadded ``(id, features, label)`` triples per split, plus the templates."""
    spec.validate()
    rng = np.random.default_rng(seed)
    templates = make_templates(spec, rng)
    n = spec.samples_per_class
    n_train = int(round(n * SPLIT_FRACTIONS[0]))
    n_val = int(round(n * SPLIT_FRACTIONS[1]))
    cuts = {"train": (0, n_train), "val": (n_train, n_train + n_val), "test": (n_train + n_val, n)}
    raw = {s: [] for s in SPLITS}
    for c in range(spec.num_classes):
        feats = [_make_sample(spec, templates[c], rng)[0] for _ in range(n)]
        for split, (a, b) in cuts.items():
            raw[split].extend((None, f, c) for f in feats[a:b])
    for split in SPLITS:
        order = rng.permutation(len(raw[split]))
        raw[split] = [(f"{split}-{i:05d}", raw[split][j][1], raw[split][j][2]) for i, j in enumerate(order)]
    return raw, templates


def generate_synthetic_dataset(spec: SyntheticSpec, seed: int, p: int, L: int) -> Dataset:
    """Deterministic 8:1:1 split, every sample zero-padded to a multiple of p^L."""
    raw, templates = generate_raw(spec, seed)
    splits = {}
    for split, items in raw.items():
        samples = []
        for sid, feats, label in items:
            padded, n = pad_to_multiple(feats, p, L)
            samples.append(Sample(padded, n, label, sid))
        splits[split] = samples
    return Dataset(splits, spec.num_classes, spec.input_dim, templates)


def matched_filter_predict(features: np.ndarray, valid_len: int, templates: Sequence[np.ndarray]) -> int:
    """Class whose template has the largest |normalised correlation| at any offset."""
    x = features[:valid_len].astype(np.float64)
    best, best_c = -np.inf, 0
    for c, t in enumerate(templates):
        s = t.shape[0]
        if s > x.shape[0]:
            continue
        proj = x @ t.T  # (T, s): frame i against template row j
        # correlation at offset o is sum_j proj[o + j, j]
        corr = sum(proj[j:x.shape[0] - s + 1 + j, j] for j in range(s))
        score = np.max(np.abs(corr)) / np.linalg.norm(t)
        if score > best:
            best, best_c = score, c
    return best_c


# ---------------------------------------------------------------- MSF1 files
#
#   4s  magic b"MSF1"
#   u32 T, u32 F
#   T*F float32 little-endian, row-major

MSF_MAGIC = b"MSF1"
_MAX_ELEMS = 1 << 31


def feature_bytes(tensor) -> bytes:
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    if arr.ndim != 2:
        raise ContractError(f"feature matrices are 2-D, got shape {arr.shape}")
    T, F = arr.shape
    return MSF_MAGIC + struct.pack("<II", T, F) + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def parse_feature_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MSF_MAGIC:
        raise FormatError("bad MSF1 magic", 0)
    if len(buf) < 12:
        raise FormatError("truncated MSF1 header", len(buf))
    T, F = struct.unpack("<II", buf[4:12])
    if T < 1 or F < 1 or T * F >= _MAX_ELEMS:
        raise FormatError(f"dimension overflow or empty tensor: T={T}, F={F}", 4)
    need = 12 + 4 * T * F
    if len(buf) < need:
        raise FormatError(f"truncated payload: expected {T * F} floats, found {(len(buf) - 12) // 4}", len(buf))
    if len(buf) > need:
        raise FormatError("trailing bytes after payload", need)
    return np.frombuffer(buf, dtype="<f4", count=T * F, offset=12).reshape(T, F).astype(np.float32)


def write_feature_file(path, tensor) -> None:
    with open(path, "wb") as fh:
        fh.write(feature_bytes(tensor))


def read_feature_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_feature_bytes(fh.read())


# ---------------------------------------------------------------- dataset directories

def write_dataset_dir(root, raw: dict, spec: Optional[SyntheticSpec] = None, seed: Optional[int] = None) -> None:
    """Write ``{train,val,test}/manifest.csv`` plus one MSF1 file per sample."""
    root = Path(root)
    for split in SPLITS:
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "label"])
            for sid, feats, label in raw[split]:
                name = f"{sid}.msf"
                write_feature_file(d / name, feats)
                w.writerow([name, label])
    if spec is not None:
        text = to_kv(spec) + (f"seed={seed}\n" if seed is not None else "")
        (root / "dataset.cfg").write_text(text, encoding="utf-8")


def read_manifest(path) -> list[tuple[str, int]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["path", "label"]:
        raise FormatError(f"{path}: manifest must start with a 'path,label' header", 0)
    out = []
    for i, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != 2:
            raise FormatError(f"{path}: line {i} needs two columns", 0)
        out.append((row[0], int(row[1])))
    return out


def load_dataset_dir(root, p: int, L: int, splits: Sequence[str] = SPLITS,
                     num_classes: Optional[int] = None) -> Dataset:
    """Read a dataset directory, padding every sequence to a multiple of p^L."""
    root = Path(root)
    out = {}
    dims, labels = set(), set()
    for split in splits:
        man = root / split / "manifest.csv"
        if not man.exists():
            raise FileNotFoundError(f"missing manifest {man}")
        samples = []
        for rel, label in read_manifest(man):
            feats = read_feature_file(root / split / rel)
            dims.add(feats.shape[1])
            labels.add(label)
            padded, n = pad_to_multiple(feats, p, L)
            samples.append(Sample(padded, n, label, os.path.splitext(os.path.basename(rel))[0]))
        out[split] = samples
    if len(dims) > 1:
        raise FormatError(f"feature files disagree on dimension: {sorted(dims)}", 4)
    C = num_classes if num_classes is not None else (max(labels) + 1 if labels else 0)
    return Dataset(out, C, dims.pop() if dims else 0)


def batch_iter(samples: Sequence[Sample], batch_size: int,
               shuffle_seed: Optional[int] = None) -> Iterator[list[Sample]]:
    """Batches in an order fixed by ``shuffle_seed`` and the sample ids.

    Samples are first sorted by id, so the order does not depend on how the
    input sequence (e.g. a manifest) was arranged.  The final partial batch
    is kept.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    if not samples:
        raise ContractError("cannot iterate over an empty dataset")
    ordered = sorted(samples, key=lambda s: s.sample_id)
    if shuffle_seed is not None:
        perm = np.random.default_rng(shuffle_seed).permutation(len(ordered))
        ordered = [ordered[i] for i in perm]
    return (ordered[i:i + batch_size] for i in range(0, len(ordered), batch_size))

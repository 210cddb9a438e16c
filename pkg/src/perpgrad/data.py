"""Synthetic datasets, CSV/IDX ingestion and stratified label subsampling."""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError
from .rng import stream

SYNTHETIC = ("two_moons", "gaussian_blobs")
FILE_FORMATS = ("csv", "idx")


@dataclass
class DatasetSpec:
    kind: str = "two_moons"
    n_samples: int = 1000  # size of the (fully labeled) train pool for synthetic data
    n_val: int | None = None  # defaults to n_samples // 8 (80/10/10 overall)
    n_test: int | None = None
    noise: float = 0.1
    n_classes: int = 3
    n_features: int = 2
    center_spread: float = 3.0
    grid: list[int] | None = None
    path: str | None = None
    labels_path: str | None = None
    data_seed: int = 0  # fixes the pool; the run seed picks the labeled subset

    def __post_init__(self):
        if self.kind not in SYNTHETIC + FILE_FORMATS:
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}")
        if self.kind in FILE_FORMATS and not self.path:
            raise ConfigurationError(f"{self.kind} dataset needs a path")
        if self.kind in SYNTHETIC and self.n_samples < 2:
            raise ConfigurationError("n_samples must be >= 2")
        if self.grid is not None:
            self.grid = [int(g) for g in self.grid]


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass
class Splits:
    train: Split
    val: Split
    test: Split
    n_classes: int
    grid: tuple[int, ...] | None = None
    value_range: tuple[float, float] = (0.0, 1.0)
    pool_train_size: int = 0
    class_counts: dict[int, int] = field(default_factory=dict)


def two_moons(n: int, noise: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n0 = n - n // 2
    n1 = n // 2
    t0 = rng.uniform(0.0, math.pi, n0)
    t1 = rng.uniform(0.0, math.pi, n1)
    outer = np.column_stack([np.cos(t0), np.sin(t0)])
    inner = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([outer, inner]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    return X, y


def gaussian_blobs(n: int, n_classes: int, n_features: int, noise: float, centers: np.ndarray,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    y = np.arange(n, dtype=np.int64) % n_classes
    X = centers[y] + noise * rng.standard_normal((n, n_features))
    return X, y


def stratified_subsample(y: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices holding round(fraction * class size) members of each class."""
    if not 0 < fraction <= 1:
        raise ConfigurationError("label_fraction must lie in (0, 1]")
    picked = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        k = int(math.floor(fraction * idx.size + 0.5))
        picked.append(rng.permutation(idx)[:k])
    return np.sort(np.concatenate(picked))


def stratified_split(y: np.ndarray, fractions, rng: np.random.Generator) -> list[np.ndarray]:
    """Split indices per class by ``fractions`` (summing to 1); the last part takes the remainder."""
    parts: list[list[np.ndarray]] = [[] for _ in fractions]
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        start = 0
        for i, f in enumerate(fractions):
            stop = idx.size if i == len(fractions) - 1 else start + int(math.floor(f * idx.size + 0.5))
            parts[i].append(idx[start:stop])
            start = stop
    return [np.sort(np.concatenate(p)) for p in parts]


def read_csv_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: file not found")
    rows, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file")
        width = len(header)
        if width < 2:
            raise IngestionError(f"{path}:1: need at least one feature column and a label column")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise IngestionError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                feats = [float(v) for v in row[:-1]]
                lab = int(row[-1])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from None
            if lab < 0:
                raise IngestionError(f"{path}:{lineno}: negative label {lab}")
            rows.append(feats)
            labels.append(lab)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.int64)


_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    """Big-endian IDX array (MNIST file format)."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: file not found")
    raw = path.read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise IngestionError(f"{path}@0: bad IDX magic {raw[:4]!r}")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise IngestionError(f"{path}@2: unknown IDX type code 0x{code:02x}")
    if len(raw) < 4 + 4 * ndim:
        raise IngestionError(f"{path}@4: truncated dimension header")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    dtype = np.dtype(_IDX_TYPES[code])
    off = 4 + 4 * ndim
    need = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - off != need:
        raise IngestionError(f"{path}@{off}: expected {need} data bytes, found {len(raw) - off}")
    return np.frombuffer(raw, dtype, offset=off).reshape(dims)


def write_idx(path, arr: np.ndarray) -> None:
    codes = {v: k for k, v in _IDX_TYPES.items()}
    arr = np.asarray(arr)
    key = arr.dtype.newbyteorder(">").str
    key = ">u1" if arr.dtype == np.uint8 else key
    if key not in codes:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    header = bytes([0, 0, codes[key], arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(key).tobytes())


def read_idx_dataset(images_path, labels_path) -> tuple[np.ndarray, np.ndarray, tuple[int, ...] | None]:
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64).ravel()
    if images.shape[0] != labels.size:
        raise IngestionError(f"{labels_path}: {labels.size} labels for {images.shape[0]} images")
    grid = tuple(int(d) for d in images.shape[1:]) if images.ndim > 2 else None
    X = images.reshape(images.shape[0], -1).astype(np.float64)
    if images.dtype == np.uint8:
        X /= 255.0
    return X, labels, grid


def _synthetic_pool(spec: DatasetSpec, n: int, name: str):
    rng = stream(spec.data_seed, f"dataset/{spec.kind}/{name}")
    if spec.kind == "two_moons":
        return two_moons(n, spec.noise, rng)
    centers = stream(spec.data_seed, "dataset/blob-centers").normal(
        0.0, spec.center_spread, (spec.n_classes, spec.n_features))
    return gaussian_blobs(n, spec.n_classes, spec.n_features, spec.noise, centers, rng)


def make_dataset(spec: DatasetSpec, seed: int, label_fraction: float = 1.0) -> Splits:
    """Train/val/test splits; the run ``seed`` only picks the labeled train subset."""
    if not 0 < label_fraction <= 1:
        raise ConfigurationError("label_fraction must lie in (0, 1]")
    grid = tuple(spec.grid) if spec.grid else None
    if spec.kind in SYNTHETIC:
        n_val = spec.n_val if spec.n_val is not None else max(1, spec.n_samples // 8)
        n_test = spec.n_test if spec.n_test is not None else max(1, spec.n_samples // 8)
        Xtr, ytr = _synthetic_pool(spec, spec.n_samples, "train")
        Xva, yva = _synthetic_pool(spec, n_val, "val")
        Xte, yte = _synthetic_pool(spec, n_test, "test")
        n_classes = 2 if spec.kind == "two_moons" else spec.n_classes
    else:
        if spec.kind == "csv":
            X, y = read_csv_dataset(spec.path)
        else:
            if not spec.labels_path:
                raise ConfigurationError("idx dataset needs labels_path")
            X, y, file_grid = read_idx_dataset(spec.path, spec.labels_path)
            grid = grid or file_grid
        tr, va, te = stratified_split(y, (0.8, 0.1, 0.1), stream(spec.data_seed, "dataset/file-split"))
        Xtr, ytr, Xva, yva, Xte, yte = X[tr], y[tr], X[va], y[va], X[te], y[te]
        n_classes = int(y.max()) + 1
    if grid is not None and int(np.prod(grid)) != Xtr.shape[1]:
        raise ConfigurationError(f"grid {grid} does not match {Xtr.shape[1]} features")
    keep = stratified_subsample(ytr, label_fraction, stream(seed, "label-subsample"))
    counts = {int(c): int((ytr[keep] == c).sum()) for c in np.unique(ytr)}
    return Splits(
        train=Split(Xtr[keep], ytr[keep]),
        val=Split(Xva, yva),
        test=Split(Xte, yte),
        n_classes=n_classes,
        grid=grid,
        value_range=(float(Xtr.min()), float(Xtr.max())),
        pool_train_size=len(ytr),
        class_counts=counts,
    )

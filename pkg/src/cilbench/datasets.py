"""Dataset synthesis and on-disk formats.

A dataset is a labeled train/test pair of dense float vectors. The desk-scale
synthetic generator places one unit-sphere centroid per class and samples
isotropic Gaussian clouds around them; ``spread`` controls class overlap.

On disk, a dataset is a directory holding ``train.cild``/``test.cild``
(binary, see below) or ``train.csv``/``test.csv`` (header ``label,f0,f1,...``).

CILD binary layout (little-endian):

    magic   4 bytes  b"CILD"
    version u16      1
    n       u32      sample count
    dim     u32      feature dimension
    classes u32      label-space size
    features n*dim   float32, row-major
    labels   n       u16
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .prng import SplitMix64

_MAGIC = b"CILD"
_HEADER = struct.Struct("<4sHIII")
_VERSION = 1


@dataclass
class Dataset:
    feature_dim: int
    n_classes: int
    train_x: list[tuple[float, ...]]
    train_y: list[int]
    test_x: list[tuple[float, ...]]
    test_y: list[int]
    _train_by_class: dict[int, list[int]] = field(default_factory=dict, repr=False)
    _test_by_class: dict[int, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name, xs, ys in (("train", self.train_x, self.train_y), ("test", self.test_x, self.test_y)):
            if len(xs) != len(ys):
                raise ValueError(f"{name}: {len(xs)} instances vs {len(ys)} labels")
            for x in xs:
                if len(x) != self.feature_dim:
                    raise ValueError(f"{name}: row width {len(x)} != feature_dim {self.feature_dim}")
            for y in ys:
                if not 0 <= y < self.n_classes:
                    raise ValueError(f"{name}: label {y} out of range [0, {self.n_classes})")
        self._train_by_class = _group(self.train_y)
        self._test_by_class = _group(self.test_y)

    def train_indices_of(self, label: int) -> list[int]:
        return self._train_by_class.get(label, [])

    def test_indices_of(self, label: int) -> list[int]:
        return self._test_by_class.get(label, [])

    @property
    def default_bytes_per_exemplar(self) -> int:
        """One byte per stored value, mirroring 8-bit-per-channel image storage."""
        return self.feature_dim


def _group(labels: list[int]) -> dict[int, list[int]]:
    by: dict[int, list[int]] = {}
    for i, y in enumerate(labels):
        by.setdefault(y, []).append(i)
    return by


def synth_dataset(n_classes: int, n_train_per_class: int, n_test_per_class: int,
                  dim: int, spread: float, seed: int) -> Dataset:
    """Gaussian blobs around per-class unit-sphere centroids.

    Draw order (fixed for determinism): per class, first the centroid, then
    train samples, then test samples, each coordinate-major.
    """
    if min(n_classes, n_train_per_class, n_test_per_class, dim) < 1 or spread <= 0.0:
        raise ValueError("all sizes must be positive and spread > 0")
    rng = SplitMix64(seed)
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(n_classes):
        center = _unit_vector(rng, dim)
        for _ in range(n_train_per_class):
            train_x.append(tuple(center[j] + spread * rng.next_gaussian() for j in range(dim)))
            train_y.append(c)
        for _ in range(n_test_per_class):
            test_x.append(tuple(center[j] + spread * rng.next_gaussian() for j in range(dim)))
            test_y.append(c)
    return Dataset(dim, n_classes, train_x, train_y, test_x, test_y)


def _unit_vector(rng: SplitMix64, dim: int) -> list[float]:
    while True:
        v = [rng.next_gaussian() for _ in range(dim)]
        norm = sum(x * x for x in v) ** 0.5
        if norm > 0.0:
            return [x / norm for x in v]


# ---------------------------------------------------------------------------
# CILD binary
# ---------------------------------------------------------------------------


class DatasetFormatError(ValueError):
    """Malformed dataset file; message names the byte offset."""


def write_cild(path: Path | str, features: list[tuple[float, ...]], labels: list[int],
               n_classes: int) -> None:
    path = Path(path)
    n = len(features)
    dim = len(features[0]) if n else 0
    if n_classes > 0xFFFF:
        raise ValueError("CILD labels are u16; at most 65535 classes")
    flat = [v for row in features for v in row]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, n, dim, n_classes))
        fh.write(struct.pack(f"<{len(flat)}f", *flat))
        fh.write(struct.pack(f"<{n}H", *labels))


def read_cild(path: Path | str) -> tuple[list[tuple[float, ...]], list[int], int, int]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header at offset {len(blob)}")
    magic, version, n, dim, n_classes = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise DatasetFormatError(f"{path}: bad magic at offset 0: {magic!r}")
    if version != _VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version} at offset 4")
    feat_bytes = 4 * n * dim
    want = _HEADER.size + feat_bytes + 2 * n
    if len(blob) != want:
        raise DatasetFormatError(
            f"{path}: expected {want} bytes, got {len(blob)} (payload starts at offset {_HEADER.size})")
    flat = struct.unpack_from(f"<{n * dim}f", blob, _HEADER.size)
    labels = list(struct.unpack_from(f"<{n}H", blob, _HEADER.size + feat_bytes))
    for i, y in enumerate(labels):
        if y >= n_classes:
            off = _HEADER.size + feat_bytes + 2 * i
            raise DatasetFormatError(f"{path}: label {y} >= n_classes {n_classes} at offset {off}")
    features = [tuple(flat[i * dim:(i + 1) * dim]) for i in range(n)]
    return features, labels, dim, n_classes


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_csv(path: Path | str, features: list[tuple[float, ...]], labels: list[int]) -> None:
    path = Path(path)
    dim = len(features[0]) if features else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{j}" for j in range(dim)])
        for row, y in zip(features, labels):
            writer.writerow([y] + [repr(v) for v in row])


def read_csv(path: Path | str) -> tuple[list[tuple[float, ...]], list[int], int, int]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label" or any(h != f"f{j}" for j, h in enumerate(header[1:])):
            raise DatasetFormatError(f"{path}: expected header 'label,f0,f1,...', got {header}")
        dim = len(header) - 1
        features, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise DatasetFormatError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(row)}")
            labels.append(int(row[0]))
            features.append(tuple(float(v) for v in row[1:]))
    if any(y < 0 for y in labels):
        raise DatasetFormatError(f"{path}: negative label")
    n_classes = max(labels) + 1 if labels else 0
    return features, labels, dim, n_classes


# ---------------------------------------------------------------------------
# directory-level load/save
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, directory: Path | str, fmt: str = "cild") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if fmt == "cild":
        write_cild(directory / "train.cild", dataset.train_x, dataset.train_y, dataset.n_classes)
        write_cild(directory / "test.cild", dataset.test_x, dataset.test_y, dataset.n_classes)
    elif fmt == "csv":
        write_csv(directory / "train.csv", dataset.train_x, dataset.train_y)
        write_csv(directory / "test.csv", dataset.test_x, dataset.test_y)
    else:
        raise ValueError("fmt must be 'cild' or 'csv'")


def load_dataset(directory: Path | str) -> Dataset:
    """Load a train/test pair from a dataset directory (CILD preferred)."""
    directory = Path(directory)
    if (directory / "train.cild").exists():
        tr = read_cild(directory / "train.cild")
        te = read_cild(directory / "test.cild")
    elif (directory / "train.csv").exists():
        tr = read_csv(directory / "train.csv")
        te = read_csv(directory / "test.csv")
    else:
        raise FileNotFoundError(f"{directory}: no train.cild or train.csv found")
    tr_x, tr_y, tr_dim, tr_classes = tr
    te_x, te_y, te_dim, te_classes = te
    if tr_dim != te_dim:
        raise DatasetFormatError(f"{directory}: train dim {tr_dim} != test dim {te_dim}")
    n_classes = max(tr_classes, te_classes)
    return Dataset(tr_dim, n_classes, tr_x, tr_y, te_x, te_y)

"""Synthetic data generation, non-iid device partitioning, and file ingestion.

All generators are pure functions of their seed: the same arguments produce
bitwise-identical outputs.
"""

from __future__ import annotations

import csv as _csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError
from .models import Batch

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class DeviceDataset:
    device_id: int
    examples: Batch
    class_profile: frozenset


@dataclass(frozen=True)
class AuxiliarySet:
    """Flipped-label targets: `examples.y` carries the flipped labels."""

    examples: Batch
    true_labels: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.true_labels, dtype=np.int64)
        if t.shape[0] != len(self.examples):
            raise ParameterError("true_labels length mismatch")
        if t.size and np.any(t == self.examples.y):
            raise ParameterError("a flipped label equals its true label")
        object.__setattr__(self, "true_labels", t)

    @property
    def size(self) -> int:
        return len(self.examples)


@dataclass(frozen=True)
class PartitionSpec:
    mode: str  # "iid" | "single_class"
    n_devices: int
    points_per_device: int
    seed: int

    def __post_init__(self):
        if self.mode not in ("iid", "single_class"):
            raise ParameterError(f"unknown partition mode {self.mode!r}")
        if self.n_devices < 1 or self.points_per_device < 1:
            raise ParameterError("n_devices and points_per_device must be positive")


def make_blobs(n: int, m: int, n_classes: int, separation: float, seed: int) -> Batch:
    """Gaussian class clusters rescaled per-feature into [0,1]^m.

    Cluster centers are drawn at random and rescaled so the minimum pairwise
    center distance equals `separation` (before the [0,1] normalization, which
    is per-coordinate affine and therefore preserves linear separability).
    Labels are balanced within +-1.
    """
    if n < n_classes:
        raise ParameterError("need at least one point per class")
    if separation <= 0:
        raise ParameterError("separation must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_classes, m))
    if n_classes > 1:
        dists = [
            np.linalg.norm(centers[i] - centers[j])
            for i in range(n_classes)
            for j in range(i + 1, n_classes)
        ]
        centers *= separation / max(min(dists), 1e-12)
    counts = [n // n_classes + (1 if c < n % n_classes else 0) for c in range(n_classes)]
    y = np.concatenate([np.full(cnt, c, dtype=np.int64) for c, cnt in enumerate(counts)])
    x = centers[y] + rng.normal(size=(n, m))
    perm = rng.permutation(n)
    x, y = x[perm], y[perm]
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    x = (x - lo) / span
    return Batch(x, y, n_classes)


def split_train_test(data: Batch, test_fraction: float, seed: int) -> tuple[Batch, Batch]:
    """Seeded disjoint train/test split."""
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError("test_fraction must be in (0, 1)")
    n = len(data)
    n_test = max(1, int(round(test_fraction * n)))
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(perm[n_test:]), data.subset(perm[:n_test])


def partition(data: Batch, spec: PartitionSpec) -> list[DeviceDataset]:
    """Split `data` into disjoint per-device datasets.

    iid: a seeded uniform split. single_class: device i receives
    points_per_device samples of class (i mod C), classes assigned round-robin.
    No example appears on two devices.
    """
    rng = np.random.default_rng(spec.seed)
    total = spec.n_devices * spec.points_per_device
    if total > len(data):
        raise ParameterError(
            f"partition needs {total} points but the dataset has {len(data)}"
        )
    devices = []
    if spec.mode == "iid":
        perm = rng.permutation(len(data))
        for dev in range(spec.n_devices):
            idx = perm[dev * spec.points_per_device:(dev + 1) * spec.points_per_device]
            idx = np.sort(idx)
            examples = data.subset(idx)
            devices.append(DeviceDataset(dev, examples, frozenset(np.unique(examples.y))))
        return devices
    # single_class
    pools = {}
    for c in range(data.n_classes):
        pool = np.flatnonzero(data.y == c)
        pools[c] = list(rng.permutation(pool))
    for dev in range(spec.n_devices):
        c = dev % data.n_classes
        if len(pools[c]) < spec.points_per_device:
            raise ParameterError(
                f"class {c} has too few points for device {dev} "
                f"(needs {spec.points_per_device}, has {len(pools[c])})"
            )
        idx = np.sort(np.array([pools[c].pop() for _ in range(spec.points_per_device)]))
        devices.append(DeviceDataset(dev, data.subset(idx), frozenset({c})))
    return devices


def build_auxiliary(data: Batch, s: int, seed: int) -> AuxiliarySet:
    """Sample s distinct points and flip each label to a different class.

    Points are drawn as evenly across true classes as the data allows, and the
    flipped labels are assigned from a balanced pool (each class appears
    floor(s/C) or ceil(s/C) times) with conflict fixing so that no flipped
    label equals the true one.
    """
    if s > len(data):
        raise ParameterError(f"s={s} exceeds dataset size {len(data)}")
    C = data.n_classes
    if s == 0:
        empty = Batch(np.zeros((0, data.n_features)), np.zeros(0, dtype=np.int64), C)
        return AuxiliarySet(empty, np.zeros(0, dtype=np.int64))
    if C < 2:
        raise ParameterError("label flipping needs at least two classes")
    rng = np.random.default_rng(seed)
    # Even per-class quotas, greedily topped up from whatever is available.
    by_class = {c: list(rng.permutation(np.flatnonzero(data.y == c))) for c in range(C)}
    quota = [s // C + (1 if c < s % C else 0) for c in range(C)]
    chosen = []
    for c in range(C):
        take = min(quota[c], len(by_class[c]))
        chosen.extend(by_class[c][:take])
        del by_class[c][:take]
    shortfall = s - len(chosen)
    leftovers = [i for c in range(C) for i in by_class[c]]
    if shortfall:
        chosen.extend(rng.permutation(np.array(leftovers, dtype=np.int64))[:shortfall])
    chosen = np.array(sorted(int(i) for i in chosen), dtype=np.int64)
    true = data.y[chosen]
    # Balanced flipped-label pool, then swap away flip == true conflicts.
    flips = np.array([c for c in range(C) for _ in range(s // C + (1 if c < s % C else 0))],
                     dtype=np.int64)
    flips = flips[rng.permutation(s)]
    for i in range(s):
        if flips[i] != true[i]:
            continue
        for j in range(s):
            if flips[j] != true[i] and flips[i] != true[j]:
                flips[i], flips[j] = flips[j], flips[i]
                break
        else:
            # No balanced swap exists; reassign off-balance as a last resort.
            flips[i] = (true[i] + 1) % C
    examples = Batch(data.x[chosen], flips, C)
    return AuxiliarySet(examples, true)


def _read_exact(f, count: int, path: str):
    buf = f.read(count)
    if len(buf) != count:
        raise FormatError(f"{path}: truncated at byte offset {f.tell() - len(buf)}")
    return buf


def load_idx(images_path: str, labels_path: str) -> Batch:
    """Load an IDX image/label file pair (big-endian, magic 2051/2049).

    Pixels are scaled into [0,1] and flattened; labels pair positionally.
    """
    with open(images_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"{images_path}: bad magic 0x{magic:08x} at byte offset 0 "
                f"(expected 0x{IDX_IMAGES_MAGIC:08x})"
            )
        raw = _read_exact(f, n * rows * cols, images_path)
        x = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols) / 255.0
    with open(labels_path, "rb") as f:
        magic, n_labels = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"{labels_path}: bad magic 0x{magic:08x} at byte offset 0 "
                f"(expected 0x{IDX_LABELS_MAGIC:08x})"
            )
        y = np.frombuffer(_read_exact(f, n_labels, labels_path), dtype=np.uint8)
    if n != n_labels:
        raise FormatError(f"image count {n} != label count {n_labels}")
    return Batch(x, y.astype(np.int64), int(y.max()) + 1 if n else 1)


def load_csv(path: str) -> Batch:
    """Load a dataset CSV with header feature_0,...,feature_{m-1},label."""
    with open(path, newline="") as f:
        reader = _csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        m = len(header) - 1
        expected = [f"feature_{j}" for j in range(m)] + ["label"]
        if header != expected:
            raise FormatError(f"{path}: bad header {header!r}")
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != m + 1:
                raise FormatError(f"{path}: line {lineno}: expected {m + 1} fields")
            try:
                xs.append([float(v) for v in row[:m]])
                ys.append(int(row[m]))
            except ValueError as e:
                raise FormatError(f"{path}: line {lineno}: {e}") from None
    x = np.array(xs, dtype=np.float64).reshape(len(xs), m)
    y = np.array(ys, dtype=np.int64)
    return Batch(x, y, int(y.max()) + 1 if len(ys) else 1)

"""Synthetic non-IID classification data, IDX ingestion and client partitioning."""

from __future__ import annotations

import csv
import gzip
import io
import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pfedla.nn_engine import Batch

TRAIN_FRACTION = 0.7
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class PartitionError(ValueError):
    def __init__(self, message: str, cls: int | None = None):
        self.cls = cls
        super().__init__(message)


class IdxParseError(ValueError):
    """Malformed IDX file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int, path: str | None = None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")


@dataclass
class SamplePool:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(f"inputs {self.inputs.shape} / labels {self.labels.shape} mismatch")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx: np.ndarray) -> "SamplePool":
        idx = np.asarray(idx, dtype=np.int64)
        return SamplePool(self.inputs[idx], self.labels[idx], self.num_classes)

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.labels)

    def equal(self, other: "SamplePool") -> bool:
        return (self.num_classes == other.num_classes
                and np.array_equal(self.inputs, other.inputs)
                and np.array_equal(self.labels, other.labels))

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"feature_{i}" for i in range(self.input_dim)] + ["label"])
            for x, y in zip(self.inputs, self.labels):
                writer.writerow([repr(float(v)) for v in x] + [int(y)])

    @classmethod
    def from_csv(cls, path: str | os.PathLike, num_classes: int | None = None) -> "SamplePool":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[-1] != "label" or any(h != f"feature_{i}" for i, h in enumerate(header[:-1])):
                raise ValueError(f"{path}: unexpected CSV header {header[:3]}...")
            rows = [r for r in reader if r]
        inputs = np.array([[float(v) for v in r[:-1]] for r in rows]).reshape(len(rows), len(header) - 1)
        labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if len(labels) else 0
        return cls(inputs, labels, num_classes)


@dataclass
class ClientDataset:
    client_id: int
    train: SamplePool
    test: SamplePool
    class_histogram: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.class_histogram is None:
            self.class_histogram = self.train.histogram() + self.test.histogram()

    @property
    def num_train(self) -> int:
        return len(self.train)


@dataclass
class SynthSpec:
    num_classes: int
    input_dim: int
    samples_per_class: int
    cluster_spread: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.num_classes, self.input_dim, self.samples_per_class) < 1 or self.cluster_spread <= 0:
            raise ValueError("synthetic data parameters must be positive")


@dataclass
class PartitionSpec:
    scheme: str
    num_clients: int
    classes_per_client: int = 4
    dominant_classes: int = 2
    skew_ratio: float = 4.0
    samples_per_class: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("noniid1", "noniid2"):
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.skew_ratio < 1:
            raise ValueError("skew_ratio must be >= 1")


def synth_generate(spec: SynthSpec) -> SamplePool:
    """Gaussian clusters, one per class, around standard-normal random centers.

    Samples are ordered by class.
    """
    rng = np.random.default_rng(spec.seed)
    centers = rng.standard_normal((spec.num_classes, spec.input_dim))
    noise = rng.standard_normal((spec.num_classes, spec.samples_per_class, spec.input_dim))
    inputs = (centers[:, None, :] + spec.cluster_spread * noise).reshape(-1, spec.input_dim)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    return SamplePool(inputs, labels, spec.num_classes)


def synth_centers(spec: SynthSpec) -> np.ndarray:
    return np.random.default_rng(spec.seed).standard_normal((spec.num_classes, spec.input_dim))


def split_train_test(samples: SamplePool, seed: int | np.random.Generator = 0
                     ) -> tuple[SamplePool, SamplePool]:
    """Stratified 70/30 split; each present class keeps at least one sample per side."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(samples.num_classes):
        idx = np.flatnonzero(samples.labels == c)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise PartitionError(f"class {c} has {idx.size} sample(s); at least 2 needed to split", c)
        idx = rng.permutation(idx)
        n_train = int(np.floor(TRAIN_FRACTION * idx.size + 0.5))
        n_train = min(max(n_train, 1), idx.size - 1)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train = np.sort(np.concatenate(train_idx)) if train_idx else np.array([], dtype=np.int64)
    test = np.sort(np.concatenate(test_idx)) if test_idx else np.array([], dtype=np.int64)
    return samples.subset(train), samples.subset(test)


def _class_indices(pool: SamplePool, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.permutation(np.flatnonzero(pool.labels == c)) for c in range(pool.num_classes)]


def _build_clients(pool: SamplePool, holdings: list[np.ndarray], rng) -> list[ClientDataset]:
    clients = []
    for cid, idx in enumerate(holdings):
        held = pool.subset(np.sort(idx))
        train, test = split_train_test(held, rng)
        clients.append(ClientDataset(cid, train, test, held.histogram()))
    return clients


def ring_assignment(num_clients: int, classes_per_client: int, num_classes: int) -> list[list[int]]:
    """Client ``i`` holds classes ``i .. i+cpc-1`` (mod C): neighbours share cpc-1 classes."""
    return [sorted({(i + k) % num_classes for k in range(classes_per_client)})
            for i in range(num_clients)]


def paired_assignment(num_clients: int, classes_per_client: int, num_classes: int,
                      seed: int = 0) -> list[list[int]]:
    """Clients ``2p`` and ``2p+1`` share one random class subset."""
    rng = np.random.default_rng(seed)
    out = []
    for p in range((num_clients + 1) // 2):
        classes = sorted(rng.choice(num_classes, classes_per_client, replace=False).tolist())
        out.extend([classes, list(classes)])
    return out[:num_clients]


def partition_noniid1(pool: SamplePool, spec: PartitionSpec,
                      assignment: Sequence[Sequence[int]] | None = None) -> list[ClientDataset]:
    """Each client gets ``classes_per_client`` classes with equal per-class counts.

    Class subsets are drawn with the spec seed unless ``assignment`` fixes them.
    With ``samples_per_class=None`` every client receives the largest amount
    per class that the pool supports without reusing samples.
    """
    C = pool.num_classes
    if spec.classes_per_client > C or spec.classes_per_client < 1:
        raise PartitionError(f"classes_per_client={spec.classes_per_client} with {C} classes")
    rng = np.random.default_rng(spec.seed)
    if assignment is None:
        assignment = [sorted(rng.choice(C, spec.classes_per_client, replace=False).tolist())
                      for _ in range(spec.num_clients)]
    if len(assignment) != spec.num_clients:
        raise PartitionError(f"assignment covers {len(assignment)} clients, expected {spec.num_clients}")
    for classes in assignment:
        if len(set(classes)) != spec.classes_per_client:
            raise PartitionError(f"client class set {list(classes)} is not "
                                 f"{spec.classes_per_client} distinct classes")
    demand = np.zeros(C, dtype=np.int64)
    for classes in assignment:
        demand[list(classes)] += 1
    counts = pool.histogram()
    used = np.flatnonzero(demand)
    amount = spec.samples_per_class
    if amount is None:
        amount = int(min(counts[c] // demand[c] for c in used))
    for c in used:
        if amount < 1 or demand[c] * amount > counts[c]:
            raise PartitionError(f"insufficient samples for class {c}: need "
                                 f"{demand[c] * max(amount, 1)}, pool has {counts[c]}", int(c))
    by_class = _class_indices(pool, rng)
    cursor = np.zeros(C, dtype=np.int64)
    holdings = []
    for classes in assignment:
        parts = []
        for c in classes:
            parts.append(by_class[c][cursor[c]:cursor[c] + amount])
            cursor[c] += amount
        holdings.append(np.concatenate(parts))
    return _build_clients(pool, holdings, rng)


def partition_noniid2(pool: SamplePool, spec: PartitionSpec) -> list[ClientDataset]:
    """Every client holds every class; its dominant classes get ``skew_ratio`` times more.

    ``samples_per_class`` sets the minority count per client; by default the
    largest count the pool supports.
    """
    C = pool.num_classes
    if spec.dominant_classes > C:
        raise PartitionError(f"dominant_classes={spec.dominant_classes} with {C} classes")
    rng = np.random.default_rng(spec.seed)
    dominant = [set(rng.choice(C, spec.dominant_classes, replace=False).tolist())
                for _ in range(spec.num_clients)]
    n_dom = np.array([sum(c in d for d in dominant) for c in range(C)])
    counts = pool.histogram()
    ratio = spec.skew_ratio
    base = spec.samples_per_class
    if base is None:
        base = int(min(np.floor(counts[c] / (n_dom[c] * ratio + spec.num_clients - n_dom[c]))
                       for c in range(C)))
        while base > 0 and any(n_dom[c] * int(round(ratio * base)) + (spec.num_clients - n_dom[c]) * base
                               > counts[c] for c in range(C)):
            base -= 1
    big = int(round(ratio * base))
    for c in range(C):
        need = n_dom[c] * big + (spec.num_clients - n_dom[c]) * base
        if base < 1 or need > counts[c]:
            raise PartitionError(f"insufficient samples for class {c}: need {max(need, 1)}, "
                                 f"pool has {counts[c]}", c)
    by_class = _class_indices(pool, rng)
    cursor = np.zeros(C, dtype=np.int64)
    holdings = []
    for dom in dominant:
        parts = []
        for c in range(C):
            amount = big if c in dom else base
            parts.append(by_class[c][cursor[c]:cursor[c] + amount])
            cursor[c] += amount
        holdings.append(np.concatenate(parts))
    return _build_clients(pool, holdings, rng)


def partition(pool: SamplePool, spec: PartitionSpec, assignment=None) -> list[ClientDataset]:
    if spec.scheme == "noniid1":
        return partition_noniid1(pool, spec, assignment)
    return partition_noniid2(pool, spec)


# IDX layout: 4-byte magic (0x00 0x00 dtype ndim), ndim big-endian uint32 dims, then data.

def _read_bytes(path: str | os.PathLike) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, path: str | None) -> tuple[tuple[int, ...], np.ndarray]:
    if len(raw) < 4:
        raise IdxParseError("truncated header: missing magic number", 0, path)
    (got,) = struct.unpack_from(">I", raw, 0)
    if got != magic:
        raise IdxParseError(f"bad magic number 0x{got:08x}, expected 0x{magic:08x}", 0, path)
    ndim = magic & 0xFF
    dims = []
    for d in range(ndim):
        off = 4 + 4 * d
        if len(raw) < off + 4:
            raise IdxParseError(f"truncated header: missing dimension {d}", off, path)
        dims.append(struct.unpack_from(">I", raw, off)[0])
    start = 4 + 4 * ndim
    size = int(np.prod(dims))
    if len(raw) < start + size:
        raise IdxParseError(f"truncated data: expected {size} bytes, found {len(raw) - start}",
                            len(raw), path)
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=start)
    return tuple(dims), data


def parse_idx_images(raw: bytes, path: str | None = None) -> np.ndarray:
    """Images as ``(count, rows*cols)`` float64 in [0, 1]."""
    dims, data = _parse_idx(raw, IDX_IMAGES_MAGIC, path)
    return data.reshape(dims[0], dims[1] * dims[2]).astype(np.float64) / 255.0


def parse_idx_labels(raw: bytes, path: str | None = None) -> np.ndarray:
    _, data = _parse_idx(raw, IDX_LABELS_MAGIC, path)
    return data.astype(np.int64)


def load_idx(images_path: str | os.PathLike, labels_path: str | os.PathLike,
             num_classes: int | None = None) -> SamplePool:
    """Read an IDX image/label file pair (optionally gzipped)."""
    images = parse_idx_images(_read_bytes(images_path), str(images_path))
    labels = parse_idx_labels(_read_bytes(labels_path), str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise IdxParseError(f"label count {labels.shape[0]} != image count {images.shape[0]}",
                            4, str(labels_path))
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    return SamplePool(images, labels, num_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images ``(count, rows, cols)`` and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    buf = io.BytesIO()
    buf.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
    buf.write(images.tobytes())
    with open(images_path, "wb") as fh:
        fh.write(buf.getvalue())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())

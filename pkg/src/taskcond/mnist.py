"""MNIST ingestion and the five-task even/odd split.

IDX container layout (big-endian 32-bit header fields):

    images  magic 0x00000803 | count | rows | cols | count*rows*cols bytes
    labels  magic 0x00000801 | count | count bytes

Files may be raw or gzip-compressed. Pixels are scaled to [0, 1] by
dividing by 255; no further normalization. Task t holds digits
(2t, 2t + 1) and every task shares the binary label space
class_id = digit mod 2.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import PairBatch

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"
STANDARD_FILES = (TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS)


class IdxFormatError(ValueError):
    """Raised when an IDX byte stream violates the container contract."""


def parse_idx_images(data: bytes) -> np.ndarray:
    """Decode an IDX image payload into an (n, 784) float array in [0, 1]."""
    if len(data) < 16:
        raise IdxFormatError(f"truncated header: need 16 bytes, got {len(data)}")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(
            f"bad image magic 0x{magic:08x} at byte offset 0 (expected 0x{IMAGE_MAGIC:08x})"
        )
    if (rows, cols) != (28, 28):
        raise IdxFormatError(
            f"unexpected image dims {rows}x{cols} at byte offsets 8/12 (expected 28x28)"
        )
    expected = 16 + count * rows * cols
    if len(data) != expected:
        raise IdxFormatError(
            f"payload length mismatch: header says {count} images "
            f"({expected} bytes total), file has {len(data)} bytes"
        )
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Decode an IDX label payload into an (n,) array of digits 0-9."""
    if len(data) < 8:
        raise IdxFormatError(f"truncated header: need 8 bytes, got {len(data)}")
    magic, count = struct.unpack(">II", data[:8])
    if magic != LABEL_MAGIC:
        raise IdxFormatError(
            f"bad label magic 0x{magic:08x} at byte offset 0 (expected 0x{LABEL_MAGIC:08x})"
        )
    expected = 8 + count
    if len(data) != expected:
        raise IdxFormatError(
            f"payload length mismatch: header says {count} labels "
            f"({expected} bytes total), file has {len(data)} bytes"
        )
    labels = np.frombuffer(data, dtype=np.uint8, offset=8)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise IdxFormatError(
            f"corrupt label {labels[bad[0]]} at byte offset {8 + int(bad[0])} (digits are 0-9)"
        )
    return labels.astype(np.int64)


def write_idx_images(pixels01: np.ndarray) -> bytes:
    """Inverse of ``parse_idx_images``: rows in [0, 1] back to IDX bytes."""
    X = np.asarray(pixels01, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 784:
        raise ValueError("expected an (n, 784) pixel matrix")
    raw = np.rint(X * 255.0).astype(np.uint8)
    header = struct.pack(">IIII", IMAGE_MAGIC, X.shape[0], 28, 28)
    return header + raw.tobytes()


def write_idx_labels(digits: np.ndarray) -> bytes:
    y = np.asarray(digits)
    if y.ndim != 1 or (y.size and (y.min() < 0 or y.max() > 9)):
        raise ValueError("expected a flat array of digits 0-9")
    return struct.pack(">II", LABEL_MAGIC, y.size) + y.astype(np.uint8).tobytes()


def read_idx_file(path) -> bytes:
    """Read a raw or gzip-compressed IDX file; sniffs the gzip signature."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _locate(data_dir: Path, name: str) -> Path:
    for candidate in (data_dir / name, data_dir / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(
        f"missing MNIST file {name!r} (or {name}.gz) in {data_dir}; expected the four "
        f"standard files {STANDARD_FILES}"
    )


def load_mnist(data_dir):
    """Load the four standard files; returns (train_x, train_y, test_x, test_y)."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    train_x = parse_idx_images(read_idx_file(_locate(data_dir, TRAIN_IMAGES)))
    train_y = parse_idx_labels(read_idx_file(_locate(data_dir, TRAIN_LABELS)))
    test_x = parse_idx_images(read_idx_file(_locate(data_dir, TEST_IMAGES)))
    test_y = parse_idx_labels(read_idx_file(_locate(data_dir, TEST_LABELS)))
    for X, y, name in ((train_x, train_y, "train"), (test_x, test_y, "test")):
        if len(X) != len(y):
            raise IdxFormatError(f"{name} images ({len(X)}) and labels ({len(y)}) disagree")
    return train_x, train_y, test_x, test_y


@dataclass
class SampleSet:
    """Parallel arrays describing one split of one task."""

    x: np.ndarray  # (n, d) inputs
    digit: np.ndarray  # (n,) original digit
    class_id: np.ndarray  # (n,) shared binary label (digit mod 2 for MNIST)
    source_index: np.ndarray  # (n,) index into the originating full split

    @property
    def n(self):
        return self.x.shape[0]

    def class_indices(self, c):
        return np.flatnonzero(self.class_id == c)


def make_sampleset(x, class_id, digit=None, source_index=None):
    """Convenience constructor for synthetic or toy data."""
    x = np.asarray(x, dtype=np.float64)
    class_id = np.asarray(class_id, dtype=np.int64)
    if digit is None:
        digit = class_id.copy()
    if source_index is None:
        source_index = np.arange(len(class_id))
    return SampleSet(x=x, digit=np.asarray(digit, dtype=np.int64),
                     class_id=class_id, source_index=np.asarray(source_index, dtype=np.int64))


@dataclass
class TaskDataset:
    """Train and test samples for one task in the sequence."""

    task_id: int
    digits: tuple
    train: SampleSet
    test: SampleSet


def _task_subset(X, y, digits):
    mask = np.isin(y, digits)
    idx = np.flatnonzero(mask)
    return SampleSet(
        x=X[idx],
        digit=y[idx],
        class_id=y[idx] % 2,
        source_index=idx,
    )


def build_split_mnist(train_x, train_y, test_x, test_y, n_tasks=5):
    """Partition full MNIST into binary digit-pair tasks.

    Task t gets digits (2t, 2t + 1) from both splits; the union of tasks is
    exactly the input data and tasks are pairwise disjoint.
    """
    tasks = []
    for t in range(n_tasks):
        digits = (2 * t, 2 * t + 1)
        tasks.append(
            TaskDataset(
                task_id=t,
                digits=digits,
                train=_task_subset(train_x, train_y, digits),
                test=_task_subset(test_x, test_y, digits),
            )
        )
    return tasks


def sample_pairs(samples: SampleSet, n_pairs, rng) -> PairBatch:
    """Draw same-class pairs: uniform class, then two distinct members.

    Requires every class present in ``samples`` to have at least two
    members. Draws are with replacement across pairs, so repeated batches
    are fresh.
    """
    classes = np.unique(samples.class_id)
    index_by_class = []
    for c in classes:
        idx = samples.class_indices(c)
        if idx.size < 2:
            raise ValueError(f"class {c} has {idx.size} sample(s); need >= 2 to form pairs")
        index_by_class.append(idx)
    first = np.empty(n_pairs, dtype=np.int64)
    second = np.empty(n_pairs, dtype=np.int64)
    cls = np.empty(n_pairs, dtype=np.int64)
    for i in range(n_pairs):
        c = int(rng.integers(len(classes)))
        pick = rng.choice(index_by_class[c], size=2, replace=False)
        first[i], second[i] = pick
        cls[i] = classes[c]
    return PairBatch(x1=samples.x[first], x2=samples.x[second], class_id=cls)

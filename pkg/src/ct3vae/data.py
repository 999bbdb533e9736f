"""Synthetic labeled datasets, long-tail subsampling, and tensor file I/O.

The binary tensor format is deliberately tiny: magic ``HTVT``, a version
byte, a dtype code (0 = f32, 1 = f64, 2 = i64), the rank, little-endian
u64 dimensions, then the row-major little-endian payload.  Round trips are
bit-exact, which checkpoint resume and metric reproducibility rely on.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HTVT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class TensorFormatError(ValueError):
    """Malformed tensor file; the message carries the byte offset."""


def write_tensor(path, array) -> None:
    array = np.asarray(array)  # tobytes(order="C") handles layout; keep rank-0 intact
    if array.dtype not in _CODES:
        raise TensorFormatError(f"unsupported dtype {array.dtype}")
    code = _CODES[array.dtype]
    header = MAGIC + struct.pack("<BBB", VERSION, code, array.ndim)
    dims = b"".join(struct.pack("<Q", s) for s in array.shape)
    payload = array.astype(_DTYPES[code], copy=False).tobytes(order="C")
    Path(path).write_bytes(header + dims + payload)


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 7:
        raise TensorFormatError(f"file too short for a header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"bad magic {raw[:4]!r} at offset 0")
    version, code, ndim = struct.unpack_from("<BBB", raw, 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version} at offset 4")
    if code not in _DTYPES:
        raise TensorFormatError(f"unknown dtype code {code} at offset 5")
    offset = 7
    if len(raw) < offset + 8 * ndim:
        raise TensorFormatError(f"truncated dimension list at offset {offset}")
    dims = struct.unpack_from(f"<{ndim}Q" if ndim else "<0Q", raw, offset)
    offset += 8 * ndim
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = count * dtype.itemsize
    actual = len(raw) - offset
    if actual != expected:
        raise TensorFormatError(
            f"payload length mismatch at offset {offset}: expected {expected} bytes, "
            f"got {actual}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(dims).copy()


@dataclass
class LabeledDataset:
    samples: np.ndarray          # (N, n) floats in [0, 1]
    labels: np.ndarray           # (N,) ints in [0, K)
    rho: float = 1.0
    class_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2 or self.labels.shape != (self.samples.shape[0],):
            raise ValueError("samples must be (N, n) with one label per row")
        k = int(self.labels.max()) + 1 if self.labels.size else 0
        if self.class_counts is None:
            self.class_counts = np.bincount(self.labels, minlength=k)
        else:
            self.class_counts = np.asarray(self.class_counts, dtype=np.int64)
        if int(self.class_counts.sum()) != self.samples.shape[0]:
            raise ValueError("class counts do not sum to the sample count")

    @property
    def n(self):
        return self.samples.shape[1]

    @property
    def K(self):
        return self.class_counts.shape[0]

    @property
    def size(self):
        return self.samples.shape[0]


def exponential_decay_counts(M: int, rho: float, K: int) -> np.ndarray:
    """Per-class sizes M * rho^(-(y-1)/(K-1)), floored with a minimum of 1."""
    if rho < 1.0:
        raise ValueError(f"imbalance ratio must be at least 1, got {rho}")
    if M < 1:
        raise ValueError("head class size must be at least 1")
    if K < 2 and rho != 1.0:
        raise ValueError("a single class cannot carry an imbalance ratio above 1")
    if K == 1:
        return np.array([M], dtype=np.int64)
    ys = np.arange(K, dtype=np.float64)
    counts = np.floor(M * rho ** (-ys / (K - 1))).astype(np.int64)
    return np.maximum(counts, 1)


def make_longtail(balanced: LabeledDataset, rho: float, seed: int) -> LabeledDataset:
    """Uniform per-class subsample (without replacement) down the decay profile."""
    counts = balanced.class_counts
    if counts.min() != counts.max():
        raise ValueError("input dataset must be balanced before imposing imbalance")
    target = exponential_decay_counts(int(counts[0]), rho, balanced.K)
    if np.any(target > counts):
        raise ValueError("requested per-class count exceeds available samples")
    rng = np.random.default_rng(seed)
    keep = []
    for y in range(balanced.K):
        rows = np.nonzero(balanced.labels == y)[0]
        chosen = rng.choice(rows, size=int(target[y]), replace=False)
        keep.append(np.sort(chosen))
    keep = np.concatenate(keep)
    return LabeledDataset(balanced.samples[keep], balanced.labels[keep], rho=float(rho))


def _class_means(K: int, n: int, separation: float) -> np.ndarray:
    """Class centers with pairwise distance >= separation.

    A regular simplex (pairwise-equidistant) when it fits in n dimensions,
    otherwise a planar circle whose adjacent chord equals the separation.
    """
    means = np.zeros((K, n))
    if K == 1 or separation == 0.0:
        return means
    if K == 2:
        means[1, 0] = separation
        return means
    if K <= n:
        # centered unit-basis simplex scaled so every pairwise gap matches
        simplex = np.eye(K) - 1.0 / K
        means[:, :K] = simplex * (separation / math.sqrt(2.0))
        return means
    radius = separation / (2.0 * math.sin(math.pi / K))
    angles = 2.0 * math.pi * np.arange(K) / K
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def _raw_cluster_draws(K, n, per_class, family, dof, separation, seed):
    """Cluster draws before squashing; exposed for tail-weight diagnostics."""
    if family not in ("gaussian", "student_t"):
        raise ValueError(f"unknown cluster family {family!r}")
    rng = np.random.default_rng(seed)
    means = _class_means(K, n, separation)
    samples = np.empty((K * per_class, n))
    labels = np.repeat(np.arange(K, dtype=np.int64), per_class)
    for y in range(K):
        noise = rng.standard_normal((per_class, n))
        if family == "student_t":
            v = rng.chisquare(dof, size=per_class)
            noise = noise * np.sqrt(dof / v)[:, None]
        samples[y * per_class:(y + 1) * per_class] = means[y] + noise
    return samples, labels, means


def synth_classes(K: int, n: int, per_class: int, family: str = "gaussian",
                  dof: float = 3.0, separation: float = 4.0,
                  seed: int = 0, margin: float = 3.0) -> LabeledDataset:
    """K unit-scale clusters squashed into [0, 1]^n by a fixed affine map + clamp.

    ``family='student_t'`` draws heavy-tailed clusters (default dof 3) so the
    data itself has the tail structure the heavy-tailed models target.
    ``margin`` is the noise allowance (in cluster scale units) around the
    outermost class center before values clamp at the box walls.
    """
    if n < 2:
        raise ValueError("need at least 2 data dimensions")
    if per_class < 10:
        raise ValueError("need at least 10 samples per class")
    samples, labels, means = _raw_cluster_draws(K, n, per_class, family, dof,
                                                separation, seed)
    # fixed span: outermost center plus the noise margin; heavy tails clamp
    radius = float(np.max(np.abs(means))) if K > 1 else 0.0
    span = 2.0 * (radius + margin)
    squashed = np.clip(0.5 + samples / span, 0.0, 1.0)
    return LabeledDataset(squashed, labels, rho=1.0)


# -- dataset manifests ---------------------------------------------------------


def write_dataset(dataset: LabeledDataset, directory) -> Path:
    """Write samples/labels tensors plus a small text manifest; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / "samples.htvt", dataset.samples)
    write_tensor(directory / "labels.htvt", dataset.labels)
    manifest = directory / "dataset.txt"
    lines = [
        f"samples=samples.htvt",
        f"labels=labels.htvt",
        f"classes={dataset.K}",
        f"n={dataset.n}",
        f"rho={dataset.rho!r}",
    ]
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_dataset(manifest_path) -> LabeledDataset:
    manifest_path = Path(manifest_path)
    meta = {}
    for line in manifest_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    base = manifest_path.parent
    samples = read_tensor(base / meta["samples"])
    labels = read_tensor(base / meta["labels"])
    return LabeledDataset(samples, labels, rho=float(meta.get("rho", 1.0)))

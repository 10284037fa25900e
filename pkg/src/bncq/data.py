"""Dataset loading, MDL discretization, one-hot encoding and splitting."""

from __future__ import annotations

import csv
import gzip
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass
class RawDataset:
    samples: np.ndarray  # (N, D) float
    labels: np.ndarray  # (N,) int in [0, C)
    num_classes: int
    names: list[str] | None = None
    classes: list[str] | None = None
    image_shape: tuple[int, int] | None = None  # (H, W) when rows are flattened images

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2:
            raise DataError("samples must be a 2-D matrix")
        if len(self.samples) < 1:
            raise DataError("dataset is empty")
        if len(self.labels) != len(self.samples):
            raise DataError("labels and samples differ in length")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError("labels out of range [0, C)")
        if self.image_shape is not None:
            self.image_shape = (int(self.image_shape[0]), int(self.image_shape[1]))
            if self.image_shape[0] * self.image_shape[1] != self.d:
                raise DataError(f"image shape {self.image_shape} does not match {self.d} features")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def subset(self, idx) -> "RawDataset":
        return RawDataset(
            self.samples[idx], self.labels[idx], self.num_classes, self.names, self.classes, self.image_shape
        )


@dataclass
class Discretizer:
    cut_points: list[np.ndarray]

    def __post_init__(self):
        self.cut_points = [np.asarray(c, dtype=np.float64) for c in self.cut_points]
        for i, c in enumerate(self.cut_points):
            if c.ndim != 1 or np.any(np.diff(c) <= 0):
                raise DataError(f"cut points of feature {i} are not strictly increasing")

    @property
    def cardinalities(self) -> list[int]:
        return [len(c) + 1 for c in self.cut_points]

    @property
    def d(self) -> int:
        return len(self.cut_points)

    def to_json(self) -> str:
        return json.dumps({"cut_points": [c.tolist() for c in self.cut_points]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Discretizer":
        return cls(json.loads(text)["cut_points"])

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Discretizer":
        return cls.from_json(Path(path).read_text())


@dataclass
class DiscreteDataset:
    samples: np.ndarray  # (N, D) int bins
    labels: np.ndarray
    cardinalities: list[int]
    num_classes: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int64).reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.cardinalities = [int(k) for k in self.cardinalities]
        if self.samples.shape[1] != len(self.cardinalities):
            raise DataError("cardinalities do not match the number of features")
        if self.samples.size and (
            self.samples.min() < 0 or np.any(self.samples >= np.asarray(self.cardinalities, dtype=np.int64))
        ):
            raise DataError("bin index out of range")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return len(self.cardinalities)

    def subset(self, idx) -> "DiscreteDataset":
        return DiscreteDataset(self.samples[idx], self.labels[idx], self.cardinalities, self.num_classes)


# ---------------------------------------------------------------------------
# loading


def load_csv(
    path,
    label_column: int | str = -1,
    header: bool = False,
    delimiter: str = ",",
    classes: Sequence[str] | None = None,
) -> RawDataset:
    """Read a numeric CSV with one label column.

    Labels are mapped to class indices in the order of ``classes``; without an
    explicit list the sorted distinct label strings are used (numerically
    sorted when they all parse as numbers).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", newline="") as fh:
        if delimiter.strip() == "":
            rows = [line.split() for line in fh if line.strip()]
        else:
            rows = [[f.strip() for f in r] for r in csv.reader(fh, delimiter=delimiter) if r and any(f.strip() for f in r)]
    if not rows:
        raise DataError(f"{path}: no rows")
    names = None
    if header:
        names, rows = rows[0], rows[1:]
        if not rows:
            raise DataError(f"{path}: header only")
    width = len(rows[0])
    for lineno, r in enumerate(rows, start=2 if header else 1):
        if len(r) != width:
            raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(r)}")
        if any(f == "" for f in r):
            raise DataError(f"{path}:{lineno}: missing field")
    if isinstance(label_column, str):
        if names is None or label_column not in names:
            raise DataError(f"label column {label_column!r} not found in header")
        col = names.index(label_column)
    else:
        col = label_column % width
    raw_labels = [r[col] for r in rows]
    feats = [[f for j, f in enumerate(r) if j != col] for r in rows]
    try:
        x = np.array(feats, dtype=np.float64)
    except ValueError as e:
        raise DataError(f"{path}: non-numeric feature value ({e})") from None
    if classes is None:
        distinct = set(raw_labels)
        try:
            classes = sorted(distinct, key=float)
        except ValueError:
            classes = sorted(distinct)
    index = {c: k for k, c in enumerate(classes)}
    try:
        y = np.array([index[v] for v in raw_labels], dtype=np.int64)
    except KeyError as e:
        raise DataError(f"{path}: unknown label value {e.args[0]!r}") from None
    if names is not None:
        names = [nm for j, nm in enumerate(names) if j != col]
    return RawDataset(x, y, len(classes), names, list(classes))


def _read_idx(path) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[0] != 0 or buf[1] != 0:
        raise DataError(f"{path}: bad IDX magic number")
    dtypes = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    code, ndim = buf[2], buf[3]
    if code not in dtypes:
        raise DataError(f"{path}: unknown IDX type code {code:#x}")
    shape = struct.unpack(f">{ndim}I", buf[4 : 4 + 4 * ndim])
    data = np.frombuffer(buf, dtype=dtypes[code], offset=4 + 4 * ndim)
    if data.size != int(np.prod(shape)):
        raise DataError(f"{path}: payload size does not match header")
    return data.reshape(shape)


def downscale(images: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping factor x factor blocks of (N, H, W) images."""
    n, h, w = images.shape
    if h % factor or w % factor:
        raise DataError(f"image size {h}x{w} not divisible by {factor}")
    return images.reshape(n, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def load_idx(images_path, labels_path, downscale_factor: int = 1) -> RawDataset:
    images = _read_idx(images_path).astype(np.float64)
    labels = _read_idx(labels_path).astype(np.int64)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise DataError("IDX images must be (N, H, W) with N matching labels")
    if downscale_factor > 1:
        images = downscale(images, downscale_factor)
    return RawDataset(images.reshape(len(images), -1), labels, int(labels.max()) + 1, image_shape=images.shape[1:])


def load_dataset(source, format: str = "csv", image_shape=None, **kwargs) -> RawDataset:
    """Dispatch on ``format``: ``csv`` (kwargs of :func:`load_csv`) or
    ``idx-images`` (``labels`` path and optional ``downscale``).

    ``image_shape`` marks CSV rows as flattened (H, W) images.
    """
    if format == "csv":
        raw = load_csv(source, **kwargs)
        if image_shape is not None:
            raw = RawDataset(raw.samples, raw.labels, raw.num_classes, raw.names, raw.classes, tuple(image_shape))
        return raw
    if format == "idx-images":
        if "labels" not in kwargs:
            raise DataError("idx-images needs a labels file")
        return load_idx(source, kwargs["labels"], kwargs.get("downscale", 1))
    raise DataError(f"unknown dataset format {format!r}")


# ---------------------------------------------------------------------------
# MDL discretization


def _entropy(counts: np.ndarray) -> np.ndarray:
    """Base-2 entropy along the last axis of a count array."""
    counts = np.asarray(counts, dtype=np.float64)
    tot = counts.sum(axis=-1, keepdims=True)
    p = np.divide(counts, tot, out=np.zeros_like(counts), where=tot > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -(p * logp).sum(axis=-1)


def _mdlp_cuts(values: np.ndarray, hist: np.ndarray) -> list[float]:
    """Recursive MDLP splitting over distinct ``values`` with class histograms ``hist``."""
    cuts: list[float] = []
    stack = [(0, len(values))]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        h = hist[lo:hi]
        total = h.sum(axis=0)
        n = total.sum()
        left = np.cumsum(h, axis=0)[:-1]
        right = total - left
        # boundary points: skip cuts between two pure blocks of the same class
        pure = (h > 0).sum(axis=1) == 1
        same = pure[:-1] & pure[1:] & (h[:-1].argmax(axis=1) == h[1:].argmax(axis=1))
        cand = np.flatnonzero(~same)
        if cand.size == 0:
            continue
        nl = left[cand].sum(axis=1)
        nr = n - nl
        el = _entropy(left[cand])
        er = _entropy(right[cand])
        part = (nl * el + nr * er) / n
        best = int(np.argmin(part))
        t = cand[best]
        ent = float(_entropy(total))
        gain = ent - float(part[best])
        k = int((total > 0).sum())
        k1 = int((left[t] > 0).sum())
        k2 = int((right[t] > 0).sum())
        delta = math.log2(3.0**k - 2.0) - (k * ent - k1 * float(el[best]) - k2 * float(er[best]))
        if gain > (math.log2(n - 1) + delta) / n:
            cuts.append((values[lo + t] + values[lo + t + 1]) / 2.0)
            stack.append((lo, lo + t + 1))
            stack.append((lo + t + 1, hi))
    return sorted(cuts)


def mdl_discretize(data: RawDataset) -> Discretizer:
    """Fayyad-Irani entropy discretization, one feature at a time."""
    if data.n < 2:
        raise DataError("need at least two samples to discretize")
    cut_points = []
    for i in range(data.d):
        values, inverse = np.unique(data.samples[:, i], return_inverse=True)
        hist = np.zeros((len(values), data.num_classes), dtype=np.int64)
        np.add.at(hist, (inverse.ravel(), data.labels), 1)
        cut_points.append(_mdlp_cuts(values, hist))
    return Discretizer(cut_points)


def apply_discretizer(disc: Discretizer, data: RawDataset) -> DiscreteDataset:
    """Bin index = number of cut points at or below the value.

    A value equal to a cut point goes to the upper bin; out-of-range values
    land in the first or last bin.
    """
    if disc.d != data.d:
        raise DataError(f"discretizer has {disc.d} features, data has {data.d}")
    bins = np.empty(data.samples.shape, dtype=np.int64)
    for i, cuts in enumerate(disc.cut_points):
        bins[:, i] = np.searchsorted(cuts, data.samples[:, i], side="right")
    return DiscreteDataset(bins, data.labels, disc.cardinalities, data.num_classes)


# ---------------------------------------------------------------------------
# encodings


def one_hot_encode(data: DiscreteDataset, parents: Sequence[int] | None = None) -> np.ndarray:
    """Stacked one-hot blocks.

    With ``parents`` (0-based parent feature per feature, -1 for none) each
    block encodes the joint value of a feature and its parent, index
    ``x_i * K_parent + x_parent``; features without parent get a K_i block.
    """
    k = data.cardinalities
    widths = []
    codes = np.empty_like(data.samples)
    for i in range(data.d):
        p = -1 if parents is None else parents[i]
        if p < 0:
            widths.append(k[i])
            codes[:, i] = data.samples[:, i]
        else:
            widths.append(k[i] * k[p])
            codes[:, i] = data.samples[:, i] * k[p] + data.samples[:, p]
    offsets = np.concatenate([[0], np.cumsum(widths)[:-1]]).astype(np.int64)
    out = np.zeros((data.n, int(sum(widths))), dtype=np.float64)
    out[np.arange(data.n)[:, None], offsets[None, :] + codes] = 1.0
    return out


@dataclass
class Standardizer:
    """Zero-mean / unit-variance scaling fitted on training data."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


# ---------------------------------------------------------------------------
# splits


@dataclass
class Fold:
    train: np.ndarray
    test: np.ndarray
    index: int = 0


def split(n: int, scheme: str = "holdout", seed: int = 0, folds: int = 5, train_fraction: float = 2 / 3) -> list[Fold]:
    """Index splits for ``n`` samples: one holdout fold or ``folds``-way CV."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    if scheme == "holdout":
        if n < 2:
            raise DataError("holdout split needs at least two samples")
        n_train = int(round(n * train_fraction))
        return [Fold(np.sort(perm[:n_train]), np.sort(perm[n_train:]))]
    if scheme == "kfold":
        if n < folds:
            raise DataError(f"cannot make {folds} folds from {n} samples")
        return [
            Fold(np.sort(np.concatenate([p for j, p in enumerate(parts) if j != f])), np.sort(parts[f]), f)
            for parts in [np.array_split(perm, folds)]
            for f in range(folds)
        ]
    raise DataError(f"unknown split scheme {scheme!r}")


@dataclass
class PreparedFold:
    """A train/test pair discretized with cut points learned on the training part."""

    train: DiscreteDataset
    test: DiscreteDataset
    discretizer: Discretizer
    index: int = 0
    meta: dict = field(default_factory=dict)


def prepare(raw: RawDataset, scheme: str = "holdout", seed: int = 0, folds: int = 5) -> list[PreparedFold]:
    out = []
    for f in split(raw.n, scheme, seed, folds):
        tr, te = raw.subset(f.train), raw.subset(f.test)
        disc = mdl_discretize(tr)
        out.append(PreparedFold(apply_discretizer(disc, tr), apply_discretizer(disc, te), disc, f.index))
    return out

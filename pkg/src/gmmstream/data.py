"""Dataset ingestion: IDX and CSV loaders, synthetic mixtures, streams.

Every source is exposed as a :class:`SampleStream`: a re-iterable,
bounded-memory producer of float64 feature vectors (plus optional
integer labels). File-backed streams reopen their file on every pass,
so an epoch restart never needs the dataset in memory; buffering is one
mini-batch at a time.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    CountMismatchError,
    CsvParseError,
    MagicNumberError,
    ShapeError,
    TruncatedPayloadError,
)

IDX_IMAGE_MAGIC = 0x00000803  # 3-D uint8 tensor
IDX_LABEL_MAGIC = 0x00000801  # 1-D uint8 vector


class SampleStream:
    """Base class: re-iterable source of (vector, label) pairs.

    Subclasses implement :meth:`samples`; everything else (batching,
    materialization) is shared. ``n_samples`` is always known, which
    the trainers rely on for burn-in and progress accounting.
    """

    dim: int
    n_samples: int
    has_labels: bool

    def samples(self):
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def __iter__(self):
        return self.samples()

    def batches(self, batch_size: int):
        """Yield (X, labels) with X of shape (b, dim); the final batch
        may be short. labels is None for unlabeled streams."""
        if batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        xs, ys = [], []
        for x, y in self.samples():
            xs.append(x)
            ys.append(y)
            if len(xs) == batch_size:
                yield self._emit(xs, ys)
                xs, ys = [], []
        if xs:
            yield self._emit(xs, ys)

    def _emit(self, xs, ys):
        X = np.stack(xs).astype(np.float64, copy=False)
        if self.has_labels:
            return X, np.asarray(ys, dtype=np.int64)
        return X, None

    def to_array(self, limit=None):
        """Materialize up to ``limit`` samples as (X, labels)."""
        xs, ys = [], []
        for x, y in self.samples():
            xs.append(x)
            ys.append(y)
            if limit is not None and len(xs) >= limit:
                break
        if not xs:
            return np.empty((0, self.dim)), (np.empty(0, dtype=np.int64) if self.has_labels else None)
        X = np.stack(xs).astype(np.float64, copy=False)
        return X, (np.asarray(ys, dtype=np.int64) if self.has_labels else None)


def _read_exact(fh, count, what, path):
    buf = fh.read(count)
    if len(buf) != count:
        raise TruncatedPayloadError(
            f"{path}: expected {count} bytes for {what}, found {len(buf)}"
        )
    return buf


def _load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = _read_exact(fh, 8, "label header", path)
        magic, count = struct.unpack(">II", header)
        if magic != IDX_LABEL_MAGIC:
            raise MagicNumberError(
                f"{path}: magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x} for labels"
            )
        payload = _read_exact(fh, count, "label payload", path)
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


class IdxStream(SampleStream):
    """Streams a big-endian IDX image file, pixels scaled into [0, 1].

    Labels, when given, come from a companion IDX label file and must
    agree on the sample count. An optional seeded shuffle permutes the
    record order by seeking; it is meant for file-backed (non-live)
    training and is off by default.
    """

    def __init__(self, images_path, labels_path=None, shuffle_seed=None):
        self.images_path = str(images_path)
        self.labels_path = str(labels_path) if labels_path is not None else None
        self.shuffle_seed = shuffle_seed
        with open(self.images_path, "rb") as fh:
            header = _read_exact(fh, 16, "image header", self.images_path)
            magic, count, rows, cols = struct.unpack(">IIII", header)
            if magic != IDX_IMAGE_MAGIC:
                raise MagicNumberError(
                    f"{self.images_path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x} for images"
                )
            fh.seek(0, 2)
            payload = fh.tell() - 16
            if payload < count * rows * cols:
                raise TruncatedPayloadError(
                    f"{self.images_path}: payload holds {payload} bytes, "
                    f"header declares {count * rows * cols}"
                )
        self.n_samples = int(count)
        self.rows, self.cols = int(rows), int(cols)
        self.dim = self.rows * self.cols
        self._labels = None
        if self.labels_path is not None:
            labels = _load_idx_labels(self.labels_path)
            if labels.shape[0] != self.n_samples:
                raise CountMismatchError(
                    f"{self.labels_path} holds {labels.shape[0]} labels "
                    f"for {self.n_samples} images"
                )
            self._labels = labels
        self.has_labels = self._labels is not None

    def labels_array(self):
        return self._labels

    def _order(self):
        if self.shuffle_seed is None:
            return None
        return np.random.default_rng(self.shuffle_seed).permutation(self.n_samples)

    def samples(self):
        order = self._order()
        rec = self.dim
        with open(self.images_path, "rb") as fh:
            if order is None:
                fh.seek(16)
                for i in range(self.n_samples):
                    raw = _read_exact(fh, rec, f"image {i}", self.images_path)
                    x = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
                    yield x, (int(self._labels[i]) if self.has_labels else None)
            else:
                for i in order:
                    fh.seek(16 + int(i) * rec)
                    raw = _read_exact(fh, rec, f"image {i}", self.images_path)
                    x = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
                    yield x, (int(self._labels[i]) if self.has_labels else None)

    def descriptor(self):
        return {
            "kind": "idx",
            "images": self.images_path,
            "labels": self.labels_path,
            "shuffle_seed": self.shuffle_seed,
            "n_samples": self.n_samples,
            "dim": self.dim,
        }


def load_idx(images_path, labels_path=None, shuffle_seed=None) -> IdxStream:
    """Open an IDX image file (and optional label file) as a stream."""
    return IdxStream(images_path, labels_path, shuffle_seed=shuffle_seed)


def _parse_csv_row(row, lineno, expect=None):
    if expect is not None and len(row) != expect:
        raise CsvParseError(
            f"row {lineno}: {len(row)} cells, expected {expect}", row=lineno
        )
    values = []
    for col, cell in enumerate(row):
        try:
            values.append(float(cell))
        except ValueError:
            raise CsvParseError(
                f"row {lineno}, column {col}: non-numeric cell {cell!r}",
                row=lineno,
                column=col,
            ) from None
    return values


class CsvStream(SampleStream):
    """Streams a rectangular numeric CSV with per-feature min-max
    normalization into [0, 1]; constant columns map to 0.

    Construction makes one validating pass that records the column
    minima/maxima (the normalization parameters live in the
    descriptor); iteration reopens the file and applies them.
    """

    def __init__(self, path, label_column=None):
        self.path = str(path)
        self.label_column = label_column
        n_cols = None
        count = 0
        col_min = col_max = None
        labels = []
        with open(self.path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                values = _parse_csv_row(row, lineno, expect=n_cols)
                if n_cols is None:
                    n_cols = len(values)
                    if label_column is not None and not (0 <= label_column < n_cols):
                        raise ConfigurationError(
                            f"label column {label_column} out of range for {n_cols} columns"
                        )
                    col_min = np.full(n_cols, np.inf)
                    col_max = np.full(n_cols, -np.inf)
                arr = np.asarray(values)
                np.minimum(col_min, arr, out=col_min)
                np.maximum(col_max, arr, out=col_max)
                if label_column is not None:
                    labels.append(int(arr[label_column]))
                count += 1
        if count == 0:
            raise CsvParseError(f"{self.path}: no data rows")
        feature_cols = [c for c in range(n_cols) if c != label_column]
        self._feature_cols = np.asarray(feature_cols, dtype=np.intp)
        self._col_min = col_min[self._feature_cols]
        span = (col_max - col_min)[self._feature_cols]
        self._col_span = np.where(span > 0, span, 1.0)  # constant columns -> 0 after shift
        self.dim = len(feature_cols)
        self.n_samples = count
        self._labels = np.asarray(labels, dtype=np.int64) if label_column is not None else None
        self.has_labels = self._labels is not None

    def labels_array(self):
        return self._labels

    def samples(self):
        with open(self.path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                values = np.asarray(_parse_csv_row(row, lineno))
                x = (values[self._feature_cols] - self._col_min) / self._col_span
                label = int(values[self.label_column]) if self.label_column is not None else None
                yield x, label

    def descriptor(self):
        return {
            "kind": "csv",
            "path": self.path,
            "label_column": self.label_column,
            "n_samples": self.n_samples,
            "dim": self.dim,
            "col_min": self._col_min.tolist(),
            "col_span": self._col_span.tolist(),
        }


def load_csv(path, label_column=None) -> CsvStream:
    """Open a numeric CSV as a min-max normalized stream."""
    return CsvStream(path, label_column=label_column)


@dataclass
class SyntheticSpec:
    """Ground-truth diagonal mixture used as a data generator.

    The generating parameters stay exposed so tests can score trained
    models against the oracle likelihood of the true mixture.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    n_samples: int
    seed: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if self.weights.ndim != 1:
            raise ConfigurationError("weights must be a vector")
        k = self.weights.shape[0]
        if self.means.shape[0] != k or self.variances.shape != self.means.shape:
            raise ShapeError("weights, means and variances disagree on shape")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigurationError("weights must sum to 1")
        if np.any(self.variances <= 0):
            raise ConfigurationError("variances must be strictly positive")
        if self.n_samples < 0:
            raise ConfigurationError("n_samples must be non-negative")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_json(self, path) -> None:
        payload = {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "n_samples": self.n_samples,
            "seed": self.seed,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(
            weights=payload["weights"],
            means=payload["means"],
            variances=payload["variances"],
            n_samples=int(payload["n_samples"]),
            seed=int(payload.get("seed", 0)),
        )


class SyntheticStream(SampleStream):
    """Seeded i.i.d. draws from a :class:`SyntheticSpec` mixture.

    Every pass re-seeds the generator, so replays are identical. The
    component index of each draw is attached as its label.
    """

    _CHUNK = 1024

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        self.dim = spec.dim
        self.n_samples = spec.n_samples
        self.has_labels = True

    def labels_array(self):
        zs = [y for _, y in self.samples()]
        return np.asarray(zs, dtype=np.int64)

    def samples(self):
        rng = np.random.default_rng(self.spec.seed)
        sd = np.sqrt(self.spec.variances)
        remaining = self.n_samples
        while remaining > 0:
            m = min(self._CHUNK, remaining)
            z = rng.choice(self.spec.n_components, size=m, p=self.spec.weights)
            noise = rng.standard_normal((m, self.dim))
            xs = self.spec.means[z] + sd[z] * noise
            for j in range(m):
                yield xs[j], int(z[j])
            remaining -= m

    def descriptor(self):
        return {
            "kind": "synthetic",
            "n_samples": self.n_samples,
            "dim": self.dim,
            "n_components": self.spec.n_components,
            "seed": self.spec.seed,
        }


def synthetic_stream(spec: SyntheticSpec) -> SyntheticStream:
    """Wrap a generating mixture as a seeded sample stream."""
    return SyntheticStream(spec)


class ArrayStream(SampleStream):
    """In-memory stream over a fixed (n, dim) array; mainly for tests
    and for replaying materialized evaluation sets."""

    def __init__(self, X, labels=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError("ArrayStream expects a 2-D array")
        self._X = X
        self._labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        if self._labels is not None and self._labels.shape[0] != X.shape[0]:
            raise CountMismatchError("labels length does not match data rows")
        self.dim = X.shape[1]
        self.n_samples = X.shape[0]
        self.has_labels = self._labels is not None

    def labels_array(self):
        return self._labels

    def samples(self):
        for i in range(self.n_samples):
            yield self._X[i], (int(self._labels[i]) if self.has_labels else None)

    def descriptor(self):
        return {"kind": "array", "n_samples": self.n_samples, "dim": self.dim}


class FilteredStream(SampleStream):
    """Label-filtered view of another stream, order preserved."""

    def __init__(self, inner: SampleStream, keep_labels):
        if not inner.has_labels:
            raise ConfigurationError("class filter requires a labeled stream")
        self.inner = inner
        self.keep = frozenset(int(v) for v in keep_labels)
        inner_labels = inner.labels_array()
        mask = np.isin(inner_labels, sorted(self.keep))
        self.n_samples = int(mask.sum())
        self.dim = inner.dim
        self.has_labels = True

    def labels_array(self):
        labels = self.inner.labels_array()
        return labels[np.isin(labels, sorted(self.keep))]

    def samples(self):
        for x, y in self.inner.samples():
            if y in self.keep:
                yield x, y

    def descriptor(self):
        d = dict(self.inner.descriptor())
        d["class_filter"] = sorted(self.keep)
        d["n_samples"] = self.n_samples
        return d


def class_filter(stream: SampleStream, keep_labels) -> FilteredStream:
    """Restrict a labeled stream to the given label set."""
    return FilteredStream(stream, keep_labels)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write a uint8 (n, rows, cols) tensor as an IDX image file."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ShapeError("expected (n, rows, cols) uint8 images")
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    """Write a uint8 label vector as an IDX label file."""
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())

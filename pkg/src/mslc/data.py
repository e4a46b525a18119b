"""Dataset synthesis, CSV ingestion, splitting and deterministic sampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CsvParseError, DimensionError, SchemaError
from .nn import Array


def one_hot(labels, n_classes: int) -> Array:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass
class LabeledDataset:
    """Feature matrix with true labels (metrics only) and observed labels
    (the training targets, possibly corrupted)."""
    features: Array
    true_labels: Array
    observed_labels: Array
    n_classes: int
    split: str = "train"  # train | meta | test

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.observed_labels = np.asarray(self.observed_labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.true_labels.shape != (n,) or self.observed_labels.shape != (n,):
            raise DimensionError("feature rows and label arrays must have equal length")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices, split: str) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices].copy(),
                              self.true_labels[indices].copy(),
                              self.observed_labels[indices].copy(),
                              self.n_classes, split)


def synth_gaussian(n_classes: int, n_features: int, per_class: int,
                   center_spread: float, within_std: float, seed: int) -> LabeledDataset:
    """Gaussian clusters with centers drawn uniformly in a ball of radius
    `center_spread`; labels are the cluster ids. Deterministic in seed."""
    if n_classes < 2 or n_features < 2:
        raise ConfigError("need at least 2 classes and 2 features")
    if per_class < 0:
        raise ConfigError("per-class count must be non-negative")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n_classes, n_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = center_spread * rng.random(n_classes) ** (1.0 / n_features)
    centers = directions * radii[:, np.newaxis]
    features = np.empty((n_classes * per_class, n_features))
    labels = np.empty(n_classes * per_class, dtype=np.int64)
    for k in range(n_classes):
        block = slice(k * per_class, (k + 1) * per_class)
        features[block] = centers[k] + within_std * rng.normal(size=(per_class, n_features))
        labels[block] = k
    return LabeledDataset(features, labels, labels.copy(), n_classes)


def split(dataset: LabeledDataset, meta_size: int, test_fraction: float, seed: int):
    """Disjoint (train, meta, test) splits; the meta split is class-balanced
    where possible and carved before any noise injection."""
    n = len(dataset)
    if meta_size <= 0:
        raise ConfigError("meta split must be non-empty (the corrector needs clean meta data)")
    test_count = int(round(test_fraction * n))
    if meta_size + test_count >= n:
        raise ConfigError(
            f"meta ({meta_size}) + test ({test_count}) splits leave no training data out of {n}")
    rng = np.random.default_rng(seed)

    per_class = np.full(dataset.n_classes, meta_size // dataset.n_classes, dtype=np.int64)
    per_class[: meta_size % dataset.n_classes] += 1
    meta_idx = []
    for k in range(dataset.n_classes):
        members = np.flatnonzero(dataset.true_labels == k)
        take = min(per_class[k], members.size)
        meta_idx.append(rng.permutation(members)[:take])
    meta_idx = np.sort(np.concatenate(meta_idx))
    if meta_idx.size < meta_size:
        raise ConfigError("not enough samples per class for a balanced meta split")

    remaining = np.setdiff1d(np.arange(n), meta_idx)
    test_idx = np.sort(rng.permutation(remaining)[:test_count])
    train_idx = np.setdiff1d(remaining, test_idx)
    return (dataset.subset(train_idx, "train"),
            dataset.subset(meta_idx, "meta"),
            dataset.subset(test_idx, "test"))


# ---------------------------------------------------------------------------
# CSV round-trips
# ---------------------------------------------------------------------------

@dataclass
class CsvSchema:
    """Column layout of a dataset file: decimal feature columns, one integer
    observed-label column and an optional true-label column."""
    feature_columns: list
    label_column: str
    n_classes: int
    true_label_column: str | None = "true_label"
    split: str = "train"

    @staticmethod
    def default(n_features: int, n_classes: int, split: str = "train") -> "CsvSchema":
        return CsvSchema([f"f{i}" for i in range(n_features)], "label", n_classes,
                         "true_label", split)


def save_csv(dataset: LabeledDataset, path, schema: CsvSchema | None = None) -> None:
    """Write the dataset with repr-formatted floats so load(save(x)) == x."""
    if schema is None:
        schema = CsvSchema.default(dataset.n_features, dataset.n_classes, dataset.split)
    header = list(schema.feature_columns) + [schema.label_column]
    if schema.true_label_column:
        header.append(schema.true_label_column)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(int(dataset.observed_labels[i]))
            if schema.true_label_column:
                row.append(int(dataset.true_labels[i]))
            writer.writerow(row)


def load_csv(path, schema: CsvSchema) -> LabeledDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        col = {name: i for i, name in enumerate(header)}
        for name in schema.feature_columns:
            if name not in col:
                raise SchemaError(f"{path}: missing feature column {name!r}")
        if schema.label_column not in col:
            raise SchemaError(f"{path}: missing label column {schema.label_column!r}")
        true_col = None
        if schema.true_label_column and schema.true_label_column in col:
            true_col = col[schema.true_label_column]

        features, observed, true_labels = [], [], []
        for line_number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvParseError(f"expected {len(header)} fields, got {len(row)}", line_number)
            try:
                features.append([float(row[col[name]]) for name in schema.feature_columns])
                obs = int(row[col[schema.label_column]])
                tru = int(row[true_col]) if true_col is not None else obs
            except ValueError as exc:
                raise CsvParseError(str(exc), line_number) from None
            if not 0 <= obs < schema.n_classes:
                raise SchemaError(
                    f"{path}: line {line_number}: label {obs} outside [0, {schema.n_classes})")
            if not 0 <= tru < schema.n_classes:
                raise SchemaError(
                    f"{path}: line {line_number}: true label {tru} outside [0, {schema.n_classes})")
            observed.append(obs)
            true_labels.append(tru)

    n = len(features)
    return LabeledDataset(
        np.asarray(features, dtype=np.float64).reshape(n, len(schema.feature_columns)),
        np.asarray(true_labels, dtype=np.int64),
        np.asarray(observed, dtype=np.int64),
        schema.n_classes, schema.split)


# ---------------------------------------------------------------------------
# deterministic sampling
# ---------------------------------------------------------------------------

class BatchSampler:
    """Epoch-wise mini-batch index sampler. The epoch permutation is a pure
    function of (seed, epoch); every index appears exactly once per epoch and
    the last batch may be short."""

    def __init__(self, n_items: int, batch_size: int, seed: int):
        if batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        self.n_items = n_items
        self.batch_size = batch_size
        self.seed = seed

    def epoch(self, epoch_index: int):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch_index]))
        perm = rng.permutation(self.n_items)
        return [perm[i:i + self.batch_size] for i in range(0, self.n_items, self.batch_size)]


class MetaCycler:
    """Round-robin sampler over the meta set: shuffled cycling, reshuffling
    whenever the queue runs low so batches always have the requested size."""

    def __init__(self, n_items: int, batch_size: int, seed: int):
        if n_items < 1:
            raise ConfigError("meta set is empty")
        self.n_items = n_items
        self.batch_size = min(batch_size, n_items) if batch_size >= 1 else n_items
        self._rng = np.random.default_rng(seed)
        self._queue = self._rng.permutation(n_items)

    def next_batch(self) -> Array:
        while self._queue.size < self.batch_size:
            self._queue = np.concatenate([self._queue, self._rng.permutation(self.n_items)])
        batch, self._queue = self._queue[:self.batch_size], self._queue[self.batch_size:]
        return batch

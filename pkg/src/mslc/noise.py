"""Synthetic label corruption: symmetric and pair-flip (asymmetric) noise
described by row-stochastic transition matrices, plus the empirical
estimator used to verify realized noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import Array

# Pair map mimicking common real-world confusions on the 10 CIFAR classes:
# truck->automobile, bird->airplane, deer->horse, cat->dog.
CIFAR10_PAIR_MAP = {9: 1, 2: 0, 4: 7, 3: 5}


@dataclass
class NoiseSpec:
    """Declarative corruption description.

    ratio is the flip probability; for symmetric noise `include_self`
    decides whether the drawn replacement may equal the true label (making
    the realized corruption rate ratio*(c-1)/c instead of ratio).
    pair_map applies to asymmetric noise only and maps each class to its
    flip target; classes missing from the map are fixed points.
    """
    kind: str = "symmetric"  # "symmetric" | "asymmetric"
    ratio: float = 0.4
    include_self: bool = False
    pair_map: dict | None = None
    seed: int = 0

    def validate(self, n_classes: int | None = None) -> None:
        if self.kind not in ("symmetric", "asymmetric"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"noise ratio must be in [0, 1], got {self.ratio}")
        if self.kind == "asymmetric" and self.pair_map is not None and n_classes is not None:
            for a, b in self.pair_map.items():
                if not (0 <= int(a) < n_classes and 0 <= int(b) < n_classes):
                    raise ConfigError(
                        f"pair_map entry {a}->{b} outside class range [0, {n_classes})")


def cyclic_pair_map(n_classes: int) -> dict:
    """Default asymmetric map: every class flips to the next one."""
    return {i: (i + 1) % n_classes for i in range(n_classes)}


def superclass_pair_map(class_to_super) -> dict:
    """Cyclic flips restricted to each superclass, given a per-class
    superclass id array."""
    class_to_super = np.asarray(class_to_super, dtype=np.int64)
    pair_map = {}
    for s in np.unique(class_to_super):
        members = np.flatnonzero(class_to_super == s)
        for j, cls in enumerate(members):
            pair_map[int(cls)] = int(members[(j + 1) % members.size])
    return pair_map


def build_transition(spec: NoiseSpec, n_classes: int) -> Array:
    """Row-stochastic c x c matrix with entry [i, j] = P(observed=j | true=i)."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    spec.validate(n_classes)
    c, r = n_classes, spec.ratio
    if spec.kind == "symmetric":
        if spec.include_self:
            t = np.full((c, c), r / c)
            np.fill_diagonal(t, 1.0 - r + r / c)
        else:
            t = np.full((c, c), r / (c - 1))
            np.fill_diagonal(t, 1.0 - r)
        return t
    pair_map = spec.pair_map if spec.pair_map is not None else cyclic_pair_map(c)
    t = np.eye(c)
    for a, b in pair_map.items():
        a, b = int(a), int(b)
        if a == b:
            continue
        t[a, a] -= r
        t[a, b] += r
    return t


def inject(labels, spec: NoiseSpec, n_classes: int | None = None):
    """Resample each label independently from its transition-matrix row.

    Returns (noisy labels, corruption mask) with mask[i] <=> noisy != true.
    Deterministic in (labels, spec).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 2
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ConfigError(f"labels must lie in [0, {n_classes})")
    t = build_transition(spec, n_classes)
    cum = np.cumsum(t, axis=1)
    cum[:, -1] = 1.0  # guard against rounding in the last column
    rng = np.random.default_rng(spec.seed)
    u = rng.random(labels.size)
    noisy = (u[:, np.newaxis] >= cum[labels]).sum(axis=1).astype(np.int64)
    mask = noisy != labels
    return noisy, mask


def empirical_transition(true_labels, noisy_labels, n_classes: int):
    """Row-normalized count matrix. Rows with no support become uniform and
    are flagged in the returned boolean vector."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    noisy_labels = np.asarray(noisy_labels, dtype=np.int64)
    if true_labels.shape != noisy_labels.shape:
        raise ConfigError("label arrays must have equal length")
    counts = np.zeros((n_classes, n_classes))
    np.add.at(counts, (true_labels, noisy_labels), 1.0)
    support = counts.sum(axis=1)
    zero_support = support == 0
    est = np.empty_like(counts)
    est[~zero_support] = counts[~zero_support] / support[~zero_support, np.newaxis]
    est[zero_support] = 1.0 / n_classes
    return est, zero_support

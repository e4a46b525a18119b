"""Soft label correction: blending the observed label, the classifier's
current prediction and the previously corrected label, plus the per-sample
store that persists those quantities across iterations."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .models import CoefficientNet
from .nn import Array, as_f64

LOG_CLAMP = 1e-12


def soft_ce(pred: Array, target: Array) -> Array:
    """Row-wise cross entropy -sum_c target*log(pred) between probability
    vectors; log arguments clamped at 1e-12 so saturated predictions stay
    finite. Accepts (c,) or (n, c) arrays."""
    pred, target = as_f64(pred), as_f64(target)
    return -(target * np.log(np.clip(pred, LOG_CLAMP, None))).sum(axis=-1)


def corrector_inputs(y: Array, y_hat: Array, y_tilde_prev: Array):
    """Loss inputs of the two coefficient nets: the prediction's CE against
    the observed label and against the previous corrected label."""
    l_alpha = soft_ce(y_hat, y)
    l_beta = soft_ce(y_hat, y_tilde_prev)
    return l_alpha, l_beta


def blend_labels(y: Array, y_hat: Array, y_tilde_prev: Array, alpha, beta) -> Array:
    """Convex combination alpha*y + (1-alpha)*(beta*y_tilde_prev + (1-beta)*y_hat).

    alpha and beta may be scalars or per-sample vectors; rows are batched
    along the first axis when inputs are 2-d.
    """
    y, y_hat, y_tilde_prev = as_f64(y), as_f64(y_hat), as_f64(y_tilde_prev)
    alpha = as_f64(alpha)
    beta = as_f64(beta)
    if y.ndim == 2:
        if alpha.ndim == 1:
            alpha = alpha[:, np.newaxis]
        if beta.ndim == 1:
            beta = beta[:, np.newaxis]
    inner = beta * y_tilde_prev + (1.0 - beta) * y_hat
    return alpha * y + (1.0 - alpha) * inner


@dataclass
class CorrectionOutput:
    y_tilde: Array
    alpha: Array
    beta: Array
    l_alpha: Array
    l_beta: Array


def correct_label(y: Array, y_hat: Array, y_tilde_prev: Array,
                  alpha_net: CoefficientNet, beta_net) -> CorrectionOutput:
    """Full correction for a batch: evaluate the coefficient nets on the two
    loss inputs and blend. `beta_net` may be a CoefficientNet or a fixed
    float in [0, 1]."""
    y, y_hat, y_tilde_prev = as_f64(y), as_f64(y_hat), as_f64(y_tilde_prev)
    squeeze = y.ndim == 1
    if squeeze:
        y, y_hat, y_tilde_prev = y[np.newaxis], y_hat[np.newaxis], y_tilde_prev[np.newaxis]
    l_alpha, l_beta = corrector_inputs(y, y_hat, y_tilde_prev)
    alpha = alpha_net.forward(l_alpha)
    if isinstance(beta_net, CoefficientNet):
        beta = beta_net.forward(l_beta)
    else:
        beta = np.full(y.shape[0], float(beta_net))
    y_tilde = blend_labels(y, y_hat, y_tilde_prev, alpha, beta)
    if squeeze:
        return CorrectionOutput(y_tilde[0], alpha[0], beta[0], l_alpha[0], l_beta[0])
    return CorrectionOutput(y_tilde, alpha, beta, l_alpha, l_beta)


def hard_label(y: Array):
    """Argmax class of a soft label; ties break toward the lowest index.
    Accepts (c,) or (n, c)."""
    y = as_f64(y)
    return int(np.argmax(y)) if y.ndim == 1 else np.argmax(y, axis=-1)


class PseudoLabelStore:
    """Per-sample persistent records of the latest prediction and the most
    recent corrected label, keyed by stable dataset index.

    Single-writer: the training loop owns updates; reads between steps are
    safe.
    """

    def __init__(self, n_samples: int, n_classes: int):
        self.y_hat = np.zeros((n_samples, n_classes))
        self.y_tilde_prev = np.zeros((n_samples, n_classes))
        self.last_updated_step = np.full(n_samples, -1, dtype=np.int64)

    def __len__(self) -> int:
        return self.y_hat.shape[0]

    @property
    def n_classes(self) -> int:
        return self.y_hat.shape[1]

    @staticmethod
    def from_predictions(probs: Array, step: int = 0) -> "PseudoLabelStore":
        """Seed every record with the same prediction for both slots, as done
        at the end of warm-up."""
        probs = as_f64(probs)
        store = PseudoLabelStore(probs.shape[0], probs.shape[1])
        store.y_hat[...] = probs
        store.y_tilde_prev[...] = probs
        store.last_updated_step[...] = step
        return store

    def _check_indices(self, indices) -> Array:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= len(self)):
            bad = indices[(indices < 0) | (indices >= len(self))][0]
            raise IndexError(f"unknown dataset index {bad} (store covers 0..{len(self) - 1})")
        return indices

    def read(self, indices):
        indices = self._check_indices(indices)
        return self.y_hat[indices], self.y_tilde_prev[indices]

    def update(self, indices, y_hat_new: Array, y_tilde_new: Array, step: int) -> None:
        indices = self._check_indices(indices)
        y_hat_new, y_tilde_new = as_f64(y_hat_new), as_f64(y_tilde_new)
        if y_hat_new.shape != (indices.size, self.n_classes):
            raise DimensionError(
                f"y_hat batch has shape {y_hat_new.shape}, expected ({indices.size}, {self.n_classes})")
        if y_tilde_new.shape != y_hat_new.shape:
            raise DimensionError("y_tilde batch shape does not match y_hat batch")
        self.y_hat[indices] = y_hat_new
        self.y_tilde_prev[indices] = y_tilde_new
        self.last_updated_step[indices] = step


@dataclass
class CorrectorSnapshot:
    """Epoch-boundary view of the correction state for every training sample.

    For runs (or epochs) without an active corrector the coefficient columns
    are NaN and the corrected labels equal the observed labels.
    """
    epoch: int
    true_labels: Array
    observed_labels: Array
    corrected_hard: Array
    alpha: Array
    beta: Array
    l_alpha: Array
    l_beta: Array

    @property
    def has_coefficients(self) -> bool:
        return bool(np.isfinite(self.alpha).any())


def snapshot_from_store(epoch: int, store: PseudoLabelStore, observed_onehot: Array,
                        true_labels: Array, observed_labels: Array,
                        alpha_net: CoefficientNet | None, beta_net) -> CorrectorSnapshot:
    """Evaluate the coefficient nets on the whole store at an epoch boundary."""
    l_alpha, l_beta = corrector_inputs(observed_onehot, store.y_hat, store.y_tilde_prev)
    n = len(store)
    if alpha_net is not None:
        alpha = alpha_net.forward(l_alpha)
    else:
        alpha = np.full(n, np.nan)
    if isinstance(beta_net, CoefficientNet):
        beta = beta_net.forward(l_beta)
    elif beta_net is not None:
        beta = np.full(n, float(beta_net))
    else:
        beta = np.full(n, np.nan)
    return CorrectorSnapshot(
        epoch=epoch,
        true_labels=np.asarray(true_labels, dtype=np.int64),
        observed_labels=np.asarray(observed_labels, dtype=np.int64),
        corrected_hard=np.asarray(hard_label(store.y_tilde_prev), dtype=np.int64),
        alpha=alpha, beta=beta, l_alpha=l_alpha, l_beta=l_beta)


def snapshot_uncorrected(epoch: int, true_labels: Array, observed_labels: Array) -> CorrectorSnapshot:
    """Snapshot for warm-up epochs and baselines that never correct: the
    corrected label is the observed label."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    observed_labels = np.asarray(observed_labels, dtype=np.int64)
    n = true_labels.shape[0]
    nan = np.full(n, np.nan)
    return CorrectorSnapshot(epoch, true_labels, observed_labels,
                             observed_labels.copy(), nan, nan.copy(), nan.copy(), nan.copy())


SNAPSHOT_COLUMNS = ("index", "true_label", "observed_label", "corrected_label",
                    "alpha", "beta", "l_alpha", "l_beta")


def write_snapshot_csv(snapshot: CorrectorSnapshot, path) -> None:
    """Tabular per-sample export; NaN coefficient columns are left blank."""
    def cell(v):
        return "" if isinstance(v, float) and np.isnan(v) else repr(v)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SNAPSHOT_COLUMNS)
        for i in range(snapshot.true_labels.shape[0]):
            writer.writerow([
                i,
                int(snapshot.true_labels[i]),
                int(snapshot.observed_labels[i]),
                int(snapshot.corrected_hard[i]),
                cell(float(snapshot.alpha[i])),
                cell(float(snapshot.beta[i])),
                cell(float(snapshot.l_alpha[i])),
                cell(float(snapshot.l_beta[i])),
            ])


def read_snapshot_csv(path) -> CorrectorSnapshot:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SNAPSHOT_COLUMNS:
            raise ValueError(f"unexpected snapshot header {header}")
        rows = list(reader)
    n = len(rows)
    true_labels = np.empty(n, dtype=np.int64)
    observed = np.empty(n, dtype=np.int64)
    corrected = np.empty(n, dtype=np.int64)
    alpha = np.empty(n)
    beta = np.empty(n)
    l_alpha = np.empty(n)
    l_beta = np.empty(n)
    for row in rows:
        i = int(row[0])
        true_labels[i] = int(row[1])
        observed[i] = int(row[2])
        corrected[i] = int(row[3])
        alpha[i] = float(row[4]) if row[4] else np.nan
        beta[i] = float(row[5]) if row[5] else np.nan
        l_alpha[i] = float(row[6]) if row[6] else np.nan
        l_beta[i] = float(row[7]) if row[7] else np.nan
    return CorrectorSnapshot(-1, true_labels, observed, corrected, alpha, beta, l_alpha, l_beta)

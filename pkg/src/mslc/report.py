"""Metrics computation and artifact emission.

A RunReport is one per-epoch record list plus summary statistics following
the usual reporting conventions for noisy-label experiments: "best" is the
running maximum of test accuracy, "last" the mean over the final five
epochs. Emitted files are deterministic functions of the run manifest.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corrector import CorrectorSnapshot, PseudoLabelStore, hard_label, write_snapshot_csv
from .errors import MslcError
from .models import save_checkpoint
from .nn import Array
from .noise import empirical_transition

LAST_WINDOW = 5

CURVE_NAMES = ("test_accuracy", "corrected_label_accuracy", "clean_subset_accuracy",
               "noisy_subset_accuracy", "alpha_clean_mean", "alpha_noisy_mean", "beta_mean")


def corrected_label_accuracy(store: PseudoLabelStore, true_labels) -> float:
    """Fraction of training samples whose hard corrected label matches the
    ground truth."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    return float(np.mean(hard_label(store.y_tilde_prev) == true_labels))


def split_accuracy(store: PseudoLabelStore, true_labels, corruption_mask):
    """Corrected-label accuracy restricted to the clean and noisy subsets."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    corruption_mask = np.asarray(corruption_mask, dtype=bool)
    hard = hard_label(store.y_tilde_prev)
    correct = hard == true_labels
    clean = float(correct[~corruption_mask].mean()) if (~corruption_mask).any() else None
    noisy = float(correct[corruption_mask].mean()) if corruption_mask.any() else None
    return clean, noisy


def confusion(true_labels, predicted_labels, n_classes: int) -> Array:
    """Row-normalized confusion matrix; same estimator as the empirical
    noise-transition matrix."""
    matrix, _ = empirical_transition(true_labels, predicted_labels, n_classes)
    return matrix


def alpha_separation(snapshot: CorrectorSnapshot, corruption_mask):
    """(mean alpha on clean, mean alpha on noisy, gap) for one snapshot."""
    corruption_mask = np.asarray(corruption_mask, dtype=bool)
    alpha = snapshot.alpha
    if not np.isfinite(alpha).any():
        return None, None, None
    clean = float(alpha[~corruption_mask].mean()) if (~corruption_mask).any() else None
    noisy = float(alpha[corruption_mask].mean()) if corruption_mask.any() else None
    gap = clean - noisy if clean is not None and noisy is not None else None
    return clean, noisy, gap


def _snapshot_metrics(snapshot: CorrectorSnapshot, mask, n_classes: int) -> dict:
    mask = np.asarray(mask, dtype=bool)
    correct = snapshot.corrected_hard == snapshot.true_labels
    clean = float(correct[~mask].mean()) if (~mask).any() else None
    noisy = float(correct[mask].mean()) if mask.any() else None
    alpha_clean, alpha_noisy, _ = alpha_separation(snapshot, mask)
    beta_mean = float(np.nanmean(snapshot.beta)) if np.isfinite(snapshot.beta).any() else None
    return {
        "corrected_label_accuracy": float(correct.mean()),
        "clean_subset_accuracy": clean,
        "noisy_subset_accuracy": noisy,
        "alpha_clean_mean": alpha_clean,
        "alpha_noisy_mean": alpha_noisy,
        "beta_mean": beta_mean,
        "confusion_observed": confusion(snapshot.true_labels, snapshot.observed_labels,
                                        n_classes).tolist(),
        "confusion_corrected": confusion(snapshot.true_labels, snapshot.corrected_hard,
                                         n_classes).tolist(),
    }


@dataclass
class EpochRecord:
    epoch: int
    test_accuracy: float
    best_accuracy: float
    last5_accuracy: float
    corrected_label_accuracy: float
    clean_subset_accuracy: float | None
    noisy_subset_accuracy: float | None
    alpha_clean_mean: float | None
    alpha_noisy_mean: float | None
    beta_mean: float | None
    confusion_observed: list
    confusion_corrected: list

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunReport:
    method: str
    n_classes: int
    manifest_hash: str = ""
    data_hash: str = ""
    records: list = field(default_factory=list)

    def add_epoch(self, epoch: int, test_accuracy: float,
                  snapshot: CorrectorSnapshot, corruption_mask) -> EpochRecord:
        best = max([test_accuracy] + [r.test_accuracy for r in self.records])
        window = [r.test_accuracy for r in self.records[-(LAST_WINDOW - 1):]] + [test_accuracy]
        metrics = _snapshot_metrics(snapshot, corruption_mask, self.n_classes)
        record = EpochRecord(epoch=epoch, test_accuracy=float(test_accuracy),
                             best_accuracy=float(best),
                             last5_accuracy=float(np.mean(window)), **metrics)
        self.records.append(record)
        return record

    @property
    def best_accuracy(self) -> float:
        return self.records[-1].best_accuracy

    @property
    def last_accuracy(self) -> float:
        """Mean test accuracy over the final five epochs (fewer if the run
        was shorter; summary() flags that case)."""
        window = [r.test_accuracy for r in self.records[-LAST_WINDOW:]]
        return float(np.mean(window))

    def summary(self) -> dict:
        if not self.records:
            raise MslcError("report has no epochs")
        final = self.records[-1]
        return {
            "epochs": len(self.records),
            "best_accuracy": self.best_accuracy,
            "last_accuracy": self.last_accuracy,
            "last_window": min(LAST_WINDOW, len(self.records)),
            "last_window_truncated": len(self.records) < LAST_WINDOW,
            "final_test_accuracy": final.test_accuracy,
            "final_corrected_label_accuracy": final.corrected_label_accuracy,
            "final_clean_subset_accuracy": final.clean_subset_accuracy,
            "final_noisy_subset_accuracy": final.noisy_subset_accuracy,
            "final_alpha_clean_mean": final.alpha_clean_mean,
            "final_alpha_noisy_mean": final.alpha_noisy_mean,
            "final_beta_mean": final.beta_mean,
        }

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "method": self.method,
            "n_classes": self.n_classes,
            "manifest_hash": self.manifest_hash,
            "data_hash": self.data_hash,
            "epochs": [r.to_dict() for r in self.records],
            "summary": self.summary(),
        }


def _hash_tag(manifest_hash: str) -> str:
    return manifest_hash[:12] if manifest_hash else "local"


def report_json_text(report: RunReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"


def emit(report: RunReport, directory) -> list:
    """Write the machine-readable report plus one flat CSV per curve.
    Filenames embed the run manifest hash. Returns the written paths."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        tag = _hash_tag(report.manifest_hash)
        paths = []
        report_path = directory / f"report_{tag}.json"
        report_path.write_text(report_json_text(report))
        paths.append(report_path)
        for name in CURVE_NAMES:
            curve_path = directory / f"curve_{name}_{tag}.csv"
            with open(curve_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["epoch", name])
                for r in report.records:
                    value = getattr(r, name)
                    writer.writerow([r.epoch, "" if value is None else repr(value)])
            paths.append(curve_path)
        return paths
    except OSError as exc:
        raise MslcError(f"cannot write report to {directory}: {exc}") from exc


def load_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


class RunWriter:
    """Per-epoch emission callback for the training loop: rewrites the
    report, exports store snapshots and saves checkpoints."""

    def __init__(self, directory, snapshot_every: int = 1, checkpoint_every: int = 0):
        self.directory = Path(directory)
        self.snapshot_every = snapshot_every
        self.checkpoint_every = checkpoint_every
        (self.directory / "snapshots").mkdir(parents=True, exist_ok=True)
        (self.directory / "checkpoints").mkdir(parents=True, exist_ok=True)

    def on_epoch(self, payload: dict) -> None:
        report: RunReport = payload["report"]
        tag = _hash_tag(report.manifest_hash)
        epoch = payload["epoch"]
        emit(report, self.directory)
        if self.snapshot_every and epoch % self.snapshot_every == 0:
            snap_path = self.directory / "snapshots" / f"snapshot_epoch{epoch:04d}_{tag}.csv"
            write_snapshot_csv(payload["snapshot"], snap_path)
        want_ckpt = self.checkpoint_every and (epoch + 1) % self.checkpoint_every == 0
        if want_ckpt:
            save_checkpoint(payload["classifier"],
                            self.directory / "checkpoints" / f"classifier_{tag}.npz")
            if payload["alpha_net"] is not None:
                save_checkpoint(payload["alpha_net"],
                                self.directory / "checkpoints" / f"alpha_{tag}.npz")
            beta = payload["beta_net"]
            if hasattr(beta, "params"):
                save_checkpoint(beta, self.directory / "checkpoints" / f"beta_{tag}.npz")
